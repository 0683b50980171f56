//! `fibergan` command line: simulate, train, generate, evaluate, bench.
//!
//! Settings come from an optional TOML file (`--config`) and are overridden
//! by flags. Every command prints its effective configuration, and file
//! outputs get a `<output>.config.toml` sidecar holding the same text.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiberchan::{FiberParams, NoiseConfig};
use crate::harness::{self, Dataset, DatasetMeta, EvalReport};
use crate::nncore::AdamConfig;
use crate::rxdsp::DspMode;
use crate::sigproc::{self, TxConfig};
use crate::surrogate::{self, CganConfig, ModelKind, SurrogateModel, WindowGeometry};

/// Environment variable capping the worker count (0 or unset = automatic).
pub const THREADS_ENV: &str = "FIBERGAN_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub symbols: usize,
    pub block_symbols: usize,
    pub seed: u64,
    /// Defaults to max(16, past + future).
    pub edge_symbols: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            symbols: 100_000,
            block_symbols: 1024,
            seed: 1,
            edge_symbols: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub past_symbols: usize,
    pub current_symbols: usize,
    pub future_symbols: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        let g = WindowGeometry::default();
        Self {
            past_symbols: g.past_symbols,
            current_symbols: g.current_symbols,
            future_symbols: g.future_symbols,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub noise_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub d_steps_per_g_step: usize,
    pub real_label_range: [f64; 2],
    pub fake_label_range: [f64; 2],
    pub leaky_slope: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub max_pairs: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = CganConfig::default();
        Self {
            noise_dim: c.noise_dim,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr_generator: c.generator_adam.lr,
            lr_discriminator: c.discriminator_adam.lr,
            beta1: c.generator_adam.beta1,
            beta2: c.generator_adam.beta2,
            epsilon: c.generator_adam.epsilon,
            d_steps_per_g_step: c.d_steps_per_g_step,
            real_label_range: [c.real_label_range.0, c.real_label_range.1],
            fake_label_range: [c.fake_label_range.0, c.fake_label_range.1],
            leaky_slope: c.leaky_slope,
            checkpoint_every: c.checkpoint_every,
            seed: c.seed,
            max_pairs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspSection {
    pub dbp_steps_per_km: f64,
}

impl Default for DspSection {
    fn default() -> Self {
        Self { dbp_steps_per_km: 100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub distances_km: Vec<f64>,
    pub repeats: usize,
    pub block_samples: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            distances_km: vec![20.0, 40.0, 60.0, 80.0],
            repeats: 3,
            block_samples: 4096,
        }
    }
}

/// Every tunable of the pipeline in one place.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tx: TxConfig,
    pub fiber: FiberParams,
    pub noise: NoiseConfig,
    pub dataset: DatasetSection,
    pub window: WindowSection,
    pub train: TrainSection,
    pub dsp: DspSection,
    pub bench: BenchSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn geometry(&self) -> WindowGeometry {
        WindowGeometry {
            past_symbols: self.window.past_symbols,
            current_symbols: self.window.current_symbols,
            future_symbols: self.window.future_symbols,
            sps: self.tx.sps,
        }
    }

    pub fn dataset_meta(&self) -> DatasetMeta {
        DatasetMeta {
            block_symbols: self.dataset.block_symbols,
            edge_symbols: self
                .dataset
                .edge_symbols
                .unwrap_or_else(|| harness::default_edge_symbols(&self.geometry())),
            ..DatasetMeta::new(self.tx.clone(), self.fiber.clone(), self.noise, self.dataset.symbols, self.dataset.seed)
        }
    }

    pub fn cgan_config(&self) -> CganConfig {
        let t = &self.train;
        let adam = |lr| AdamConfig {
            lr,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        };
        CganConfig {
            noise_dim: t.noise_dim,
            geometry: self.geometry(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            real_label_range: (t.real_label_range[0], t.real_label_range[1]),
            fake_label_range: (t.fake_label_range[0], t.fake_label_range[1]),
            d_steps_per_g_step: t.d_steps_per_g_step,
            generator_adam: adam(t.lr_generator),
            discriminator_adam: adam(t.lr_discriminator),
            leaky_slope: t.leaky_slope,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fibergan", version, about = "Fiber channel simulation and learned channel surrogates")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a split-step dataset.
    Simulate(SimulateArgs),
    /// Train a CGAN or FCNN surrogate on a dataset.
    Train(TrainArgs),
    /// Replace a dataset's rx waveforms with surrogate output.
    Generate(GenerateArgs),
    /// Run identical receiver DSP on SSFM and surrogate data and report BER.
    Evaluate(EvaluateArgs),
    /// Time the split-step channel against surrogate inference.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub distance_km: Option<f64>,
    #[arg(long)]
    pub symbols: Option<usize>,
    #[arg(long)]
    pub power_dbm: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "no_noise")]
    pub noise_snr_db: Option<f64>,
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub step_km: Option<f64>,
    #[arg(long)]
    pub block_symbols: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Cgan,
    Fcnn,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss trace; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_pairs: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DspChoice {
    None,
    Cd,
    Dbp,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ssfm: PathBuf,
    /// Surrogate dataset; repeat for several (one report row each).
    #[arg(long, required = true)]
    pub gen: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "cd")]
    pub dsp: DspChoice,
    #[arg(long)]
    pub dbp_steps_per_km: Option<f64>,
    #[arg(long)]
    pub report: PathBuf,
    /// Writes one constellation CSV per receiver mode and data source.
    #[arg(long)]
    pub constellations_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated distances in km.
    #[arg(long, value_delimiter = ',')]
    pub distances: Option<Vec<f64>>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub block_samples: Option<usize>,
    /// Timing CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Applies `FIBERGAN_THREADS` to the global worker pool.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV}='{v}' is not a non-negative integer")))?;
    if n > 0 {
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => simulate(&mut cfg, a),
        Command::Train(a) => train(&mut cfg, a),
        Command::Generate(a) => generate(&cfg, a),
        Command::Evaluate(a) => evaluate(&mut cfg, a),
        Command::Bench(a) => bench(&mut cfg, a),
    }
}

fn echo(cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    let text = cfg.to_toml()?;
    println!("# effective configuration\n{text}");
    if let Some(p) = out {
        fs::write(sidecar(p, "config.toml"), &text)?;
    }
    Ok(text)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(cfg: &mut RunConfig, a: SimulateArgs) -> Result<()> {
    if let Some(v) = a.distance_km {
        cfg.fiber.length_km = v;
    }
    if let Some(v) = a.symbols {
        cfg.dataset.symbols = v;
    }
    if let Some(v) = a.power_dbm {
        cfg.tx.launch_power_dbm = v;
    }
    if let Some(v) = a.seed {
        cfg.dataset.seed = v;
    }
    if let Some(v) = a.noise_snr_db {
        cfg.noise.enabled = true;
        cfg.noise.snr_db = v;
    }
    if a.no_noise {
        cfg.noise.enabled = false;
    }
    if let Some(v) = a.noise_seed {
        cfg.noise.seed = v;
    }
    if let Some(v) = a.step_km {
        cfg.fiber.step_km = v;
    }
    if let Some(v) = a.block_symbols {
        cfg.dataset.block_symbols = v;
    }
    let mut meta = cfg.dataset_meta();
    let text = echo(cfg, Some(&a.out))?;
    meta.provenance = format!("{}\n{text}", harness::SSFM_PROVENANCE);
    let ds = harness::generate_dataset(&meta)?;
    ds.save(&a.out)?;
    let samples: usize = ds.blocks.iter().map(|b| b.tx.len()).sum();
    let energy: f64 = ds.blocks.iter().map(|b| b.tx.energy()).sum();
    println!("symbols: {}", meta.n_symbols);
    println!("blocks: {}", ds.blocks.len());
    println!("tx samples: {samples}");
    println!("mean launch power: {:.6} dBm", sigproc::watts_to_dbm(energy / samples as f64));
    println!("split steps per block: {}", meta.fiber.step_count());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn train(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if a.max_pairs.is_some() {
        cfg.train.max_pairs = a.max_pairs;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    let ds = Dataset::load(&a.data)?;
    // The window follows the data's oversampling.
    cfg.tx = ds.meta.tx.clone();
    echo(cfg, Some(&a.out))?;
    let tc = cfg.cgan_config();
    let (c, t) = harness::training_pairs(&ds, &tc.geometry, cfg.train.max_pairs)?;
    println!("training pairs: {}", c.rows());
    let trained = match a.model {
        ModelChoice::Cgan => {
            let out = a.out.clone();
            surrogate::train_cgan_with(&c, &t, &tc, |epoch, model| {
                let p = sidecar(&out, &format!("ckpt-{epoch}"));
                model.save(&p)?;
                println!("checkpoint {}", p.display());
                Ok(())
            })?
        }
        ModelChoice::Fcnn => surrogate::train_fcnn(&c, &t, &tc)?,
    };
    trained.model.save(&a.out)?;
    let loss_path = a.loss_csv.unwrap_or_else(|| sidecar(&a.out, "loss.csv"));
    let mut csv = String::from("epoch,discriminator_loss,generator_loss\n");
    for l in &trained.losses {
        csv.push_str(&format!("{},{},{}\n", l.epoch + 1, l.discriminator, l.generator));
    }
    fs::write(&loss_path, csv)?;
    if let Some(last) = trained.losses.last() {
        println!(
            "final epoch {}: discriminator {:.6} generator {:.6}",
            last.epoch + 1,
            last.discriminator,
            last.generator
        );
    }
    println!("wrote {} and {}", a.out.display(), loss_path.display());
    Ok(())
}

fn generate(cfg: &RunConfig, a: GenerateArgs) -> Result<()> {
    let model = SurrogateModel::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    echo(cfg, Some(&a.out))?;
    let provenance = format!(
        "surrogate kind={} model={} seed={}",
        model.kind().label(),
        a.model.display(),
        a.seed
    );
    let out = ds.with_surrogate_rx(&model, a.seed, provenance)?;
    out.save(&a.out)?;
    println!("model kind: {}", model.kind().label());
    println!("blocks: {}", out.blocks.len());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn dsp_mode(choice: DspChoice, steps_per_km: f64) -> DspMode {
    match choice {
        DspChoice::None => DspMode::None,
        DspChoice::Cd => DspMode::CdOnly,
        DspChoice::Dbp => DspMode::Dbp { steps_per_km },
    }
}

/// `cgan`, `fcnn` or `ssfm`, read from a dataset's provenance.
fn source_label(ds: &Dataset) -> &'static str {
    let p = &ds.meta.provenance;
    if p.starts_with("surrogate kind=cgan") {
        ModelKind::Cgan.label()
    } else if p.starts_with("surrogate kind=fcnn") {
        ModelKind::Fcnn.label()
    } else if p.starts_with("surrogate") {
        "surrogate"
    } else {
        "ssfm"
    }
}

fn evaluate(cfg: &mut RunConfig, a: EvaluateArgs) -> Result<()> {
    if let Some(v) = a.dbp_steps_per_km {
        cfg.dsp.dbp_steps_per_km = v;
    }
    echo(cfg, Some(&a.report))?;
    let mode = dsp_mode(a.dsp, cfg.dsp.dbp_steps_per_km);
    let ssfm = Dataset::load(&a.ssfm)?;
    let gens = a.gen.iter().map(|p| Dataset::load(p)).collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::default();
    for (path, g) in a.gen.iter().zip(&gens) {
        let row = harness::evaluate_pair(&ssfm, g, mode)?;
        println!(
            "{} [{}]: ber_ssfm {:e} ber_surrogate {:e} delta {:e} over {} bits",
            path.display(),
            mode,
            row.ber_ssfm,
            row.ber_surrogate,
            row.delta_ber,
            row.total_bits
        );
        report.rows.push(row);
    }
    report.save(&a.report)?;
    println!("wrote {}", a.report.display());

    if let Some(dir) = a.constellations_dir {
        fs::create_dir_all(&dir)?;
        let mut sources: Vec<(String, &Dataset)> = vec![("ssfm".to_string(), &ssfm)];
        for (i, g) in gens.iter().enumerate() {
            let label = source_label(g);
            let taken = sources.iter().any(|(l, _)| l == label);
            sources.push((if taken { format!("{label}{i}") } else { label.to_string() }, g));
        }
        for choice in [DspChoice::None, DspChoice::Cd, DspChoice::Dbp] {
            let m = dsp_mode(choice, cfg.dsp.dbp_steps_per_km);
            for (label, ds) in &sources {
                let symbols: Vec<_> = harness::receive_dataset(ds, m)?
                    .into_iter()
                    .flat_map(|o| o.constellation)
                    .collect();
                let stage = format!("{}_{label}", m.label());
                let path = dir.join(format!("{stage}.csv"));
                harness::export_constellation(&symbols, &stage, &path)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn bench(cfg: &mut RunConfig, a: BenchArgs) -> Result<()> {
    if let Some(v) = a.distances {
        cfg.bench.distances_km = v;
    }
    if let Some(v) = a.repeats {
        cfg.bench.repeats = v;
    }
    if let Some(v) = a.block_samples {
        cfg.bench.block_samples = v;
    }
    echo(cfg, a.out.as_deref())?;
    let model = SurrogateModel::load(&a.model)?;
    let table = harness::bench_runtime(
        &cfg.bench.distances_km,
        &cfg.tx,
        &cfg.fiber,
        &model,
        cfg.bench.repeats,
        cfg.bench.block_samples,
    )?;
    match &a.out {
        Some(p) => {
            table.write_csv(std::io::BufWriter::new(fs::File::create(p)?))?;
            println!("wrote {}", p.display());
        }
        None => table.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}
