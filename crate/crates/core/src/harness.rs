//! Dataset generation, evaluation and benchmarking around the channel models.
//!
//! A dataset is a sequence of independent blocks. Each block is transmitted,
//! propagated and stored on its own; the symbols nearest the block ends are
//! excluded from training pairs and bit counts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::binio::{len_u32, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::fiberchan::{self, FiberParams, NoiseConfig};
use crate::nncore::Matrix;
use crate::rxdsp::{self, DspMode, RxOutcome};
use crate::seeds;
use crate::sigproc::{self, BitErrors, ComplexSignal, TxConfig};
use crate::surrogate::{self, SurrogateModel, WindowGeometry};

const DATASET_MAGIC: &[u8; 4] = b"FGDS";
const DATASET_VERSION: u32 = 1;

/// Provenance tag of datasets produced by the split-step channel.
pub const SSFM_PROVENANCE: &str = "ssfm";

/// Wall-clock reference values for the full-scale setup (80 km SSFM versus
/// one surrogate pass). Recorded alongside benchmarks, never asserted.
pub const REFERENCE_SSFM_80KM_S: f64 = 459.0;
pub const REFERENCE_SURROGATE_S: (f64, f64) = (2.0, 3.0);

/// Symbols discarded at each block end: enough for the condition window and
/// never fewer than 16.
pub fn default_edge_symbols(geometry: &WindowGeometry) -> usize {
    16.max(geometry.past_symbols + geometry.future_symbols)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub tx: TxConfig,
    pub fiber: FiberParams,
    pub noise: NoiseConfig,
    pub n_symbols: usize,
    pub block_symbols: usize,
    pub seed: u64,
    pub edge_symbols: usize,
    /// Free text naming what produced the rx waveforms.
    pub provenance: String,
}

impl DatasetMeta {
    pub fn new(tx: TxConfig, fiber: FiberParams, noise: NoiseConfig, n_symbols: usize, seed: u64) -> Self {
        Self {
            tx,
            fiber,
            noise,
            n_symbols,
            block_symbols: 1024,
            seed,
            edge_symbols: default_edge_symbols(&WindowGeometry::default()),
            provenance: SSFM_PROVENANCE.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tx.validate()?;
        self.fiber.validate()?;
        self.noise.validate()?;
        let block_samples = self.block_symbols * self.tx.sps;
        if !block_samples.is_power_of_two() {
            return Err(Error::Config(format!(
                "block of {} symbols is {block_samples} samples, not a power of two",
                self.block_symbols
            )));
        }
        if self.n_symbols < self.block_symbols {
            return Err(Error::Config(format!(
                "{} symbols do not fill one {}-symbol block",
                self.n_symbols, self.block_symbols
            )));
        }
        let min_block = 2 * self.edge_symbols + rxdsp::MIN_ALIGN_SYMBOLS;
        if self.block_lengths().iter().any(|&n| n < min_block) {
            return Err(Error::Config(format!(
                "every block needs at least {min_block} symbols with {} edge symbols per end",
                self.edge_symbols
            )));
        }
        Ok(())
    }

    /// Symbols per block; only the last block may be shorter.
    pub fn block_lengths(&self) -> Vec<usize> {
        if self.block_symbols == 0 {
            return Vec::new();
        }
        let full = self.n_symbols / self.block_symbols;
        let mut lens = vec![self.block_symbols; full];
        if !self.n_symbols.is_multiple_of(self.block_symbols) {
            lens.push(self.n_symbols % self.block_symbols);
        }
        lens
    }

    pub fn block_bits(&self, block: usize) -> Vec<u8> {
        let n = self.block_lengths()[block];
        sigproc::random_bits(4 * n, seeds::derive(self.seed, seeds::BITS, block as u64))
    }

    fn block_noise(&self, block: usize) -> NoiseConfig {
        NoiseConfig {
            seed: seeds::derive(self.noise.seed, seeds::NOISE, block as u64),
            ..self.noise
        }
    }

    /// Bits counted per evaluation: interior symbols of every block.
    pub fn evaluated_bits(&self) -> u64 {
        self.block_lengths().iter().map(|&n| 4 * (n - 2 * self.edge_symbols) as u64).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub tx: ComplexSignal,
    pub rx: ComplexSignal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub blocks: Vec<Block>,
}

/// Launch waveform of one block, shaped on its own.
pub fn block_launch(meta: &DatasetMeta, block: usize) -> Result<ComplexSignal> {
    let symbols = sigproc::map_bits_to_qam16(&meta.block_bits(block))?;
    sigproc::transmit(&symbols, &meta.tx)
}

/// Split-step propagation of one launch waveform, zero-padded to a power of
/// two and cut back, then AWGN if enabled.
pub fn propagate_block(tx: &ComplexSignal, fiber: &FiberParams, noise: &NoiseConfig) -> Result<ComplexSignal> {
    let rx = fiberchan::propagate_ssfm(&tx.padded_to_pow2(), fiber, &NoiseConfig::off())?.truncated(tx.len());
    if noise.enabled {
        fiberchan::add_awgn(&rx, noise.snr_db, noise.seed)
    } else {
        Ok(rx)
    }
}

/// Seeded bits, transmitter, split-step channel; blocks run in parallel with
/// per-block derived seeds, so the result does not depend on thread count.
pub fn generate_dataset(meta: &DatasetMeta) -> Result<Dataset> {
    meta.validate()?;
    let blocks = (0..meta.block_lengths().len())
        .into_par_iter()
        .map(|b| {
            let tx = block_launch(meta, b)?;
            let rx = propagate_block(&tx, &meta.fiber, &meta.block_noise(b))?;
            Ok(Block { tx, rx })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: meta.clone(),
        blocks,
    })
}

/// Reruns only the noise of block `block` with a different noise seed.
pub fn rerun_block_noise(meta: &DatasetMeta, block: usize, noise_seed: u64) -> Result<ComplexSignal> {
    let tx = block_launch(meta, block)?;
    let noise = NoiseConfig {
        seed: noise_seed,
        ..meta.noise
    };
    propagate_block(&tx, &meta.fiber, &noise)
}

fn write_samples<W: Write>(w: &mut LeWriter<W>, s: &[Complex64]) -> Result<()> {
    for c in s {
        w.f64(c.re)?;
        w.f64(c.im)?;
    }
    Ok(())
}

fn read_samples<R: Read>(r: &mut LeReader<R>, n: usize) -> Result<Vec<Complex64>> {
    let flat = r.f64s(2 * n)?;
    Ok(flat.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

impl Dataset {
    pub fn sample_rate_hz(&self) -> f64 {
        self.meta.tx.sample_rate_hz()
    }

    /// Interior symbol indices of block `b`.
    pub fn interior(&self, b: usize) -> std::ops::Range<usize> {
        let n = self.blocks[b].tx.len() / self.meta.tx.sps;
        self.meta.edge_symbols..n - self.meta.edge_symbols
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let m = &self.meta;
        let mut w = LeWriter::new(out);
        w.bytes(DATASET_MAGIC)?;
        w.u32(DATASET_VERSION)?;
        w.f64(m.tx.symbol_rate_baud)?;
        w.u32(len_u32(m.tx.sps)?)?;
        w.f64(m.tx.rolloff)?;
        w.u32(len_u32(m.tx.rrc_span_symbols)?)?;
        w.f64(m.tx.launch_power_dbm)?;
        let f = &m.fiber;
        for v in [f.length_km, f.step_km, f.dispersion_ps_nm_km, f.gamma_per_w_km, f.alpha_db_km, f.wavelength_nm] {
            w.f64(v)?;
        }
        w.u32(u32::from(m.noise.enabled))?;
        w.f64(m.noise.snr_db)?;
        w.u64(m.noise.seed)?;
        w.u64(m.n_symbols as u64)?;
        w.u32(len_u32(m.block_symbols)?)?;
        w.u64(m.seed)?;
        w.u32(len_u32(m.edge_symbols)?)?;
        w.string(&m.provenance)?;
        w.u32(len_u32(self.blocks.len())?)?;
        for b in &self.blocks {
            if b.tx.len() != b.rx.len() {
                return Err(Error::InputShape("block tx and rx lengths differ".into()));
            }
            w.u64(b.tx.len() as u64)?;
            write_samples(&mut w, b.tx.samples())?;
            write_samples(&mut w, b.rx.samples())?;
        }
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader::new(input);
        if &r.array::<4>()? != DATASET_MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let tx = TxConfig {
            symbol_rate_baud: r.f64()?,
            sps: r.u32()? as usize,
            rolloff: r.f64()?,
            rrc_span_symbols: r.u32()? as usize,
            launch_power_dbm: r.f64()?,
        };
        let fiber = FiberParams {
            length_km: r.f64()?,
            step_km: r.f64()?,
            dispersion_ps_nm_km: r.f64()?,
            gamma_per_w_km: r.f64()?,
            alpha_db_km: r.f64()?,
            wavelength_nm: r.f64()?,
        };
        let noise = NoiseConfig {
            enabled: match r.u32()? {
                0 => false,
                1 => true,
                v => return Err(Error::Format(format!("bad noise flag {v}"))),
            },
            snr_db: r.f64()?,
            seed: r.u64()?,
        };
        let meta = DatasetMeta {
            tx,
            fiber,
            noise,
            n_symbols: r.u64()? as usize,
            block_symbols: r.u32()? as usize,
            seed: r.u64()?,
            edge_symbols: r.u32()? as usize,
            provenance: r.string()?,
        };
        meta.validate().map_err(|e| Error::Format(e.to_string()))?;
        let lens = meta.block_lengths();
        let count = r.u32()? as usize;
        if count != lens.len() {
            return Err(Error::Format(format!("{count} blocks stored, metadata implies {}", lens.len())));
        }
        let fs = meta.tx.sample_rate_hz();
        let mut blocks = Vec::with_capacity(count);
        for &symbols in &lens {
            let n = r.u64()? as usize;
            if n != symbols * meta.tx.sps {
                return Err(Error::Format(format!("block has {n} samples, expected {}", symbols * meta.tx.sps)));
            }
            let tx = ComplexSignal::new(read_samples(&mut r, n)?, fs).map_err(|e| Error::Format(e.to_string()))?;
            let rx = ComplexSignal::new(read_samples(&mut r, n)?, fs).map_err(|e| Error::Format(e.to_string()))?;
            blocks.push(Block { tx, rx });
        }
        r.expect_end()?;
        Ok(Self { meta, blocks })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Same launch waveforms with the rx side produced by a surrogate.
    /// Block `b` uses noise seed `derive(seed, NOISE, b)`.
    pub fn with_surrogate_rx(&self, model: &SurrogateModel, seed: u64, provenance: String) -> Result<Dataset> {
        if model.geometry.sps != self.meta.tx.sps {
            return Err(Error::Config(format!(
                "model expects {} samples per symbol, dataset has {}",
                model.geometry.sps, self.meta.tx.sps
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(b, blk)| {
                let rx = surrogate::generate_channel_output(model, &blk.tx, seeds::derive(seed, seeds::NOISE, b as u64))?;
                Ok(Block { tx: blk.tx.clone(), rx })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            meta: DatasetMeta {
                provenance,
                ..self.meta.clone()
            },
            blocks,
        })
    }
}

/// Condition/target rows over interior symbols, block by block, stopping
/// after `max_pairs` rows when given.
pub fn training_pairs(dataset: &Dataset, geometry: &WindowGeometry, max_pairs: Option<usize>) -> Result<(Matrix, Matrix)> {
    if geometry.sps != dataset.meta.tx.sps {
        return Err(Error::Config(format!(
            "window uses {} samples per symbol, dataset has {}",
            geometry.sps, dataset.meta.tx.sps
        )));
    }
    let limit = max_pairs.unwrap_or(usize::MAX);
    let mut conds = Vec::new();
    let mut targets = Vec::new();
    let mut taken = 0;
    for (b, blk) in dataset.blocks.iter().enumerate() {
        if taken >= limit {
            break;
        }
        let valid = geometry.valid_range(blk.tx.len() / geometry.sps);
        let interior = dataset.interior(b);
        let lo = interior.start.max(valid.start);
        let hi = interior.end.min(valid.end);
        let n = hi.saturating_sub(lo).min(limit - taken);
        let (c, t) = surrogate::build_pairs(&blk.tx, &blk.rx, lo..lo + n, geometry)?;
        conds.push(c);
        targets.push(t);
        taken += n;
    }
    let stack = |ms: Vec<Matrix>, cols: usize| {
        let rows = ms.iter().map(Matrix::rows).sum();
        let data = ms.into_iter().flat_map(Matrix::into_vec).collect();
        Matrix::from_vec(rows, cols, data)
    };
    Ok((stack(conds, geometry.condition_dim())?, stack(targets, geometry.current_dim())?))
}

/// Receiver outcome per block for one rx stream.
pub fn receive_dataset(dataset: &Dataset, mode: DspMode) -> Result<Vec<RxOutcome>> {
    dataset
        .blocks
        .par_iter()
        .enumerate()
        .map(|(b, blk)| {
            rxdsp::run_rx_chain(
                &blk.rx,
                mode,
                &dataset.meta.tx,
                &dataset.meta.fiber,
                &dataset.meta.block_bits(b),
                dataset.meta.edge_symbols,
            )
        })
        .collect()
}

fn total_errors(outcomes: &[RxOutcome]) -> BitErrors {
    outcomes.iter().fold(BitErrors::from_counts(0, 0), |acc, o| acc.merge(o.errors))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub distance_km: f64,
    pub ber_ssfm: f64,
    pub ber_surrogate: f64,
    /// `ber_surrogate − ber_ssfm`.
    pub delta_ber: f64,
    pub err_ssfm: u64,
    pub err_surrogate: u64,
    pub total_bits: u64,
    /// NaN when not measured.
    pub t_ssfm_s: f64,
    pub t_surrogate_s: f64,
}

fn check_same_tx(a: &Dataset, b: &Dataset) -> Result<()> {
    let (ma, mb) = (&a.meta, &b.meta);
    let same_meta = ma.tx == mb.tx
        && ma.fiber == mb.fiber
        && ma.n_symbols == mb.n_symbols
        && ma.block_symbols == mb.block_symbols
        && ma.seed == mb.seed
        && ma.edge_symbols == mb.edge_symbols;
    if !same_meta {
        return Err(Error::Config("datasets were generated from different configurations".into()));
    }
    if a.blocks.len() != b.blocks.len() || a.blocks.iter().zip(&b.blocks).any(|(x, y)| x.tx != y.tx) {
        return Err(Error::InputShape("datasets do not share the same launch waveforms".into()));
    }
    Ok(())
}

/// Identical receiver DSP on both rx streams; counts cover interior symbols only.
pub fn evaluate_pair(ssfm: &Dataset, surrogate: &Dataset, mode: DspMode) -> Result<EvalRow> {
    check_same_tx(ssfm, surrogate)?;
    let a = total_errors(&receive_dataset(ssfm, mode)?);
    let b = total_errors(&receive_dataset(surrogate, mode)?);
    Ok(EvalRow {
        distance_km: ssfm.meta.fiber.length_km,
        ber_ssfm: a.ber,
        ber_surrogate: b.ber,
        delta_ber: b.ber - a.ber,
        err_ssfm: a.errors,
        err_surrogate: b.errors,
        total_bits: a.total,
        t_ssfm_s: f64::NAN,
        t_surrogate_s: f64::NAN,
    })
}

pub const REPORT_HEADER: &str =
    "distance_km,ber_ssfm,ber_surrogate,delta_ber,err_ssfm,err_surrogate,total_bits,t_ssfm_s,t_surrogate_s";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: usize) -> Result<T> {
    let f = field.ok_or_else(|| Error::Format(format!("report line {line}: missing field")))?;
    f.trim()
        .parse()
        .map_err(|_| Error::Format(format!("report line {line}: cannot parse '{f}'")))
}

impl EvalReport {
    /// Floats use the shortest representation that parses back to the same value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.distance_km,
                r.ber_ssfm,
                r.ber_surrogate,
                r.delta_ber,
                r.err_ssfm,
                r.err_surrogate,
                r.total_bits,
                r.t_ssfm_s,
                r.t_surrogate_s
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim_end() != REPORT_HEADER {
            return Err(Error::Format("report header missing or wrong".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let n = i + 2;
            let mut f = line.split(',');
            rows.push(EvalRow {
                distance_km: parse_field(f.next(), n)?,
                ber_ssfm: parse_field(f.next(), n)?,
                ber_surrogate: parse_field(f.next(), n)?,
                delta_ber: parse_field(f.next(), n)?,
                err_ssfm: parse_field(f.next(), n)?,
                err_surrogate: parse_field(f.next(), n)?,
                total_bits: parse_field(f.next(), n)?,
                t_ssfm_s: parse_field(f.next(), n)?,
                t_surrogate_s: parse_field(f.next(), n)?,
            });
            if f.next().is_some() {
                return Err(Error::Format(format!("report line {n}: too many fields")));
            }
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub distance_km: f64,
    pub ssfm_steps: usize,
    pub t_ssfm_s: f64,
    pub t_surrogate_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub block_samples: usize,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

pub const BENCH_HEADER: &str = "distance_km,ssfm_steps,t_ssfm_s,t_surrogate_s";

impl BenchTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# block_samples={} repeats={}", self.block_samples, self.repeats)?;
        writeln!(
            out,
            "# reference_ssfm_80km_s={REFERENCE_SSFM_80KM_S} reference_surrogate_s={}-{}",
            REFERENCE_SURROGATE_S.0, REFERENCE_SURROGATE_S.1
        )?;
        writeln!(out, "{BENCH_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.distance_km, r.ssfm_steps, r.t_ssfm_s, r.t_surrogate_s)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_it<T>(f: impl FnOnce() -> Result<T>) -> Result<f64> {
    let start = Instant::now();
    std::hint::black_box(f()?);
    Ok(start.elapsed().as_secs_f64())
}

/// Median wall time of the split-step channel and of one surrogate pass per
/// distance on a fixed `block_samples` waveform. Runs on a single worker.
pub fn bench_runtime(
    distances_km: &[f64],
    tx: &TxConfig,
    fiber: &FiberParams,
    model: &SurrogateModel,
    repeats: usize,
    block_samples: usize,
) -> Result<BenchTable> {
    if repeats < 3 {
        return Err(Error::Config(format!("need at least 3 repeats, got {repeats}")));
    }
    if distances_km.is_empty() || distances_km.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::Config("distances must be a non-empty list of non-negative values".into()));
    }
    if !block_samples.is_power_of_two() || !block_samples.is_multiple_of(tx.sps) {
        return Err(Error::Config(format!("block of {block_samples} samples is not a power of two")));
    }
    let meta = DatasetMeta {
        block_symbols: block_samples / tx.sps,
        ..DatasetMeta::new(tx.clone(), fiber.clone(), NoiseConfig::off(), block_samples / tx.sps, 0)
    };
    let launch = block_launch(&meta, 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build benchmark pool: {e}")))?;
    pool.install(|| {
        let fibers: Vec<FiberParams> = distances_km.iter().map(|&d| fiber.clone().with_length(d)).collect();
        // one untimed pass, then rounds that visit every distance so slow
        // phases of the machine hit all rows alike
        fiberchan::propagate_ssfm(&launch, &fibers[0], &NoiseConfig::off())?;
        surrogate::generate_channel_output(model, &launch, 0)?;
        let mut ts = vec![Vec::with_capacity(repeats); fibers.len()];
        let mut tg = vec![Vec::with_capacity(repeats); fibers.len()];
        for r in 0..repeats {
            for (i, f) in fibers.iter().enumerate() {
                ts[i].push(time_it(|| fiberchan::propagate_ssfm(&launch, f, &NoiseConfig::off()))?);
                tg[i].push(time_it(|| surrogate::generate_channel_output(model, &launch, r as u64))?);
            }
        }
        let rows = fibers
            .iter()
            .zip(ts.into_iter().zip(tg))
            .map(|(f, (ts, tg))| BenchRow {
                distance_km: f.length_km,
                ssfm_steps: f.step_count(),
                t_ssfm_s: median(ts),
                t_surrogate_s: median(tg),
            })
            .collect();
        Ok(BenchTable {
            block_samples,
            repeats,
            rows,
        })
    })
}

pub const CONSTELLATION_HEADER: &str = "stage,symbol_index,re,im";

/// One row per symbol, 17 significant digits.
pub fn export_constellation(symbols: &[Complex64], stage: &str, path: &Path) -> Result<()> {
    if symbols.is_empty() {
        return Err(Error::DegenerateInput("no symbols to export".into()));
    }
    if stage.contains([',', '\n']) {
        return Err(Error::Config(format!("stage label '{stage}' must not contain commas or newlines")));
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CONSTELLATION_HEADER}")?;
    for (k, s) in symbols.iter().enumerate() {
        writeln!(out, "{stage},{k},{:.16e},{:.16e}", s.re, s.im)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a constellation export back as `(stage, symbols)`.
pub fn import_constellation(path: &Path) -> Result<(String, Vec<Complex64>)> {
    let input = BufReader::new(File::open(path)?);
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != CONSTELLATION_HEADER {
        return Err(Error::Format("constellation header missing or wrong".into()));
    }
    let mut stage = String::new();
    let mut symbols = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let mut f = line.split(',');
        let s = f.next().unwrap_or_default();
        if i == 0 {
            stage = s.to_string();
        } else if s != stage {
            return Err(Error::Format(format!("line {n}: mixed stages")));
        }
        let k: usize = parse_field(f.next(), n)?;
        if k != symbols.len() {
            return Err(Error::Format(format!("line {n}: symbol index {k} out of sequence")));
        }
        symbols.push(Complex64::new(parse_field(f.next(), n)?, parse_field(f.next(), n)?));
    }
    Ok((stage, symbols))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_meta(length_km: f64, noise: NoiseConfig) -> DatasetMeta {
        DatasetMeta {
            block_symbols: 256,
            ..DatasetMeta::new(TxConfig::default(), FiberParams::default().with_length(length_km), noise, 620, 3)
        }
    }

    #[test]
    fn block_layout_and_evaluated_bits() {
        let m = small_meta(0.0, NoiseConfig::off());
        assert_eq!(m.block_lengths(), vec![256, 256, 108]);
        assert_eq!(m.evaluated_bits(), 4 * (216 + 216 + 68));
        let mut bad = m.clone();
        bad.block_symbols = 300;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut short = m.clone();
        short.n_symbols = 256 + 60;
        assert!(short.validate().is_err());
        assert_eq!(default_edge_symbols(&WindowGeometry::default()), 20);
    }

    #[test]
    fn zero_length_noise_free_is_identity() {
        let d = generate_dataset(&small_meta(0.0, NoiseConfig::off())).unwrap();
        assert_eq!(d.blocks.len(), 3);
        for b in &d.blocks {
            assert_eq!(b.tx, b.rx);
        }
        assert_eq!(d.blocks[2].tx.len(), 108 * 4);
    }

    #[test]
    fn self_evaluation_has_zero_delta() {
        let d = generate_dataset(&small_meta(5.0, NoiseConfig { snr_db: 14.0, ..NoiseConfig::default() })).unwrap();
        let row = evaluate_pair(&d, &d, DspMode::CdOnly).unwrap();
        assert_eq!(row.delta_ber, 0.0);
        assert_eq!(row.total_bits, d.meta.evaluated_bits());
        assert!(row.t_ssfm_s.is_nan());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
