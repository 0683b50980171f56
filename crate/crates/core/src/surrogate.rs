//! Learned channel surrogates: condition windows, scaling, CGAN and FCNN
//! training, and waveform generation.
//!
//! A sample pair is built per symbol: the condition is the launch waveform
//! over `past + current + future` symbols, the target is the channel output
//! over the current symbol. Complex samples are flattened re/im interleaved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::binio::{len_u32, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::nncore::{self, AdamConfig, AdamState, Matrix, MlpParams, MlpSpec};
use crate::seeds;
use crate::sigproc::ComplexSignal;

const MODEL_MAGIC: &[u8; 4] = b"FGNN";
const MODEL_VERSION: u32 = 1;

/// Rows per generator call during inference.
const GENERATE_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGeometry {
    pub past_symbols: usize,
    pub current_symbols: usize,
    pub future_symbols: usize,
    pub sps: usize,
}

impl Default for WindowGeometry {
    fn default() -> Self {
        Self {
            past_symbols: 10,
            current_symbols: 1,
            future_symbols: 10,
            sps: 4,
        }
    }
}

impl WindowGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.sps == 0 || self.current_symbols == 0 {
            return Err(Error::Config("window needs sps >= 1 and at least one current symbol".into()));
        }
        Ok(())
    }

    pub fn window_symbols(&self) -> usize {
        self.past_symbols + self.current_symbols + self.future_symbols
    }

    pub fn condition_dim(&self) -> usize {
        2 * self.sps * self.window_symbols()
    }

    pub fn current_dim(&self) -> usize {
        2 * self.sps * self.current_symbols
    }

    /// Symbol indices with a complete window in a block of `n_symbols`.
    pub fn valid_range(&self, n_symbols: usize) -> std::ops::Range<usize> {
        let end = n_symbols.saturating_sub(self.future_symbols + self.current_symbols - 1);
        self.past_symbols..end.max(self.past_symbols)
    }

    fn check_index(&self, index: usize, n_samples: usize) -> Result<()> {
        let symbols = n_samples / self.sps;
        if !self.valid_range(symbols).contains(&index) {
            return Err(Error::WindowOutOfRange {
                index,
                past: self.past_symbols,
                future: self.future_symbols,
                symbols,
            });
        }
        Ok(())
    }
}

fn push_interleaved(out: &mut Vec<f64>, samples: &[Complex64]) {
    for s in samples {
        out.push(s.re);
        out.push(s.im);
    }
}

fn condition_into(out: &mut Vec<f64>, tx: &[Complex64], index: usize, g: &WindowGeometry) {
    let start = (index - g.past_symbols) * g.sps;
    push_interleaved(out, &tx[start..start + g.window_symbols() * g.sps]);
}

fn target_into(out: &mut Vec<f64>, rx: &[Complex64], index: usize, g: &WindowGeometry) {
    let start = index * g.sps;
    push_interleaved(out, &rx[start..start + g.current_symbols * g.sps]);
}

/// Launch-waveform window around symbol `index`: past, current and future
/// samples in time order, re/im interleaved.
pub fn build_condition(tx: &ComplexSignal, symbol_index: usize, geometry: &WindowGeometry) -> Result<Vec<f64>> {
    geometry.validate()?;
    geometry.check_index(symbol_index, tx.len())?;
    let mut out = Vec::with_capacity(geometry.condition_dim());
    condition_into(&mut out, tx.samples(), symbol_index, geometry);
    Ok(out)
}

/// Channel-output samples of the current symbol, re/im interleaved.
pub fn build_target(rx: &ComplexSignal, symbol_index: usize, geometry: &WindowGeometry) -> Result<Vec<f64>> {
    geometry.validate()?;
    geometry.check_index(symbol_index, rx.len())?;
    let mut out = Vec::with_capacity(geometry.current_dim());
    target_into(&mut out, rx.samples(), symbol_index, geometry);
    Ok(out)
}

/// Aligned condition and target rows for the given symbol indices.
pub fn build_pairs(
    tx: &ComplexSignal,
    rx: &ComplexSignal,
    indices: impl IntoIterator<Item = usize>,
    geometry: &WindowGeometry,
) -> Result<(Matrix, Matrix)> {
    geometry.validate()?;
    if tx.len() != rx.len() {
        return Err(Error::InputShape(format!("tx has {} samples, rx has {}", tx.len(), rx.len())));
    }
    let mut cond = Vec::new();
    let mut target = Vec::new();
    let mut rows = 0;
    for k in indices {
        geometry.check_index(k, tx.len())?;
        condition_into(&mut cond, tx.samples(), k, geometry);
        target_into(&mut target, rx.samples(), k, geometry);
        rows += 1;
    }
    Ok((
        Matrix::from_vec(rows, geometry.condition_dim(), cond)?,
        Matrix::from_vec(rows, geometry.current_dim(), target)?,
    ))
}

/// Global affine map `x ↦ (x − offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaler {
    pub scale: f64,
    pub offset: f64,
}

impl Scaler {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.offset
    }

    pub fn apply_matrix(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = self.apply(*v));
        out
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0 && self.offset.is_finite()) {
            return Err(Error::Config(format!("invalid scaler {self:?}")));
        }
        Ok(())
    }
}

/// Max-abs scaler over every component of conditions and targets.
pub fn fit_scaler(conditions: &Matrix, targets: &Matrix) -> Result<Scaler> {
    if conditions.as_slice().is_empty() && targets.as_slice().is_empty() {
        return Err(Error::DegenerateInput("no training data to fit a scaler".into()));
    }
    let scale = conditions
        .as_slice()
        .iter()
        .chain(targets.as_slice())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateInput(format!("training data max magnitude is {scale}")));
    }
    Ok(Scaler { scale, offset: 0.0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CganConfig {
    pub noise_dim: usize,
    pub geometry: WindowGeometry,
    pub epochs: usize,
    pub batch_size: usize,
    pub real_label_range: (f64, f64),
    pub fake_label_range: (f64, f64),
    pub d_steps_per_g_step: usize,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    pub leaky_slope: f64,
    /// Epochs between checkpoint callbacks; 0 disables them.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for CganConfig {
    fn default() -> Self {
        Self {
            noise_dim: 10,
            geometry: WindowGeometry::default(),
            epochs: 2000,
            batch_size: 64,
            real_label_range: (0.7, 1.2),
            fake_label_range: (0.0, 0.3),
            d_steps_per_g_step: 1,
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            leaky_slope: MlpSpec::DEFAULT_LEAKY_SLOPE,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl CganConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.noise_dim == 0 {
            return Err(Error::Config("noise_dim must be >= 1".into()));
        }
        if self.batch_size == 0 || self.d_steps_per_g_step == 0 {
            return Err(Error::Config("batch size and D steps per G step must be >= 1".into()));
        }
        if !ordered(self.real_label_range) || !ordered(self.fake_label_range) {
            return Err(Error::Config("label ranges must be ordered finite intervals".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config(format!("invalid leaky slope {}", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> MlpSpec {
        MlpSpec::generator(self.noise_dim + self.geometry.condition_dim(), self.geometry.current_dim())
            .with_leaky_slope(self.leaky_slope)
    }

    pub fn discriminator_spec(&self) -> MlpSpec {
        MlpSpec::discriminator(self.geometry.condition_dim() + self.geometry.current_dim())
            .with_leaky_slope(self.leaky_slope)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Cgan,
    Fcnn,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Cgan => "cgan",
            ModelKind::Fcnn => "fcnn",
        }
    }
}

/// A trained surrogate. FCNN models carry no discriminator and read zeros in
/// the noise slots of the generator input.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    pub generator_spec: MlpSpec,
    pub generator: MlpParams,
    pub discriminator: Option<(MlpSpec, MlpParams)>,
    pub scaler: Scaler,
    pub geometry: WindowGeometry,
    pub noise_dim: usize,
}

impl SurrogateModel {
    pub fn kind(&self) -> ModelKind {
        if self.discriminator.is_some() {
            ModelKind::Cgan
        } else {
            ModelKind::Fcnn
        }
    }

    fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.scaler.validate()?;
        self.generator.check(&self.generator_spec)?;
        let g_in = self.noise_dim + self.geometry.condition_dim();
        if self.generator_spec.input_width() != g_in || self.generator_spec.output_width() != self.geometry.current_dim() {
            return Err(Error::Config(format!(
                "generator is {}→{} but the window needs {}→{}",
                self.generator_spec.input_width(),
                self.generator_spec.output_width(),
                g_in,
                self.geometry.current_dim()
            )));
        }
        if let Some((spec, params)) = &self.discriminator {
            params.check(spec)?;
            let d_in = self.geometry.condition_dim() + self.geometry.current_dim();
            if spec.input_width() != d_in || spec.output_width() != 1 {
                return Err(Error::Config(format!(
                    "discriminator is {}→{} but the window needs {d_in}→1",
                    spec.input_width(),
                    spec.output_width()
                )));
            }
        }
        Ok(())
    }

    /// Generator outputs in physical units for raw (unscaled) conditions.
    /// Row `r` draws its noise from stream `first_stream + r` of `noise_seed`,
    /// so results do not depend on chunking or thread count.
    pub fn generate(&self, conditions: &Matrix, noise_seed: u64, first_stream: u64) -> Result<Matrix> {
        if conditions.cols() != self.geometry.condition_dim() {
            return Err(Error::InputShape(format!(
                "condition width {} but model expects {}",
                conditions.cols(),
                self.geometry.condition_dim()
            )));
        }
        let rows = conditions.rows();
        let out_dim = self.geometry.current_dim();
        let starts: Vec<usize> = (0..rows).step_by(GENERATE_CHUNK).collect();
        let chunks: Result<Vec<Vec<f64>>> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + GENERATE_CHUNK).min(rows);
                let input = self.generator_input(conditions, start..end, noise_seed, first_stream)?;
                let mut y = nncore::predict(&self.generator, &self.generator_spec, &input)?.into_vec();
                y.iter_mut().for_each(|v| *v = self.scaler.invert(*v));
                Ok(y)
            })
            .collect();
        let data: Vec<f64> = chunks?.into_iter().flatten().collect();
        Matrix::from_vec(rows, out_dim, data)
    }

    /// Raw tanh-domain generator outputs, before inverse scaling.
    pub fn generate_scaled(&self, conditions: &Matrix, noise_seed: u64, first_stream: u64) -> Result<Matrix> {
        let input = self.generator_input(conditions, 0..conditions.rows(), noise_seed, first_stream)?;
        nncore::predict(&self.generator, &self.generator_spec, &input)
    }

    fn generator_input(
        &self,
        conditions: &Matrix,
        rows: std::ops::Range<usize>,
        noise_seed: u64,
        first_stream: u64,
    ) -> Result<Matrix> {
        let width = self.noise_dim + conditions.cols();
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows.clone() {
            match self.kind() {
                ModelKind::Cgan => {
                    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
                    rng.set_stream(first_stream + r as u64);
                    data.extend((0..self.noise_dim).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
                }
                ModelKind::Fcnn => data.extend(std::iter::repeat_n(0.0, self.noise_dim)),
            }
            data.extend(conditions.row(r).iter().map(|&v| self.scaler.apply(v)));
        }
        Matrix::from_vec(rows.len(), width, data)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        self.validate()?;
        let mut w = LeWriter::new(out);
        w.bytes(MODEL_MAGIC)?;
        w.u32(MODEL_VERSION)?;
        nncore::write_network(&mut w, Some((&self.generator_spec, &self.generator)))?;
        nncore::write_network(&mut w, self.discriminator.as_ref().map(|(s, p)| (s, p)))?;
        w.f64(self.scaler.scale)?;
        w.f64(self.scaler.offset)?;
        let g = &self.geometry;
        for v in [g.past_symbols, g.current_symbols, g.future_symbols, g.sps, self.noise_dim] {
            w.u32(len_u32(v)?)?;
        }
        w.into_inner().flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader::new(input);
        if &r.array::<4>()? != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let (generator_spec, generator) =
            nncore::read_network(&mut r)?.ok_or_else(|| Error::Format("model has no generator".into()))?;
        let discriminator = nncore::read_network(&mut r)?;
        let scaler = Scaler {
            scale: r.f64()?,
            offset: r.f64()?,
        };
        let geometry = WindowGeometry {
            past_symbols: r.u32()? as usize,
            current_symbols: r.u32()? as usize,
            future_symbols: r.u32()? as usize,
            sps: r.u32()? as usize,
        };
        let noise_dim = r.u32()? as usize;
        r.expect_end()?;
        let model = Self {
            generator_spec,
            generator,
            discriminator,
            scaler,
            geometry,
            noise_dim,
        };
        model.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean discriminator BCE; NaN for FCNN training.
    pub discriminator: f64,
    /// Mean generator loss: adversarial BCE for CGAN, MSE for FCNN.
    pub generator: f64,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: SurrogateModel,
    pub losses: Vec<EpochLoss>,
}

fn check_pairs(conditions: &Matrix, targets: &Matrix, cfg: &CganConfig) -> Result<()> {
    cfg.validate()?;
    let g = &cfg.geometry;
    if conditions.cols() != g.condition_dim() || targets.cols() != g.current_dim() {
        return Err(Error::InputShape(format!(
            "pairs are {}/{} wide, geometry needs {}/{}",
            conditions.cols(),
            targets.cols(),
            g.condition_dim(),
            g.current_dim()
        )));
    }
    if conditions.rows() != targets.rows() {
        return Err(Error::InputShape(format!(
            "{} conditions for {} targets",
            conditions.rows(),
            targets.rows()
        )));
    }
    if conditions.rows() < cfg.batch_size {
        return Err(Error::Config(format!(
            "{} training pairs do not fill one batch of {}",
            conditions.rows(),
            cfg.batch_size
        )));
    }
    Ok(())
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut *rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

fn uniform_labels(rng: &mut ChaCha8Rng, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n).map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect()
}

fn batches(order: &[usize], batch: usize) -> impl Iterator<Item = &[usize]> {
    // A trailing partial batch is dropped so every update sees the same batch size.
    order.chunks_exact(batch)
}

/// Adversarial training. Per batch: `d_steps_per_g_step` discriminator
/// updates on real and generated pairs with smoothed labels, then one
/// generator update pushing D(condition ⊕ G(noise, condition)) toward 1.
pub fn train_cgan(conditions: &Matrix, targets: &Matrix, cfg: &CganConfig) -> Result<Trained> {
    train_cgan_with(conditions, targets, cfg, |_, _| Ok(()))
}

/// [`train_cgan`] with a callback every `checkpoint_every` epochs.
pub fn train_cgan_with<F>(conditions: &Matrix, targets: &Matrix, cfg: &CganConfig, mut checkpoint: F) -> Result<Trained>
where
    F: FnMut(usize, &SurrogateModel) -> Result<()>,
{
    check_pairs(conditions, targets, cfg)?;
    let scaler = fit_scaler(conditions, targets)?;
    let cond = scaler.apply_matrix(conditions);
    let real = scaler.apply_matrix(targets);
    let g_spec = cfg.generator_spec();
    let d_spec = cfg.discriminator_spec();
    let mut model = SurrogateModel {
        generator: nncore::init_params(&g_spec, seeds::derive(cfg.seed, seeds::INIT_G, 0))?,
        discriminator: Some((d_spec.clone(), nncore::init_params(&d_spec, seeds::derive(cfg.seed, seeds::INIT_D, 0))?)),
        generator_spec: g_spec.clone(),
        scaler,
        geometry: cfg.geometry,
        noise_dim: cfg.noise_dim,
    };
    let mut g_adam = AdamState::new(&g_spec, cfg.generator_adam);
    let mut d_adam = AdamState::new(&d_spec, cfg.discriminator_adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::TRAIN, 0));
    let mut order: Vec<usize> = (0..cond.rows()).collect();
    let b = cfg.batch_size;
    let cdim = cfg.geometry.condition_dim();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut d_sum, mut g_sum, mut count) = (0.0, 0.0, 0usize);
        for idx in batches(&order, b) {
            let c = cond.select_rows(idx);
            let x = real.select_rows(idx);
            let (d_spec, d_params) = model.discriminator.as_mut().expect("CGAN has a discriminator");

            let mut d_loss = 0.0;
            for _ in 0..cfg.d_steps_per_g_step {
                let z = gaussian_matrix(&mut rng, b, cfg.noise_dim);
                let fake = nncore::predict(&model.generator, &g_spec, &z.hcat(&c)?)?;
                let d_in = c.hcat(&x)?.vcat(&c.hcat(&fake)?)?;
                let mut labels = uniform_labels(&mut rng, b, cfg.real_label_range);
                labels.extend(uniform_labels(&mut rng, b, cfg.fake_label_range));
                let (out, cache) = nncore::forward(d_params, d_spec, &d_in)?;
                let (loss, grad) = nncore::bce_loss(out.as_slice(), &labels)?;
                let grads = nncore::backward_with(d_params, d_spec, &cache, &Matrix::from_vec(2 * b, 1, grad)?, true, false)?;
                nncore::adam_step(d_params, &grads.params, &mut d_adam)?;
                d_loss += loss / cfg.d_steps_per_g_step as f64;
            }

            let z = gaussian_matrix(&mut rng, b, cfg.noise_dim);
            let (fake, g_cache) = nncore::forward(&model.generator, &g_spec, &z.hcat(&c)?)?;
            let (d_out, d_cache) = nncore::forward(d_params, d_spec, &c.hcat(&fake)?)?;
            let (g_loss, grad) = nncore::bce_loss(d_out.as_slice(), &vec![1.0; b])?;
            let d_grads = nncore::backward_with(d_params, d_spec, &d_cache, &Matrix::from_vec(b, 1, grad)?, false, true)?;
            let fake_grad = d_grads.input.columns(cdim, d_grads.input.cols());
            let g_grads = nncore::backward_with(&model.generator, &g_spec, &g_cache, &fake_grad, true, false)?;
            nncore::adam_step(&mut model.generator, &g_grads.params, &mut g_adam)?;

            d_sum += d_loss;
            g_sum += g_loss;
            count += 1;
        }
        let entry = EpochLoss {
            epoch,
            discriminator: d_sum / count as f64,
            generator: g_sum / count as f64,
        };
        if !entry.discriminator.is_finite() {
            return Err(Error::TrainingDiverged { epoch, what: "discriminator loss" });
        }
        if !entry.generator.is_finite() || !model.generator.is_finite() {
            return Err(Error::TrainingDiverged { epoch, what: "generator loss" });
        }
        losses.push(entry);
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            checkpoint(epoch + 1, &model)?;
        }
    }
    Ok(Trained { model, losses })
}

/// Deterministic baseline: the generator architecture trained on MSE with
/// its noise inputs held at zero.
pub fn train_fcnn(conditions: &Matrix, targets: &Matrix, cfg: &CganConfig) -> Result<Trained> {
    check_pairs(conditions, targets, cfg)?;
    let scaler = fit_scaler(conditions, targets)?;
    let cond = scaler.apply_matrix(conditions);
    let real = scaler.apply_matrix(targets);
    let spec = cfg.generator_spec();
    let mut model = SurrogateModel {
        generator: nncore::init_params(&spec, seeds::derive(cfg.seed, seeds::INIT_G, 0))?,
        discriminator: None,
        generator_spec: spec.clone(),
        scaler,
        geometry: cfg.geometry,
        noise_dim: cfg.noise_dim,
    };
    let mut adam = AdamState::new(&spec, cfg.generator_adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, seeds::TRAIN, 0));
    let mut order: Vec<usize> = (0..cond.rows()).collect();
    let b = cfg.batch_size;
    let zeros = Matrix::zeros(b, cfg.noise_dim);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in batches(&order, b) {
            let input = zeros.hcat(&cond.select_rows(idx))?;
            let target = real.select_rows(idx);
            let (out, cache) = nncore::forward(&model.generator, &spec, &input)?;
            let (loss, grad) = nncore::mse_loss(out.as_slice(), target.as_slice())?;
            let grads = nncore::backward_with(
                &model.generator,
                &spec,
                &cache,
                &Matrix::from_vec(b, out.cols(), grad)?,
                true,
                false,
            )?;
            nncore::adam_step(&mut model.generator, &grads.params, &mut adam)?;
            sum += loss;
            count += 1;
        }
        let mse = sum / count as f64;
        if !mse.is_finite() || !model.generator.is_finite() {
            return Err(Error::TrainingDiverged { epoch, what: "MSE loss" });
        }
        losses.push(EpochLoss {
            epoch,
            discriminator: f64::NAN,
            generator: mse,
        });
    }
    Ok(Trained { model, losses })
}

/// Surrogate channel output for one block. Symbols without a complete window
/// are left at zero; callers exclude them from every metric.
pub fn generate_channel_output(model: &SurrogateModel, tx: &ComplexSignal, seed: u64) -> Result<ComplexSignal> {
    let g = &model.geometry;
    if !tx.len().is_multiple_of(g.sps) {
        return Err(Error::InputShape(format!(
            "{} samples is not a whole number of {}-sample symbols",
            tx.len(),
            g.sps
        )));
    }
    let range = g.valid_range(tx.len() / g.sps);
    if range.is_empty() {
        return Err(Error::InputShape(format!(
            "{} samples is shorter than one {}-symbol window",
            tx.len(),
            g.window_symbols()
        )));
    }
    let mut cond = Vec::with_capacity(range.len() * g.condition_dim());
    for k in range.clone() {
        condition_into(&mut cond, tx.samples(), k, g);
    }
    let cond = Matrix::from_vec(range.len(), g.condition_dim(), cond)?;
    let y = model.generate(&cond, seed, range.start as u64)?;
    let mut out = vec![Complex64::new(0.0, 0.0); tx.len()];
    let per_row = g.current_symbols * g.sps;
    for (r, k) in range.enumerate() {
        let row = y.row(r);
        for j in 0..per_row {
            out[k * g.sps + j] = Complex64::new(row[2 * j], row[2 * j + 1]);
        }
    }
    tx.with_samples(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> ComplexSignal {
        ComplexSignal::new((0..n).map(|k| Complex64::new(k as f64, -(k as f64) - 0.5)).collect(), 1.0).unwrap()
    }

    #[test]
    fn geometry_dimensions() {
        let g = WindowGeometry::default();
        assert_eq!(g.condition_dim(), 168);
        assert_eq!(g.current_dim(), 8);
        let cfg = CganConfig::default();
        assert_eq!(cfg.generator_spec().input_width(), 178);
        assert_eq!(cfg.discriminator_spec().input_width(), 176);
        assert_eq!(g.valid_range(100), 10..90);
        assert!(g.valid_range(15).is_empty());
    }

    #[test]
    fn condition_layout_and_shift() {
        let g = WindowGeometry::default();
        let tx = ramp(4 * 64);
        let a = build_condition(&tx, 20, &g).unwrap();
        assert_eq!(a.len(), 168);
        assert_eq!((a[0], a[1]), (40.0, -40.5));
        let b = build_condition(&tx, 21, &g).unwrap();
        assert_eq!(&a[8..], &b[..160]);
        let only = WindowGeometry {
            past_symbols: 0,
            future_symbols: 0,
            ..g
        };
        assert_eq!(build_condition(&tx, 0, &only).unwrap().len(), 8);
        assert!(matches!(build_condition(&tx, 9, &g), Err(Error::WindowOutOfRange { .. })));
        assert!(matches!(build_condition(&tx, 54, &g), Err(Error::WindowOutOfRange { .. })));
        assert!(build_condition(&tx, 53, &g).is_ok());
    }

    #[test]
    fn targets_partition_the_interior() {
        let g = WindowGeometry::default();
        let rx = ramp(4 * 40);
        let mut joined = Vec::new();
        for k in g.valid_range(40) {
            let t = build_target(&rx, k, &g).unwrap();
            assert_eq!(t.len(), 8);
            joined.extend(t);
        }
        let mut want = Vec::new();
        push_interleaved(&mut want, &rx.samples()[40..120]);
        assert_eq!(joined, want);
        let zero = ComplexSignal::new(vec![Complex64::new(0.0, 0.0); 160], 1.0).unwrap();
        assert!(build_target(&zero, 15, &g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaler_fit_and_round_trip() {
        let c = Matrix::from_rows(&[[1.0, -5.0], [2.0, 3.0]]).unwrap();
        let t = Matrix::from_rows(&[[4.0], [-1.0]]).unwrap();
        let s = fit_scaler(&c, &t).unwrap();
        assert_eq!(s, Scaler { scale: 5.0, offset: 0.0 });
        assert_eq!(s.apply(-5.0), -1.0);
        assert_eq!(s.apply(5.0), 1.0);
        for x in [0.3, -4.9, 1e-7, 123.456] {
            assert!((s.invert(s.apply(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let z = Matrix::zeros(2, 2);
        assert!(matches!(fit_scaler(&z, &Matrix::zeros(2, 1)), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn config_validation() {
        assert!(CganConfig::default().validate().is_ok());
        let bad = CganConfig {
            real_label_range: (1.2, 0.7),
            ..CganConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CganConfig {
            noise_dim: 0,
            ..CganConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
