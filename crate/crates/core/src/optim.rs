//! Optimizer step engines.
//!
//! * [`Adam`]: bias-corrected Adam, the dense baseline.
//! * [`AmsGrad`]: Adam with a running max of the second moment and the
//!   `m / sqrt(vhat + eps)` update, no bias correction.
//! * [`TopKAdam`]: Adam fed Top-K compressed gradients; the discarded mass is
//!   lost (no error feedback).
//! * [`TopKEfAdam`]: Adam fed Top-K compressed gradients with a dense error
//!   feedback accumulator.
//! * [`MicroAdam`]: the memory-efficient engine. Gradients plus the
//!   dequantized error are Top-K compressed into a sliding window, the
//!   remainder is re-quantized into a 4-bit error buffer, and both moments
//!   are recomputed from the window every step.
//! * [`MicroAdamAnalytical`]: the analysis form with a pluggable contractive
//!   compressor and unbiased error compressor, AMSGrad normalization, and an
//!   optional decoupled weight decay (the `microadamw` variant).

use rand::SeedableRng;

use crate::compress::{self, density_count, BlockLayout, SparseSelection};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::quantize::{
    dequantize, quant_params, quantize, QuantizedErrorBuffer, Rounding, DEFAULT_BITS,
    DEFAULT_BUCKET_SIZE,
};
use crate::window::GradientWindow;
use crate::SeededRng;

/// Optimizer hyperparameters. Defaults follow the usual Adam settings with a
/// window of 10 gradients at 1% density and 4-bit error feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Base step size; the run schedule may rescale it.
    pub lr: f64,
    /// Decoupled weight decay, used by `microadamw` only.
    pub weight_decay: f64,
    /// Sliding-window length `m`.
    pub window: usize,
    /// Fraction `k / d` of coordinates kept per step.
    pub density: f64,
    /// Error-feedback bit width.
    pub bits: u32,
    /// Top-K block length; `None` selects globally.
    pub block: Option<usize>,
    /// Quantization bucket length.
    pub bucket: usize,
    /// Rounding of the practical error buffer.
    pub rounding: Rounding,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr: 1e-3,
            weight_decay: 0.0,
            window: 10,
            density: 0.01,
            bits: DEFAULT_BITS,
            block: None,
            bucket: DEFAULT_BUCKET_SIZE,
            rounding: Rounding::Nearest,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::HyperParam(msg));
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name}={b} must be in (0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps={} must be positive", self.eps));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr={} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay={} must be >= 0", self.weight_decay));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density={} must be in (0, 1]", self.density));
        }
        if !(1..=16).contains(&self.bits) {
            return bad(format!("bits={} must be in 1..=16", self.bits));
        }
        if self.bucket == 0 {
            return bad("bucket must be at least 1".into());
        }
        Ok(())
    }
}

/// Top-K selection rule derived from the hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Global { k: usize, dim: usize },
    Blockwise(BlockLayout),
}

impl Selector {
    pub fn from_hyper(hp: &HyperParams, dim: usize) -> Result<Self> {
        match hp.block {
            None => {
                let k = density_count(hp.density, dim);
                if k == 0 {
                    return Err(Error::Empty);
                }
                Ok(Self::Global { k, dim })
            }
            Some(b) => Ok(Self::Blockwise(BlockLayout::new(dim, b, hp.density)?)),
        }
    }

    /// Coordinates selected per call.
    pub fn width(&self) -> usize {
        match self {
            Self::Global { k, .. } => *k,
            Self::Blockwise(layout) => layout.total_k(),
        }
    }

    pub fn select(&self, x: &[f64]) -> Result<SparseSelection> {
        match self {
            Self::Global { k, dim } => {
                check_dim(*dim, x.len())?;
                compress::topk_global(x, *k)
            }
            Self::Blockwise(layout) => compress::topk_blockwise(x, layout),
        }
    }
}

/// A `q`-contractive compressor `C`.
pub trait Contractive: Send {
    fn compress(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Worst-case contraction factor guaranteed for `dim`-vectors.
    fn q(&self, dim: usize) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCompressor;

impl Contractive for IdentityCompressor {
    fn compress(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn q(&self, _dim: usize) -> f64 {
        0.0
    }
}

impl Contractive for Selector {
    fn compress(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.select(x)?.embed())
    }

    fn q(&self, dim: usize) -> f64 {
        match self {
            Self::Global { k, .. } => crate::theory::topk_q(*k, dim).unwrap_or(1.0),
            Self::Blockwise(layout) => (0..layout.num_blocks())
                .map(|b| {
                    let len = layout.block_range(b).len();
                    crate::theory::topk_q(layout.block_k(b), len).unwrap_or(1.0)
                })
                .fold(0.0, f64::max),
        }
    }
}

/// An unbiased, `omega`-bounded error compressor `Q`.
pub trait ErrorCompressor: Send {
    fn compress(&mut self, x: &[f64]) -> Result<Vec<f64>>;

    /// Worst-case `omega` for `dim`-vectors.
    fn omega(&self, dim: usize) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityQuantizer;

impl ErrorCompressor for IdentityQuantizer {
    fn compress(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }

    fn omega(&self, _dim: usize) -> f64 {
        0.0
    }
}

/// Bucketed `b`-bit quantize/dequantize round trip with full-precision
/// bucket bounds.
#[derive(Debug, Clone)]
pub struct BucketQuantizer {
    pub bits: u32,
    pub bucket: usize,
    pub rounding: Rounding,
    rng: SeededRng,
}

impl BucketQuantizer {
    pub fn new(bits: u32, bucket: usize, rounding: Rounding, seed: u64) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::Bits(bits));
        }
        if bucket == 0 {
            return Err(Error::Layout("bucket size must be positive".into()));
        }
        Ok(Self {
            bits,
            bucket,
            rounding,
            rng: SeededRng::seed_from_u64(seed),
        })
    }
}

impl ErrorCompressor for BucketQuantizer {
    fn compress(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(x.len());
        for chunk in x.chunks(self.bucket) {
            let p = quant_params(chunk, self.bits)?;
            let codes = quantize(chunk, &p, self.rounding, &mut self.rng)?;
            out.extend(dequantize(&codes, &p)?);
        }
        Ok(out)
    }

    fn omega(&self, dim: usize) -> f64 {
        let n = self.bucket.min(dim);
        if n < 3 {
            // every coordinate of a 1- or 2-element bucket is an endpoint
            0.0
        } else {
            crate::theory::quantizer_omega_worst(self.bits, n).unwrap_or(f64::INFINITY)
        }
    }
}

/// Per-step diagnostics returned by every engine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    /// Norm of the error-feedback vector after the step.
    pub error_norm: f64,
    /// `‖a - C(a)‖ / ‖a‖` for the compressed accumulator, when defined.
    pub empirical_q: Option<f64>,
    /// Number of parameters changed by the step.
    pub update_nnz: usize,
    /// Largest entry of the second-moment normalizer, when tracked.
    pub vhat_max: Option<f64>,
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Steps taken so far.
    fn step_count(&self) -> u64;

    /// One update of `theta` in place from `grad` with step size `lr`.
    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<StepInfo>;
}

fn check_inputs(dim: usize, theta: &[f64], grad: &[f64]) -> Result<()> {
    check_dim(dim, theta.len())?;
    check_dim(dim, grad.len())?;
    check_finite(grad)
}

/// `m <- beta m + (1 - beta) g` (or `g^2`).
fn ema_update(m: &mut [f64], g: &[f64], beta: f64, square: bool) {
    for (mi, &gi) in m.iter_mut().zip(g) {
        let gi = if square { gi * gi } else { gi };
        *mi = beta * *mi + (1.0 - beta) * gi;
    }
}

fn count_changed(before: &[f64], after: &[f64]) -> usize {
    before.iter().zip(after).filter(|(a, b)| a != b).count()
}

fn max_entry(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct Adam {
    hp: HyperParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            hp,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        })
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn dim(&self) -> usize {
        self.m.len()
    }

    fn step_count(&self) -> u64 {
        self.t
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<StepInfo> {
        check_inputs(self.dim(), theta, grad)?;
        self.t += 1;
        ema_update(&mut self.m, grad, self.hp.beta1, false);
        ema_update(&mut self.v, grad, self.hp.beta2, true);
        let c1 = 1.0 - self.hp.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.hp.beta2.powi(self.t as i32);
        let before = theta.to_vec();
        for ((th, &m), &v) in theta.iter_mut().zip(&self.m).zip(&self.v) {
            *th -= lr * (m / c1) / (self.hp.eps + (v / c2).sqrt());
        }
        Ok(StepInfo {
            update_nnz: count_changed(&before, theta),
            vhat_max: Some(max_entry(&self.v) / c2),
            ..StepInfo::default()
        })
    }
}

/// AMSGrad with the `m / sqrt(vhat + eps)` update and no bias correction.
#[derive(Debug, Clone)]
pub struct AmsGrad {
    hp: HyperParams,
    m: Vec<f64>,
    v: Vec<f64>,
    vhat: Vec<f64>,
    t: u64,
}

impl AmsGrad {
    pub fn new(dim: usize, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            hp,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            vhat: vec![0.0; dim],
            t: 0,
        })
    }

    pub fn vhat(&self) -> &[f64] {
        &self.vhat
    }
}

/// `vhat <- max(vhat, v)`; `theta <- theta - lr m / sqrt(vhat + eps)`.
fn amsgrad_apply(theta: &mut [f64], m: &[f64], v: &[f64], vhat: &mut [f64], eps: f64, lr: f64) {
    for (vh, &vi) in vhat.iter_mut().zip(v) {
        *vh = vh.max(vi);
    }
    for ((th, &mi), &vh) in theta.iter_mut().zip(m).zip(vhat.iter()) {
        *th -= lr * mi / (vh + eps).sqrt();
    }
}

impl Optimizer for AmsGrad {
    fn name(&self) -> &'static str {
        "amsgrad"
    }

    fn dim(&self) -> usize {
        self.m.len()
    }

    fn step_count(&self) -> u64 {
        self.t
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<StepInfo> {
        check_inputs(self.dim(), theta, grad)?;
        self.t += 1;
        ema_update(&mut self.m, grad, self.hp.beta1, false);
        ema_update(&mut self.v, grad, self.hp.beta2, true);
        let before = theta.to_vec();
        amsgrad_apply(theta, &self.m, &self.v, &mut self.vhat, self.hp.eps, lr);
        Ok(StepInfo {
            update_nnz: count_changed(&before, theta),
            vhat_max: Some(max_entry(&self.vhat)),
            ..StepInfo::default()
        })
    }
}

/// Adam on `T_k(g)`; discarded coordinates are dropped for good.
#[derive(Debug, Clone)]
pub struct TopKAdam {
    adam: Adam,
    selector: Selector,
}

impl TopKAdam {
    pub fn new(dim: usize, hp: HyperParams) -> Result<Self> {
        let selector = Selector::from_hyper(&hp, dim)?;
        Ok(Self {
            adam: Adam::new(dim, hp)?,
            selector,
        })
    }
}

impl Optimizer for TopKAdam {
    fn name(&self) -> &'static str {
        "topk_adam"
    }

    fn dim(&self) -> usize {
        self.adam.dim()
    }

    fn step_count(&self) -> u64 {
        self.adam.t
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<StepInfo> {
        check_inputs(self.dim(), theta, grad)?;
        let sel = self.selector.select(grad)?;
        let empirical_q = compress::contraction_factor(grad, &sel).ok();
        let info = self.adam.step(theta, &sel.embed(), lr)?;
        Ok(StepInfo {
            empirical_q,
            ..info
        })
    }
}

/// Adam on `T_k(g + e)` with a dense error accumulator `e`.
#[derive(Debug, Clone)]
pub struct TopKEfAdam {
    adam: Adam,
    selector: Selector,
    error: Vec<f64>,
}

impl TopKEfAdam {
    pub fn new(dim: usize, hp: HyperParams) -> Result<Self> {
        let selector = Selector::from_hyper(&hp, dim)?;
        Ok(Self {
            adam: Adam::new(dim, hp)?,
            selector,
            error: vec![0.0; dim],
        })
    }

    pub fn error(&self) -> &[f64] {
        &self.error
    }
}

impl Optimizer for TopKEfAdam {
    fn name(&self) -> &'static str {
        "topk_ef_adam"
    }

    fn dim(&self) -> usize {
        self.adam.dim()
    }

    fn step_count(&self) -> u64 {
        self.adam.t
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<StepInfo> {
        check_inputs(self.dim(), theta, grad)?;
        let acc: Vec<f64> = grad.iter().zip(&self.error).map(|(g, e)| g + e).collect();
        let sel = self.selector.select(&acc)?;
        let empirical_q = compress::contraction_factor(&acc, &sel).ok();
        self.error = compress::zero_selected(&acc, &sel)?;
        let info = self.adam.step(theta, &sel.embed(), lr)?;
        Ok(StepInfo {
            error_norm: compress::norm(&self.error),
            empirical_q,
            ..info
        })
    }
}

/// Where the practical engine keeps its error feedback.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorStore {
    /// Packed `b`-bit codes with per-bucket bounds.
    Quantized {
        buffer: QuantizedErrorBuffer,
        rounding: Rounding,
    },
    /// Exact dense storage; used to isolate the compression path in tests.
    Dense(Vec<f64>),
}

impl ErrorStore {
    pub fn decode(&self) -> Vec<f64> {
        match self {
            Self::Quantized { buffer, .. } => buffer.decode(),
            Self::Dense(e) => e.clone(),
        }
    }

    fn store(&mut self, residual: Vec<f64>, rng: &mut SeededRng) -> Result<()> {
        match self {
            Self::Quantized { buffer, rounding } => buffer.store(&residual, *rounding, rng),
            Self::Dense(e) => {
                *e = residual;
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Quantized { buffer, .. } => buffer.dim(),
            Self::Dense(e) => e.len(),
        }
    }
}

/// Practical MicroAdam engine.
///
/// Per step: `a = g + Q^-1(e)`; `sel = TopK(|a|)`; `a[sel] = 0`;
/// `e = Q(a)` with fresh bucket bounds; `sel` enters the window; `m̂` and `v̂`
/// are recomputed from the window; `θ -= lr m̂ / (eps + sqrt(v̂))`.
#[derive(Debug, Clone)]
pub struct MicroAdam {
    hp: HyperParams,
    selector: Selector,
    window: GradientWindow,
    error: ErrorStore,
    rng: SeededRng,
    last_selection: Option<SparseSelection>,
}

impl MicroAdam {
    /// Engine with a quantized error buffer.
    pub fn new(dim: usize, hp: HyperParams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let error = ErrorStore::Quantized {
            buffer: QuantizedErrorBuffer::zeros(dim, hp.bits, hp.bucket)?,
            rounding: hp.rounding,
        };
        Self::with_error_store(dim, hp, error, seed)
    }

    /// Engine whose error feedback is kept exactly.
    pub fn with_lossless_error(dim: usize, hp: HyperParams) -> Result<Self> {
        Self::with_error_store(dim, hp, ErrorStore::Dense(vec![0.0; dim]), 0)
    }

    pub fn with_error_store(
        dim: usize,
        hp: HyperParams,
        error: ErrorStore,
        seed: u64,
    ) -> Result<Self> {
        hp.validate()?;
        check_dim(dim, error.dim())?;
        let selector = Selector::from_hyper(&hp, dim)?;
        let window = GradientWindow::new(dim, hp.window, selector.width())?;
        Ok(Self {
            hp,
            selector,
            window,
            error,
            rng: SeededRng::seed_from_u64(seed),
            last_selection: None,
        })
    }

    /// Restores an engine from checkpointed window and error state.
    pub fn from_state(
        hp: HyperParams,
        window: GradientWindow,
        error: ErrorStore,
        seed: u64,
    ) -> Result<Self> {
        let mut engine = Self::with_error_store(window.dim(), hp, error, seed)?;
        if window.capacity() != engine.window.capacity()
            || window.row_width() != engine.window.row_width()
        {
            return Err(Error::HyperParam(
                "window shape disagrees with hyperparameters".into(),
            ));
        }
        engine.window = window;
        Ok(engine)
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hp
    }

    pub fn window(&self) -> &GradientWindow {
        &self.window
    }

    pub fn error_store(&self) -> &ErrorStore {
        &self.error
    }

    /// Selection pushed into the window by the latest step.
    pub fn last_selection(&self) -> Option<&SparseSelection> {
        self.last_selection.as_ref()
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }
}

impl Optimizer for MicroAdam {
    fn name(&self) -> &'static str {
        "microadam"
    }

    fn dim(&self) -> usize {
        self.window.dim()
    }

    fn step_count(&self) -> u64 {
        self.window.step()
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<StepInfo> {
        check_inputs(self.dim(), theta, grad)?;
        let mut acc = self.error.decode();
        for (a, &g) in acc.iter_mut().zip(grad) {
            *a += g;
        }
        let sel = self.selector.select(&acc)?;
        let empirical_q = compress::contraction_factor(&acc, &sel).ok();
        let residual = compress::zero_selected(&acc, &sel)?;
        self.error.store(residual, &mut self.rng)?;
        self.window.push(&sel)?;
        let m_hat = self.window.adam_stats(self.hp.beta1, false)?;
        let v_hat = self.window.adam_stats(self.hp.beta2, true)?;
        let before = theta.to_vec();
        for ((th, &m), &v) in theta.iter_mut().zip(&m_hat).zip(&v_hat) {
            *th -= lr * m / (self.hp.eps + v.sqrt());
        }
        self.last_selection = Some(sel);
        Ok(StepInfo {
            error_norm: compress::norm(&self.error.decode()),
            empirical_q,
            update_nnz: count_changed(&before, theta),
            vhat_max: Some(max_entry(&v_hat)),
        })
    }
}

/// Dense state of the analytical engine.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticalState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub vhat: Vec<f64>,
    pub error: Vec<f64>,
    pub step: u64,
}

impl AnalyticalState {
    fn zeros(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            vhat: vec![0.0; dim],
            error: vec![0.0; dim],
            step: 0,
        }
    }
}

/// Analytical MicroAdam:
/// `g̃ = C(g + e)`, `e = Q(e + g - g̃)`, EMA moments of `g̃`, AMSGrad max,
/// `θ = (1 - lr λ) θ - lr m / sqrt(v̂ + eps)`.
///
/// [`MicroAdamAnalytical::microadamw`] drops the max (uses `v` directly) and
/// applies the decoupled decay `λ`.
pub struct MicroAdamAnalytical {
    hp: HyperParams,
    state: AnalyticalState,
    compressor: Box<dyn Contractive>,
    quantizer: Box<dyn ErrorCompressor>,
    amsgrad: bool,
    weight_decay: f64,
    last_compressed: Vec<f64>,
}

impl MicroAdamAnalytical {
    pub fn new(
        dim: usize,
        hp: HyperParams,
        compressor: Box<dyn Contractive>,
        quantizer: Box<dyn ErrorCompressor>,
    ) -> Result<Self> {
        hp.validate()?;
        Ok(Self {
            hp,
            state: AnalyticalState::zeros(dim),
            compressor,
            quantizer,
            amsgrad: true,
            weight_decay: 0.0,
            last_compressed: vec![0.0; dim],
        })
    }

    /// The weight-decay variant: no AMSGrad max, decay `hp.weight_decay`.
    pub fn microadamw(
        dim: usize,
        hp: HyperParams,
        compressor: Box<dyn Contractive>,
        quantizer: Box<dyn ErrorCompressor>,
    ) -> Result<Self> {
        let weight_decay = hp.weight_decay;
        let mut engine = Self::new(dim, hp, compressor, quantizer)?;
        engine.amsgrad = false;
        engine.weight_decay = weight_decay;
        Ok(engine)
    }

    /// Disables the running max; the update uses `v` directly.
    pub fn without_amsgrad(mut self) -> Self {
        self.amsgrad = false;
        self
    }

    pub fn state(&self) -> &AnalyticalState {
        &self.state
    }

    /// Compressed gradient `g̃` of the latest step.
    pub fn last_compressed(&self) -> &[f64] {
        &self.last_compressed
    }

    /// Worst-case contraction `q` of the configured compressor.
    pub fn contraction(&self) -> f64 {
        self.compressor.q(self.state.m.len())
    }

    /// Worst-case `omega` of the configured error compressor.
    pub fn omega(&self) -> f64 {
        self.quantizer.omega(self.state.m.len())
    }

    /// `(1 + omega) q`; values >= 1 violate the convergence condition.
    pub fn q_omega(&self) -> f64 {
        (1.0 + self.omega()) * self.contraction()
    }
}

impl Optimizer for MicroAdamAnalytical {
    fn name(&self) -> &'static str {
        if self.weight_decay > 0.0 || !self.amsgrad {
            "microadamw"
        } else {
            "microadam_analytical"
        }
    }

    fn dim(&self) -> usize {
        self.state.m.len()
    }

    fn step_count(&self) -> u64 {
        self.state.step
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<StepInfo> {
        check_inputs(self.dim(), theta, grad)?;
        check_finite(theta)?;
        let s = &mut self.state;
        s.step += 1;
        let acc: Vec<f64> = grad.iter().zip(&s.error).map(|(g, e)| g + e).collect();
        let compressed = self.compressor.compress(&acc)?;
        let residual: Vec<f64> = acc.iter().zip(&compressed).map(|(a, c)| a - c).collect();
        let residual_norm = compress::norm(&residual);
        let acc_norm = compress::norm(&acc);
        s.error = self.quantizer.compress(&residual)?;
        ema_update(&mut s.m, &compressed, self.hp.beta1, false);
        ema_update(&mut s.v, &compressed, self.hp.beta2, true);
        let before = theta.to_vec();
        if self.amsgrad {
            amsgrad_apply(theta, &s.m, &s.v, &mut s.vhat, self.hp.eps, lr);
        } else {
            s.vhat.clone_from(&s.v);
            let decay = 1.0 - lr * self.weight_decay;
            for ((th, &mi), &vi) in theta.iter_mut().zip(&s.m).zip(&s.v) {
                *th = decay * *th - lr * mi / (vi + self.hp.eps).sqrt();
            }
        }
        self.last_compressed = compressed;
        Ok(StepInfo {
            error_norm: compress::norm(&s.error),
            empirical_q: (acc_norm > 0.0).then(|| residual_norm / acc_norm),
            update_nnz: count_changed(&before, theta),
            vhat_max: Some(max_entry(&s.vhat)),
        })
    }
}

/// Registered optimizer names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    AmsGrad,
    TopKAdam,
    TopKEfAdam,
    MicroAdam,
    MicroAdamAnalytical,
    MicroAdamW,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        Self::Adam,
        Self::AmsGrad,
        Self::TopKAdam,
        Self::TopKEfAdam,
        Self::MicroAdam,
        Self::MicroAdamAnalytical,
        Self::MicroAdamW,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::AmsGrad => "amsgrad",
            Self::TopKAdam => "topk_adam",
            Self::TopKEfAdam => "topk_ef_adam",
            Self::MicroAdam => "microadam",
            Self::MicroAdamAnalytical => "microadam_analytical",
            Self::MicroAdamW => "microadamw",
        }
    }

    /// Builds an engine. `seed` drives any randomized rounding.
    pub fn build(&self, dim: usize, hp: &HyperParams, seed: u64) -> Result<Box<dyn Optimizer>> {
        let hp = hp.clone();
        let quantizer = || -> Result<Box<dyn ErrorCompressor>> {
            Ok(Box::new(BucketQuantizer::new(
                hp.bits,
                hp.bucket,
                Rounding::Stochastic,
                seed,
            )?))
        };
        Ok(match self {
            Self::Adam => Box::new(Adam::new(dim, hp)?),
            Self::AmsGrad => Box::new(AmsGrad::new(dim, hp)?),
            Self::TopKAdam => Box::new(TopKAdam::new(dim, hp)?),
            Self::TopKEfAdam => Box::new(TopKEfAdam::new(dim, hp)?),
            Self::MicroAdam => Box::new(MicroAdam::new(dim, hp, seed)?),
            Self::MicroAdamAnalytical => {
                let c = Box::new(Selector::from_hyper(&hp, dim)?);
                Box::new(MicroAdamAnalytical::new(dim, hp.clone(), c, quantizer()?)?)
            }
            Self::MicroAdamW => {
                let c = Box::new(Selector::from_hyper(&hp, dim)?);
                Box::new(MicroAdamAnalytical::microadamw(
                    dim,
                    hp.clone(),
                    c,
                    quantizer()?,
                )?)
            }
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "optimizer",
                name: s.to_string(),
            })
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
