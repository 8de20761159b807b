//! Compression constants, convergence-bound right-hand sides, error and
//! second-moment thresholds, and the optimizer-state memory model.

use crate::error::{Error, Result};

/// Bytes per GiB; all memory figures use binary gigabytes.
pub const GIB: f64 = (1u64 << 30) as f64;

/// Contraction `q` of the compressor and bound `omega` of the error
/// quantizer, with `q_omega = (1 + omega) q < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionParams {
    q: f64,
    omega: f64,
    q_omega: f64,
}

impl CompressionParams {
    pub fn new(q: f64, omega: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::Constant(format!("q={q} must be in [0, 1)")));
        }
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::Constant(format!("omega={omega} must be >= 0")));
        }
        let q_omega = (1.0 + omega) * q;
        if q_omega >= 1.0 {
            return Err(Error::CompressionCondition { q_omega });
        }
        Ok(Self { q, omega, q_omega })
    }

    /// Top-K with `k` of `d` coordinates.
    pub fn from_topk(k: usize, d: usize, omega: f64) -> Result<Self> {
        Self::new(topk_q(k, d)?, omega)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn q_omega(&self) -> f64 {
        self.q_omega
    }
}

/// Contraction factor `sqrt(1 - k/d)` of Top-K.
pub fn topk_q(k: usize, d: usize) -> Result<f64> {
    if k == 0 || k > d {
        return Err(Error::KOutOfRange { k, dim: d });
    }
    Ok((1.0 - k as f64 / d as f64).sqrt())
}

/// Relative error factor of a `bits`-bit bucket quantizer on an
/// `n`-coordinate bucket with range `[lo, hi]`:
/// `sqrt(n - 2) / (2^b - 1) * (hi - lo) / sqrt(hi^2 + lo^2)`.
pub fn quantizer_omega(bits: u32, n: usize, lo: f64, hi: f64) -> Result<f64> {
    if !(1..=16).contains(&bits) {
        return Err(Error::Bits(bits));
    }
    if n < 3 {
        return Err(Error::Constant(format!("bucket length {n} must be >= 3")));
    }
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Constant(format!("range [{lo}, {hi}] is invalid")));
    }
    if lo == 0.0 && hi == 0.0 {
        return Err(Error::ZeroVector);
    }
    let levels = ((1u32 << bits) - 1) as f64;
    Ok(((n - 2) as f64).sqrt() / levels * (hi - lo) / (hi * hi + lo * lo).sqrt())
}

/// Largest [`quantizer_omega`] over all bucket ranges, found by scanning the
/// direction of `(hi, lo)` on the unit circle.
pub fn quantizer_omega_worst(bits: u32, n: usize) -> Result<f64> {
    const STEPS: usize = 20_000;
    // lo <= hi covers angles (hi, lo) = (cos a, sin a) with a in [-3π/4, π/4]
    let start = -0.75 * std::f64::consts::PI;
    let span = std::f64::consts::PI;
    let mut best = 0.0_f64;
    for i in 0..=STEPS {
        let a = start + span * i as f64 / STEPS as f64;
        let (lo, hi) = (a.sin(), a.cos());
        if lo > hi {
            continue;
        }
        best = best.max(quantizer_omega(bits, n, lo, hi)?);
    }
    Ok(best)
}

/// Constants `C0`, `C1`, `C2` of the convergence bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn c_constants(cp: &CompressionParams, g: f64, eps: f64, beta1: f64) -> Result<BoundConstants> {
    if !(g >= 0.0) || !(eps > 0.0) {
        return Err(Error::Constant(format!(
            "need G >= 0 and eps > 0 (G={g}, eps={eps})"
        )));
    }
    if !(0.0..1.0).contains(&beta1) {
        return Err(Error::Constant(format!("beta1={beta1} must be in [0, 1)")));
    }
    let qw = cp.q_omega;
    let qw2 = qw * qw;
    let gap = 1.0 - qw2;
    let c0 = (4.0 * (1.0 + qw2).powi(3) / (gap * gap) * g * g + eps).sqrt();
    let c2 = cp.omega * cp.q * (1.0 + 2.0 * qw / gap);
    let c1 = beta1 / (1.0 - beta1) * (1.0 + c2) + 2.0 * qw / gap;
    Ok(BoundConstants { c0, c1, c2 })
}

/// Bound on `‖e_t‖²`: `4 q_ω² / (1 - q_ω²)² G²`.
pub fn ef_bound(cp: &CompressionParams, g: f64) -> f64 {
    let qw2 = cp.q_omega * cp.q_omega;
    4.0 * qw2 / ((1.0 - qw2) * (1.0 - qw2)) * g * g
}

/// Bound on every entry of `v̂_t`: `4 (1 + q_ω²)³ / (1 - q_ω²)² G²`.
pub fn vhat_bound(cp: &CompressionParams, g: f64) -> f64 {
    let qw2 = cp.q_omega * cp.q_omega;
    4.0 * (1.0 + qw2).powi(3) / ((1.0 - qw2) * (1.0 - qw2)) * g * g
}

/// Problem constants entering the rate bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Gradient bound `G`.
    pub g: f64,
    /// Stochastic-gradient variance bound `σ²`.
    pub sigma2: f64,
    /// Smoothness `L`.
    pub l: f64,
    /// PL constant `μ`.
    pub mu: f64,
    pub eps: f64,
    pub beta1: f64,
    /// `f(θ_1) - f*`.
    pub f_gap: f64,
    pub dim: usize,
    /// Horizon `T`.
    pub horizon: usize,
}

impl ProblemConstants {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("G", self.g),
            ("sigma2", self.sigma2),
            ("L", self.l),
            ("mu", self.mu),
            ("eps", self.eps),
            ("f_gap", self.f_gap),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Constant(format!(
                    "{name}={v} must be finite and >= 0"
                )));
            }
        }
        if !(self.l > 0.0 && self.eps > 0.0) {
            return Err(Error::Constant("L and eps must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Constant("horizon T must be at least 1".into()));
        }
        Ok(())
    }
}

/// Largest admissible fixed step `ε / (4 L C0)`.
pub fn max_step_size(pc: &ProblemConstants, cp: &CompressionParams) -> Result<f64> {
    pc.validate()?;
    let c = c_constants(cp, pc.g, pc.eps, pc.beta1)?;
    Ok(pc.eps / (4.0 * pc.l * c.c0))
}

fn check_step(pc: &ProblemConstants, cp: &CompressionParams, eta: f64) -> Result<BoundConstants> {
    let max = max_step_size(pc, cp)?;
    if !(eta > 0.0) {
        return Err(Error::Constant(format!("step size {eta} must be positive")));
    }
    if eta > max {
        return Err(Error::StepSizeTooLarge { eta, max });
    }
    c_constants(cp, pc.g, pc.eps, pc.beta1)
}

/// Right-hand side of the fixed-step non-convex bound on
/// `(1/T) Σ E‖∇f(θ_t)‖²`.
pub fn nonconvex_bound(pc: &ProblemConstants, cp: &CompressionParams, eta: f64) -> Result<f64> {
    let BoundConstants { c0, c1, c2 } = check_step(pc, cp, eta)?;
    let (l, g2, eps, d) = (pc.l, pc.g * pc.g, pc.eps, pc.dim as f64);
    let t = pc.horizon as f64;
    let inner = pc.f_gap / (t * eta)
        + eta * l * pc.sigma2 / eps
        + eta * l * c2 * c2 * g2 / eps
        + eta * eta * l * l * c0 * c1 * c1 * g2 / (eps * eps)
        + (1.0 + c1) * g2 * d / (t * eps.sqrt())
        + eta * (1.0 + 2.0 * c1) * c1 * l * g2 * d / (t * eps);
    Ok(2.0 * c0 * inner)
}

/// Right-hand side of the fixed-step PL bound on `E f(θ_{T+1}) - f*`.
pub fn pl_bound(pc: &ProblemConstants, cp: &CompressionParams, eta: f64) -> Result<f64> {
    let BoundConstants { c0, c1, c2 } = check_step(pc, cp, eta)?;
    if !(pc.mu > 0.0) {
        return Err(Error::Constant("PL constant mu must be positive".into()));
    }
    let (l, mu, g2, eps, d) = (pc.l, pc.mu, pc.g * pc.g, pc.eps, pc.dim as f64);
    let geometric = (1.0 - eta * mu / c0).powi(pc.horizon as i32) * pc.f_gap;
    let linear = (l * c0 * pc.sigma2 + l * c0 * (c1 + c2 * c2) * g2) / (mu * eps)
        + ((1.0 + c1) * g2 * d + c1 * g2) / eps.sqrt();
    let quadratic = 3.0 * l * l * c0 * c1 * c1 * g2 / (2.0 * mu * eps.powf(1.5))
        + (1.0 + 2.0 * c1) * c1 * l * g2 * d / eps
        + l * c1 * c1 * g2 / (2.0 * eps);
    Ok(geometric + eta * linear + eta * eta * quadratic)
}

/// Low-rank optimizer settings for the memory table.
#[derive(Debug, Clone, PartialEq)]
pub struct GaloreSpec {
    /// `Σ A_i` over projected layers; `d_r = rank * Σ A_i`.
    pub layer_row_sums: u64,
    /// Bytes of parameters left unprojected.
    pub rank1_bytes: u64,
    /// `(rank, bits)` rows to report; bits is 8 or 16.
    pub configs: Vec<(u64, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorySpec {
    /// Parameter count `d`.
    pub d: u64,
    /// Window length `m`.
    pub m: u64,
    /// Gradient density count `k`.
    pub k: u64,
    pub galore: Option<GaloreSpec>,
}

impl MemorySpec {
    /// Llama-2 7B with `m = 10`, `k = ceil(d / 100)` and low-rank rows for
    /// ranks 256 and 1024 at 8 and 16 bits.
    pub fn llama2_7b() -> Self {
        let d = 6_738_415_616;
        Self {
            d,
            m: 10,
            k: d.div_ceil(100),
            galore: Some(GaloreSpec {
                layer_row_sums: 1_423_872,
                rank1_bytes: 266_240,
                configs: vec![(256, 8), (1024, 8), (256, 16), (1024, 16)],
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.k > self.d {
            return Err(Error::Constant(format!(
                "need 1 <= k <= d (k={}, d={})",
                self.k, self.d
            )));
        }
        if let Some(g) = &self.galore {
            for &(rank, bits) in &g.configs {
                if rank == 0 || !(bits == 8 || bits == 16) {
                    return Err(Error::Constant(format!(
                        "low-rank row needs rank >= 1 and bits in {{8, 16}} (rank={rank}, bits={bits})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub label: String,
    pub bytes: f64,
}

impl Footprint {
    pub fn gib(&self) -> f64 {
        self.bytes / GIB
    }
}

/// Optimizer-state bytes: AdamW at 32, 16 and 8 bits (`8d`, `4d`, `2d`),
/// MicroAdam (`0.5d + 4mk`) and any configured low-rank rows
/// (`4 d_r + 2 ε₁` at 8 bits, `6 d_r + 2 ε₁` at 16 bits).
pub fn memory_footprints(spec: &MemorySpec) -> Result<Vec<Footprint>> {
    spec.validate()?;
    let d = spec.d as f64;
    let row = |label: String, bytes: f64| Footprint { label, bytes };
    let mut out = vec![
        row("adamw-32bit".into(), 8.0 * d),
        row("adamw-16bit".into(), 4.0 * d),
        row("adamw-8bit".into(), 2.0 * d),
        row(
            format!("microadam-m{}", spec.m),
            0.5 * d + 4.0 * spec.m as f64 * spec.k as f64,
        ),
    ];
    if let Some(g) = &spec.galore {
        for &(rank, bits) in &g.configs {
            let d_r = (rank * g.layer_row_sums) as f64;
            let per = if bits == 8 { 4.0 } else { 6.0 };
            out.push(row(
                format!("galore-{bits}bit-r{rank}"),
                per * d_r + 2.0 * g.rank1_bytes as f64,
            ));
        }
    }
    Ok(out)
}

/// Window length at which MicroAdam uses as much memory as 8-bit AdamW:
/// `1.5 d / (4 k)`.
pub fn solve_mmax(d: u64, k: u64) -> Result<f64> {
    if k == 0 || k > d {
        return Err(Error::KOutOfRange {
            k: k as usize,
            dim: d as usize,
        });
    }
    Ok(1.5 * d as f64 / (4.0 * k as f64))
}
