//! Error feedback under low-rank gradient projection.
//!
//! A matrix-shaped quadratic layer is trained with Adam whose states live in
//! a rank-`r` subspace. The accumulator `a = g + e` is projected onto the
//! subspace and the remainder becomes the new error `e`. The basis comes from
//! the top singular directions of the accumulator and is refreshed every
//! `period` steps, or never.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::compress::{lowrank_project, subspace_from_accumulator, SubspaceBasis};
use crate::error::{Error, Result};
use crate::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankEfConfig {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// Steps between basis refreshes; `None` keeps the first basis forever.
    pub period: Option<usize>,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for LowRankEfConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            rank: 4,
            period: Some(200),
            steps: 1000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// Per-step diagnostics, taken after the error update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowRankEfRecord {
    pub step: usize,
    pub error_norm: f64,
    pub grad_norm: f64,
    /// Norm of the error projected onto the current subspace.
    pub projected_error_norm: f64,
    /// The basis was recomputed at this step.
    pub refreshed: bool,
    pub loss: f64,
}

/// `f(W) = ½ Σ a_ij (W_ij - B_ij)²` with curvature `a_ij` in `[0.5, 1.5]`
/// and Gaussian target `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLayer {
    curvature: DMatrix<f64>,
    target: DMatrix<f64>,
}

impl QuadraticLayer {
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = SeededRng::seed_from_u64(seed);
        let curvature = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.5..1.5));
        let target = DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        Self { curvature, target }
    }

    pub fn loss(&self, w: &DMatrix<f64>) -> f64 {
        let diff = w - &self.target;
        0.5 * self.curvature.component_mul(&diff).dot(&diff)
    }

    pub fn grad(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.curvature.component_mul(&(w - &self.target))
    }
}

fn validate(cfg: &LowRankEfConfig) -> Result<()> {
    let max = cfg.rows.min(cfg.cols);
    if cfg.rank == 0 || cfg.rank > max {
        return Err(Error::RankOutOfRange {
            rank: cfg.rank,
            max,
        });
    }
    if cfg.period == Some(0) {
        return Err(Error::HyperParam(
            "subspace period must be at least 1".into(),
        ));
    }
    if cfg.steps == 0 {
        return Err(Error::HyperParam("steps must be at least 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.eps > 0.0) {
        return Err(Error::HyperParam("lr and eps must be positive".into()));
    }
    for b in [cfg.beta1, cfg.beta2] {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::HyperParam(format!("beta {b} must be in (0, 1)")));
        }
    }
    Ok(())
}

/// Runs the diagnostic from `W = 0` on [`QuadraticLayer::random`].
pub fn run_lowrank_ef(cfg: &LowRankEfConfig) -> Result<Vec<LowRankEfRecord>> {
    validate(cfg)?;
    let layer = QuadraticLayer::random(cfg.rows, cfg.cols, cfg.seed);
    let mut w = DMatrix::<f64>::zeros(cfg.rows, cfg.cols);
    let mut error = DMatrix::<f64>::zeros(cfg.rows, cfg.cols);
    let mut m = DMatrix::<f64>::zeros(cfg.rank, cfg.cols);
    let mut v = DMatrix::<f64>::zeros(cfg.rank, cfg.cols);
    let mut basis: Option<SubspaceBasis> = None;
    let mut records = Vec::with_capacity(cfg.steps);

    for t in 0..cfg.steps {
        let g = layer.grad(&w);
        let acc = &g + &error;
        let refresh = match (cfg.period, &basis) {
            (_, None) => true,
            (Some(p), Some(_)) => t % p == 0,
            (None, Some(_)) => false,
        };
        if refresh {
            basis = Some(subspace_from_accumulator(&acc, cfg.rank)?);
        }
        let u = basis.as_ref().expect("basis set on first step");
        let compressed = lowrank_project(&acc, u)?;
        error = &acc - &compressed;

        // Adam moments in the subspace coordinates; a deficient basis uses
        // only its leading rows.
        let r = u.rank();
        let coords = u.matrix().transpose() * &acc;
        let c1 = 1.0 - cfg.beta1.powi(t as i32 + 1);
        let c2 = 1.0 - cfg.beta2.powi(t as i32 + 1);
        let mut dir = DMatrix::<f64>::zeros(r, cfg.cols);
        for i in 0..r {
            for j in 0..cfg.cols {
                let x = coords[(i, j)];
                m[(i, j)] = cfg.beta1 * m[(i, j)] + (1.0 - cfg.beta1) * x;
                v[(i, j)] = cfg.beta2 * v[(i, j)] + (1.0 - cfg.beta2) * x * x;
                dir[(i, j)] = (m[(i, j)] / c1) / ((v[(i, j)] / c2).sqrt() + cfg.eps);
            }
        }
        w -= u.matrix() * dir * cfg.lr;

        let projected = lowrank_project(&error, u)?;
        records.push(LowRankEfRecord {
            step: t + 1,
            error_norm: error.norm(),
            grad_norm: g.norm(),
            projected_error_norm: projected.norm(),
            refreshed: refresh,
            loss: layer.loss(&w),
        });
    }
    Ok(records)
}
