//! Deterministic optimization runs over an [`Objective`].

use rand::SeedableRng;

use crate::compress::norm;
use crate::error::{Error, Result};
use crate::optim::{HyperParams, Optimizer, OptimizerKind};
use crate::problems::Objective;
use crate::SeededRng;

/// Iterates whose norm exceeds this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Step-size schedule over a horizon of `T` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Constant,
    /// `lr / sqrt(T)` at every step.
    InvSqrtHorizon,
    /// `lr * ln(T) / T` at every step.
    LogHorizon,
}

impl Schedule {
    pub fn step_size(&self, base: f64, horizon: usize) -> f64 {
        let t = horizon.max(1) as f64;
        match self {
            Self::Constant => base,
            Self::InvSqrtHorizon => base / t.sqrt(),
            Self::LogHorizon => base * t.max(2.0).ln() / t,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::InvSqrtHorizon => "inv_sqrt",
            Self::LogHorizon => "log",
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "inv_sqrt" => Ok(Self::InvSqrtHorizon),
            "log" => Ok(Self::LogHorizon),
            _ => Err(Error::UnknownName {
                kind: "schedule",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub optimizer: OptimizerKind,
    pub hyper: HyperParams,
    pub steps: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Rescale stochastic gradients to norm at most this value.
    pub clip: Option<f64>,
    /// Starting point; defaults to the objective's.
    pub start: Option<Vec<f64>>,
}

impl RunSpec {
    /// Seed handed to the optimizer's rounding RNG, kept apart from the
    /// gradient-noise stream.
    pub fn optimizer_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }

    pub fn new(optimizer: OptimizerKind, hyper: HyperParams, steps: usize) -> Self {
        Self {
            optimizer,
            hyper,
            steps,
            schedule: Schedule::Constant,
            seed: 0,
            clip: None,
            start: None,
        }
    }
}

/// Diagnostics recorded after each step, evaluated at the new iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
    /// Norm of the clean gradient at the new iterate.
    pub grad_norm: f64,
    /// Norm of the (possibly clipped) stochastic gradient fed to the step.
    pub used_grad_norm: f64,
    pub error_norm: f64,
    pub empirical_q: Option<f64>,
    pub update_nnz: usize,
    pub vhat_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The guard fired after `step` steps with iterate norm `norm`.
    Diverged {
        step: usize,
        norm: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub optimizer: String,
    pub problem: String,
    pub initial: Vec<f64>,
    pub initial_loss: f64,
    pub initial_grad_norm: f64,
    /// `iterates[i]` is the point after step `i + 1`.
    pub iterates: Vec<Vec<f64>>,
    pub reports: Vec<StepReport>,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn final_point(&self) -> &[f64] {
        self.iterates.last().unwrap_or(&self.initial)
    }

    pub fn final_loss(&self) -> f64 {
        self.reports.last().map_or(self.initial_loss, |r| r.loss)
    }

    pub fn distance_to(&self, target: &[f64]) -> f64 {
        self.final_point()
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Sum of Euclidean step lengths from the start point.
    pub fn path_length(&self) -> f64 {
        let mut prev = self.initial.as_slice();
        let mut total = 0.0;
        for p in &self.iterates {
            total += p
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            prev = p;
        }
        total
    }

    /// Mean of `‖∇f(θ_t)‖²` over the points `θ_1..θ_T` at which gradients
    /// were taken.
    pub fn mean_sq_grad_norm(&self) -> f64 {
        let n = self.reports.len();
        if n == 0 {
            return self.initial_grad_norm.powi(2);
        }
        let mut sum = self.initial_grad_norm.powi(2);
        for r in &self.reports[..n - 1] {
            sum += r.grad_norm * r.grad_norm;
        }
        sum / n as f64
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

/// Runs `spec.steps` steps on `problem`. Divergence stops the run early and
/// is reported through [`Trajectory::status`]; other failures are errors.
pub fn run(spec: &RunSpec, problem: &dyn Objective) -> Result<Trajectory> {
    let mut opt = spec
        .optimizer
        .build(problem.dim(), &spec.hyper, spec.optimizer_seed())?;
    run_with(spec, problem, opt.as_mut())
}

/// As [`run`], driving a caller-supplied engine so its state can be
/// inspected afterwards. `spec.optimizer` only labels the trajectory.
pub fn run_with(
    spec: &RunSpec,
    problem: &dyn Objective,
    opt: &mut dyn Optimizer,
) -> Result<Trajectory> {
    if spec.steps == 0 {
        return Err(Error::HyperParam("steps must be at least 1".into()));
    }
    if let Some(g) = spec.clip {
        if !(g > 0.0) {
            return Err(Error::HyperParam(format!("clip {g} must be positive")));
        }
    }
    let dim = problem.dim();
    let mut theta = match &spec.start {
        Some(s) => s.clone(),
        None => problem.initial_point(),
    };
    crate::error::check_dim(dim, theta.len())?;
    crate::error::check_dim(dim, opt.dim())?;
    let mut noise = SeededRng::seed_from_u64(spec.seed);
    let lr = spec.schedule.step_size(spec.hyper.lr, spec.steps);

    let mut traj = Trajectory {
        optimizer: spec.optimizer.as_str().to_string(),
        problem: problem.name().to_string(),
        initial: theta.clone(),
        initial_loss: problem.loss(&theta),
        initial_grad_norm: norm(&problem.grad(&theta)),
        iterates: Vec::with_capacity(spec.steps),
        reports: Vec::with_capacity(spec.steps),
        status: RunStatus::Completed,
    };

    for step in 1..=spec.steps {
        let mut g = problem.stochastic_grad(&theta, &mut noise);
        let mut g_norm = norm(&g);
        if let Some(cap) = spec.clip {
            if g_norm > cap {
                let s = cap / g_norm;
                g.iter_mut().for_each(|x| *x *= s);
                g_norm = norm(&g);
            }
        }
        let info = opt.step(&mut theta, &g, lr)?;
        let theta_norm = norm(&theta);
        let diverged = !(theta_norm <= DIVERGENCE_NORM);
        traj.reports.push(StepReport {
            step,
            loss: problem.loss(&theta),
            grad_norm: norm(&problem.grad(&theta)),
            used_grad_norm: g_norm,
            error_norm: info.error_norm,
            empirical_q: info.empirical_q,
            update_nnz: info.update_nnz,
            vhat_max: info.vhat_max,
        });
        traj.iterates.push(theta.clone());
        if diverged {
            traj.status = RunStatus::Diverged {
                step,
                norm: theta_norm,
            };
            break;
        }
    }
    Ok(traj)
}
