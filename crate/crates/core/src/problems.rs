//! Test objectives with analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::SeededRng;

/// A differentiable loss with an optional stochastic-gradient oracle.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn loss(&self, theta: &[f64]) -> f64;

    fn grad(&self, theta: &[f64]) -> Vec<f64>;

    /// Default starting point for runs.
    fn initial_point(&self) -> Vec<f64>;

    fn optimum(&self) -> Option<Vec<f64>> {
        None
    }

    /// Unbiased estimate of `grad(theta)`. Deterministic objectives return
    /// the clean gradient and leave `rng` untouched.
    fn stochastic_grad(&self, theta: &[f64], _rng: &mut SeededRng) -> Vec<f64> {
        self.grad(theta)
    }
}

/// `f(x, y) = (1 - x)^2 + 100 (y - x^2)^2`, started from `(-1/2, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rosenbrock;

pub fn rosenbrock() -> Rosenbrock {
    Rosenbrock
}

impl Objective for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn dim(&self) -> usize {
        2
    }

    fn loss(&self, t: &[f64]) -> f64 {
        let (x, y) = (t[0], t[1]);
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    }

    fn grad(&self, t: &[f64]) -> Vec<f64> {
        let (x, y) = (t[0], t[1]);
        vec![
            -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
            200.0 * (y - x * x),
        ]
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![-0.5, 1.0]
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        Some(vec![1.0, 1.0])
    }
}

/// Separable quadratic `½ Σ a_i (θ_i - b_i)^2`; PL with `μ = min a`,
/// smooth with `L = max a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    curvature: Vec<f64>,
    shift: Vec<f64>,
    start: Vec<f64>,
}

pub fn quadratic(curvature: Vec<f64>, shift: Vec<f64>) -> Result<Quadratic> {
    crate::error::check_dim(curvature.len(), shift.len())?;
    if curvature.is_empty() {
        return Err(Error::Empty);
    }
    if curvature.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Constant(
            "quadratic curvature must be positive".into(),
        ));
    }
    let start = vec![0.0; curvature.len()];
    Ok(Quadratic {
        curvature,
        shift,
        start,
    })
}

impl Quadratic {
    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        crate::error::check_dim(self.curvature.len(), start.len())?;
        self.start = start;
        Ok(self)
    }

    pub fn pl_constant(&self) -> f64 {
        self.curvature.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn smoothness(&self) -> f64 {
        self.curvature.iter().copied().fold(0.0, f64::max)
    }
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        0.5 * theta
            .iter()
            .zip(&self.curvature)
            .zip(&self.shift)
            .map(|((t, a), b)| a * (t - b) * (t - b))
            .sum::<f64>()
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.curvature)
            .zip(&self.shift)
            .map(|((t, a), b)| a * (t - b))
            .collect()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.start.clone()
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        Some(self.shift.clone())
    }
}

/// Constant objective; gradient identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Flat {
    pub value: f64,
    pub dim: usize,
}

impl Objective for Flat {
    fn name(&self) -> &str {
        "flat"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, _theta: &[f64]) -> f64 {
        self.value
    }

    fn grad(&self, _theta: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![1.0; self.dim]
    }
}

/// Wraps an objective with additive isotropic Gaussian gradient noise of
/// total variance `sigma^2` (each coordinate has variance `sigma^2 / d`).
pub struct Noisy<O> {
    inner: O,
    sigma: f64,
    name: String,
}

impl<O: Objective> Noisy<O> {
    pub fn new(inner: O, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Constant(format!("noise sigma {sigma} must be >= 0")));
        }
        let name = format!("noisy_{}", inner.name());
        Ok(Self { inner, sigma, name })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Objective> Objective for Noisy<O> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        self.inner.loss(theta)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        self.inner.grad(theta)
    }

    fn initial_point(&self) -> Vec<f64> {
        self.inner.initial_point()
    }

    fn optimum(&self) -> Option<Vec<f64>> {
        self.inner.optimum()
    }

    fn stochastic_grad(&self, theta: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        let mut g = self.inner.stochastic_grad(theta, rng);
        if self.sigma > 0.0 {
            let sd = self.sigma / (g.len() as f64).sqrt();
            let normal = Normal::new(0.0, sd).expect("finite positive sd");
            for gi in &mut g {
                *gi += normal.sample(rng);
            }
        }
        g
    }
}

/// Two-class logistic regression on synthetic Gaussian data (no bias term).
///
/// Features are rescaled so the largest row has unit norm, which bounds every
/// per-sample gradient (and hence every minibatch gradient) by 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    batch: Option<usize>,
}

pub fn logistic_regression(
    n: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LogisticRegression> {
    if dim == 0 || n < dim {
        return Err(Error::Constant(format!(
            "logistic regression needs n >= dim >= 1 (n={n}, dim={dim})"
        )));
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let direction: Vec<f64> = {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        let nv = crate::compress::norm(&v).max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| x / nv).collect()
    };
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as f64;
        let sign = if label == 1.0 { 0.5 } else { -0.5 };
        let x: Vec<f64> = direction
            .iter()
            .map(|&d| sign * separation * d + normal.sample(&mut rng))
            .collect();
        features.push(x);
        labels.push(label);
    }
    let max_norm = features
        .iter()
        .map(|x| crate::compress::norm(x))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for x in &mut features {
        for v in x.iter_mut() {
            *v /= max_norm;
        }
    }
    Ok(LogisticRegression {
        features,
        labels,
        batch: None,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogisticRegression {
    /// Enables minibatch stochastic gradients of the given size.
    pub fn with_batch(mut self, batch: usize) -> Result<Self> {
        if batch == 0 || batch > self.labels.len() {
            return Err(Error::Constant(format!("batch size {batch} out of range")));
        }
        self.batch = Some(batch);
        Ok(self)
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    /// Bound on the norm of any per-sample (and so any averaged) gradient.
    pub fn gradient_bound(&self) -> f64 {
        self.features
            .iter()
            .map(|x| crate::compress::norm(x))
            .fold(0.0, f64::max)
    }

    pub fn sample_grad(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let x = &self.features[i];
        let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        let r = sigmoid(z) - self.labels[i];
        x.iter().map(|xi| r * xi).collect()
    }

    /// Mean gradient over the listed samples.
    pub fn batch_grad(&self, theta: &[f64], samples: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for &i in samples {
            for (gi, si) in g.iter_mut().zip(self.sample_grad(theta, i)) {
                *gi += si;
            }
        }
        let n = samples.len().max(1) as f64;
        g.into_iter().map(|v| v / n).collect()
    }
}

impl Objective for LogisticRegression {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let total: f64 = self
            .features
            .iter()
            .zip(&self.labels)
            .map(|(x, &y)| {
                let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                softplus(z) - y * z
            })
            .sum();
        total / self.labels.len() as f64
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.labels.len()).collect();
        self.batch_grad(theta, &all)
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn stochastic_grad(&self, theta: &[f64], rng: &mut SeededRng) -> Vec<f64> {
        match self.batch {
            None => self.grad(theta),
            Some(b) => {
                let samples = index::sample(rng, self.labels.len(), b).into_vec();
                self.batch_grad(theta, &samples)
            }
        }
    }
}

/// Central-difference gradient `(f(θ + h e_i) - f(θ - h e_i)) / 2h`.
pub fn finite_diff_grad(obj: &dyn Objective, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Constant(format!("step h={h} must be positive")));
    }
    crate::error::check_dim(obj.dim(), theta.len())?;
    let mut probe = theta.to_vec();
    Ok((0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let up = obj.loss(&probe);
            probe[i] = theta[i] - h;
            let down = obj.loss(&probe);
            probe[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect())
}

/// Names accepted by [`problem_by_name`].
pub const PROBLEM_NAMES: &[&str] = &["rosenbrock", "quadratic", "illcond", "logistic", "flat"];

/// Builds a registered problem. `dim` applies to the dimension-free
/// problems (`quadratic`, `logistic`, `flat`).
pub fn problem_by_name(name: &str, dim: Option<usize>, seed: u64) -> Result<Box<dyn Objective>> {
    match name {
        "rosenbrock" => Ok(Box::new(Rosenbrock)),
        "quadratic" => {
            let d = dim.unwrap_or(8);
            let a = (0..d).map(|i| 1.0 + i as f64).collect();
            Ok(Box::new(quadratic(a, vec![1.0; d])?))
        }
        "illcond" => Ok(Box::new(quadratic(vec![1.0, 100.0], vec![1.0, 1.0])?)),
        "logistic" => {
            let d = dim.unwrap_or(8);
            Ok(Box::new(
                logistic_regression(32 * d, d, 2.0, seed)?.with_batch(16)?,
            ))
        }
        "flat" => Ok(Box::new(Flat {
            value: 0.0,
            dim: dim.unwrap_or(2),
        })),
        other => Err(Error::UnknownName {
            kind: "problem",
            name: other.to_string(),
        }),
    }
}
