//! Noise schedule and score providers for variance-exploding diffusion.
//!
//! The sampler only ever talks to the [`ScoreProvider`] contract: given a
//! noised 2D slice and a diffusion time `t ∈ [0, 1]`, return the score
//! `∇_x log p_t(x)` of the data distribution smoothed by `N(0, σ(t)²I)`.
//! Two exact providers are included — the score of a diagonal Gaussian and
//! the score of an empirical dataset mixture — so every sampling equation can
//! be tested against closed forms. A learned network could implement the same
//! contract later.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric variance-exploding noise schedule
/// `σ(t) = sigma_min · (sigma_max/sigma_min)^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// Number of discrete steps in the ladder `σᵢ = σ(i/T)`.
    pub t_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl NoiseSchedule {
    pub fn new(t_steps: usize, sigma_min: f64, sigma_max: f64) -> Result<NoiseSchedule> {
        if t_steps == 0 {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(Error::Config(format!(
                "noise bounds must satisfy 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
            )));
        }
        Ok(NoiseSchedule { t_steps, sigma_min, sigma_max })
    }

    /// Noise level at continuous time `t ∈ [0, 1]`.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("diffusion time {t} outside [0, 1]")));
        }
        Ok(self.sigma_min * (self.sigma_max / self.sigma_min).powf(t))
    }

    /// Ladder value `σᵢ = σ(i/T)` for `i ∈ 0..=T`.
    pub fn sigma_at_step(&self, i: usize) -> f64 {
        assert!(i <= self.t_steps, "step {i} beyond schedule length {}", self.t_steps);
        self.sigma(i as f64 / self.t_steps as f64).expect("i/T lies in [0,1]")
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { t_steps: 200, sigma_min: 0.01, sigma_max: 50.0 }
    }
}

/// Score of the σ(t)-smoothed data distribution on 2D slices.
///
/// Implementations are immutable and reentrant; callers may evaluate many
/// slices concurrently.
pub trait ScoreProvider: Sync + Send {
    /// Expected slice shape `(rows, cols)`.
    fn shape(&self) -> (usize, usize);

    /// The schedule this provider's scores are defined against.
    fn schedule(&self) -> &NoiseSchedule;

    /// `s(x, t) = ∇_x log p_t(x)`.
    fn evaluate(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>>;

    /// Whether [`ScoreProvider::jvp`] is implemented.
    fn supports_jvp(&self) -> bool {
        false
    }

    /// Jacobian-vector product `(∂s/∂x)·v` at `(x, t)`.
    fn jvp(&self, _x: &Array2<f64>, _t: f64, _v: &Array2<f64>) -> Result<Array2<f64>> {
        Err(Error::Config("score provider does not implement jvp".into()))
    }
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!(
            "{what}: slice is {got:?}, provider expects {want:?}"
        )));
    }
    Ok(())
}

/// Exact score of `N(μ, Σ)` with diagonal per-pixel variances Σ: under VE
/// smoothing the marginal is `N(μ, Σ + σ(t)²)`, so
/// `s = −(x − μ) / (Σ + σ(t)²)`.
#[derive(Debug, Clone)]
pub struct GaussianScoreProvider {
    mean: Array2<f64>,
    var: Array2<f64>,
    schedule: NoiseSchedule,
}

impl GaussianScoreProvider {
    pub fn new(
        mean: Array2<f64>,
        var: Array2<f64>,
        schedule: NoiseSchedule,
    ) -> Result<GaussianScoreProvider> {
        if mean.dim() != var.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mean is {:?} but variance is {:?}",
                mean.dim(),
                var.dim()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("gaussian mean must be finite".into()));
        }
        if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("gaussian variances must be positive and finite".into()));
        }
        Ok(GaussianScoreProvider { mean, var, schedule })
    }

    pub fn mean(&self) -> &Array2<f64> {
        &self.mean
    }

    pub fn var(&self) -> &Array2<f64> {
        &self.var
    }
}

impl ScoreProvider for GaussianScoreProvider {
    fn shape(&self) -> (usize, usize) {
        self.mean.dim()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn evaluate(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        check_shape("gaussian score", x.dim(), self.shape())?;
        let s2 = self.schedule.sigma(t)?.powi(2);
        let mut out = x - &self.mean;
        out.zip_mut_with(&self.var, |d, &v| *d = -*d / (v + s2));
        Ok(out)
    }

    fn supports_jvp(&self) -> bool {
        true
    }

    fn jvp(&self, x: &Array2<f64>, t: f64, v: &Array2<f64>) -> Result<Array2<f64>> {
        check_shape("gaussian jvp", x.dim(), self.shape())?;
        check_shape("gaussian jvp direction", v.dim(), self.shape())?;
        let s2 = self.schedule.sigma(t)?.powi(2);
        let mut out = v.clone();
        out.zip_mut_with(&self.var, |d, &var| *d = -*d / (var + s2));
        Ok(out)
    }
}

/// Exact score of the empirical mixture `(1/N) Σᵢ N(xᵢ, σ(t)²I)`:
/// `wᵢ = softmax(−‖x−xᵢ‖²/(2σ²))`, `s = Σᵢ wᵢ (xᵢ − x)/σ²`,
/// evaluated with log-sum-exp stabilisation.
pub struct EmpiricalScoreProvider {
    dataset: Vec<Array2<f64>>,
    shape: (usize, usize),
    schedule: NoiseSchedule,
}

impl EmpiricalScoreProvider {
    pub fn new(dataset: Vec<Array2<f64>>, schedule: NoiseSchedule) -> Result<Self> {
        let Some(first) = dataset.first() else {
            return Err(Error::Config("empirical score dataset is empty".into()));
        };
        let shape = first.dim();
        for (n, x) in dataset.iter().enumerate() {
            if x.dim() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "dataset slice {n} is {:?}, expected {shape:?}",
                    x.dim()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("dataset slice {n} has non-finite values")));
            }
        }
        Ok(EmpiricalScoreProvider { dataset, shape, schedule })
    }

    /// Load every `*.f32` + sidecar slice pair from a directory (sorted by
    /// file name).
    pub fn from_slice_dir(dir: &std::path::Path, schedule: NoiseSchedule) -> Result<Self> {
        let slices = crate::io::load_slice_dir(dir)?;
        Self::new(slices, schedule)
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn dataset(&self) -> &[Array2<f64>] {
        &self.dataset
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Mixture weights at `(x, σ)` via log-sum-exp.
    fn weights(&self, x: &Array2<f64>, sigma2: f64) -> Vec<f64> {
        let mut logits: Vec<f64> = self
            .dataset
            .iter()
            .map(|xi| {
                let d2: f64 = x.iter().zip(xi.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
                -d2 / (2.0 * sigma2)
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - m).exp();
            total += *l;
        }
        for l in logits.iter_mut() {
            *l /= total;
        }
        logits
    }
}

impl ScoreProvider for EmpiricalScoreProvider {
    fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn evaluate(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        check_shape("empirical score", x.dim(), self.shape)?;
        let sigma2 = self.schedule.sigma(t)?.powi(2);
        let w = self.weights(x, sigma2);
        // s = (Σᵢ wᵢ xᵢ − x) / σ²  since the weights sum to one.
        let mut out = Array2::<f64>::zeros(self.shape);
        for (wi, xi) in w.iter().zip(&self.dataset) {
            out.zip_mut_with(xi, |o, &v| *o += wi * v);
        }
        out.zip_mut_with(x, |o, &v| *o = (*o - v) / sigma2);
        Ok(out)
    }

    fn supports_jvp(&self) -> bool {
        true
    }

    /// Exact Jacobian-vector product of the mixture score. With
    /// `aᵢ = (xᵢ − x)/σ²` and `cᵢ = ⟨aᵢ, v⟩`:
    /// `(∂s/∂x)·v = Σᵢ wᵢ cᵢ aᵢ − (Σᵢ wᵢ cᵢ)(Σᵢ wᵢ aᵢ) − v/σ²`.
    fn jvp(&self, x: &Array2<f64>, t: f64, v: &Array2<f64>) -> Result<Array2<f64>> {
        check_shape("empirical jvp", x.dim(), self.shape)?;
        check_shape("empirical jvp direction", v.dim(), self.shape)?;
        let sigma2 = self.schedule.sigma(t)?.powi(2);
        let w = self.weights(x, sigma2);
        let dots: Vec<f64> = self
            .dataset
            .iter()
            .map(|xi| {
                xi.iter()
                    .zip(x.iter())
                    .zip(v.iter())
                    .map(|((&a, &b), &dv)| (a - b) * dv)
                    .sum::<f64>()
                    / sigma2
            })
            .collect();
        let c_bar: f64 = w.iter().zip(&dots).map(|(wi, ci)| wi * ci).sum();
        // Accumulate Σᵢ wᵢ (cᵢ − c̄) aᵢ, then subtract v/σ².
        let mut out = Array2::<f64>::zeros(self.shape);
        for ((wi, ci), xi) in w.iter().zip(&dots).zip(&self.dataset) {
            let coeff = wi * (ci - c_bar) / sigma2;
            if coeff != 0.0 {
                ndarray::Zip::from(&mut out).and(xi).and(x).for_each(|o, &a, &b| {
                    *o += coeff * (a - b);
                });
            }
        }
        out.zip_mut_with(v, |o, &dv| *o -= dv / sigma2);
        Ok(out)
    }
}

/// Denoised posterior-mean estimate `x̂₀ = x + σ(t)²·s` from an evaluated
/// score.
pub fn tweedie(
    x: &Array2<f64>,
    t: f64,
    score: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if x.dim() != score.dim() {
        return Err(Error::ShapeMismatch(format!(
            "tweedie: slice is {:?} but score is {:?}",
            x.dim(),
            score.dim()
        )));
    }
    let s2 = schedule.sigma(t)?.powi(2);
    Ok(x + &(score * s2))
}
