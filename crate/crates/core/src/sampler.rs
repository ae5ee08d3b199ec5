//! Predictor–corrector diffusion sampling over projection stacks.
//!
//! The sampler reverses a variance-exploding diffusion from `σ_max` down to
//! `σ_min` in `T` steps. Each step sweeps one family of 2D slices of the 3D
//! stack: steps with `i mod K ≠ 0` sweep the angle slices (`[:,:,k]`) with the
//! primary score provider and condition them on the measurement via a
//! posterior-sampling gradient; the remaining steps sweep the perpendicular
//! row slices (`[i,:,:]`) with the secondary provider, unconditioned. A pure
//! 2D variant conditions every step with the primary provider and never uses
//! the secondary orientation.
//!
//! Randomness is drawn from counter-based streams keyed by
//! `(seed, step, sweep lane, slice index)`, so slices may be processed in any
//! order or in parallel without changing the result.

use ndarray::{Array2, Zip};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainTag, ProjectionStack};
use crate::rng::{lane, stream};
use crate::score::{tweedie, NoiseSchedule, ScoreProvider};

/// How the conditioning gradient treats the Jacobian of the denoised
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Drop the Jacobian: use the masked residual directly.
    Identity,
    /// Multiply by the exact score Jacobian (symmetric, so the provider's
    /// forward JVP is its own transpose).
    ExactJvp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Diffusion steps; must match the schedule's ladder length.
    pub t_steps: usize,
    /// Alternation modulus K: steps with `i mod K != 0` run the conditioned
    /// primary sweep, the rest run the unconditioned secondary sweep.
    pub k_alt: usize,
    /// Conditioning weight λ applied to the raw squared-residual gradient.
    pub lambda: f64,
    /// Corrector signal-to-noise ratio.
    pub snr: f64,
    /// Langevin corrector steps after each predictor step.
    pub n_corrector: usize,
    pub gradient_mode: GradientMode,
    pub seed: u64,
    /// Replace the final state with its denoised estimate (primary provider
    /// at t=0). Without it the output keeps O(σ_min) residual noise.
    pub final_denoise: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            t_steps: 200,
            k_alt: 2,
            lambda: 1.0,
            snr: 0.16,
            n_corrector: 1,
            gradient_mode: GradientMode::Identity,
            seed: 0,
            final_denoise: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if self.k_alt == 0 {
            return Err(Error::Config("alternation modulus must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "conditioning weight must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::Config(format!("corrector snr must be > 0, got {}", self.snr)));
        }
        Ok(())
    }
}

/// Inpainting measurement: the corrupted normalized stack and the binary
/// trace mask (1 = pixel to inpaint). The measurement operator keeps only
/// mask=0 pixels.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub y: ProjectionStack,
    pub mask: ProjectionStack,
}

impl Measurement {
    pub fn new(y: ProjectionStack, mask: ProjectionStack) -> Result<Measurement> {
        if y.dims() != mask.dims() {
            return Err(Error::ShapeMismatch(format!(
                "measurement is {:?} but mask is {:?}",
                y.dims(),
                mask.dims()
            )));
        }
        if y.domain != DomainTag::Normalized {
            return Err(Error::ShapeMismatch(format!(
                "measurement stack must be normalized, got {:?}",
                y.domain
            )));
        }
        if mask.domain != DomainTag::Mask {
            return Err(Error::ShapeMismatch(format!(
                "mask stack must be tagged as a mask, got {:?}",
                mask.domain
            )));
        }
        Ok(Measurement { y, mask })
    }
}

/// Which slice family a loop iteration sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepBranch {
    /// Angle slices with the primary provider, conditioned.
    Primary,
    /// Perpendicular row slices with the secondary provider, unconditioned.
    Secondary,
}

/// Branch for every loop iteration `i ∈ 0..T`: primary when `i mod K ≠ 0`.
pub fn branch_schedule(t_steps: usize, k_alt: usize) -> Vec<SweepBranch> {
    (0..t_steps)
        .map(|i| if i % k_alt != 0 { SweepBranch::Primary } else { SweepBranch::Secondary })
        .collect()
}

/// Deterministic part of the reverse-diffusion predictor at ladder index
/// `i ∈ 1..=T`: `x + (σᵢ² − σᵢ₋₁²)·s`.
pub fn predictor_drift(
    x: &Array2<f64>,
    score: &Array2<f64>,
    i: usize,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if i == 0 || i > schedule.t_steps {
        return Err(Error::Config(format!(
            "predictor index {i} outside 1..={}",
            schedule.t_steps
        )));
    }
    if x.dim() != score.dim() {
        return Err(Error::ShapeMismatch(format!(
            "predictor: slice is {:?} but score is {:?}",
            x.dim(),
            score.dim()
        )));
    }
    let dv = schedule.sigma_at_step(i).powi(2) - schedule.sigma_at_step(i - 1).powi(2);
    Ok(x + &(score * dv))
}

/// Full reverse-diffusion predictor: drift plus `√(σᵢ² − σᵢ₋₁²)·z`.
pub fn predictor_step(
    x: &Array2<f64>,
    score: &Array2<f64>,
    i: usize,
    schedule: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<Array2<f64>> {
    let mut out = predictor_drift(x, score, i, schedule)?;
    let dv = schedule.sigma_at_step(i).powi(2) - schedule.sigma_at_step(i - 1).powi(2);
    let noise = dv.sqrt();
    out.mapv_inplace(|v| v + noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng));
    Ok(out)
}

/// Annealed Langevin corrector: `ε = 2(snr·‖z‖/‖s‖)²`,
/// `x' = x + ε·s + √(2ε)·z`. Identity when the score vanishes.
pub fn corrector_step(
    x: &Array2<f64>,
    provider: &dyn ScoreProvider,
    t: f64,
    snr: f64,
    rng: &mut impl rand::Rng,
) -> Result<Array2<f64>> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::Config(format!("corrector snr must be > 0, got {snr}")));
    }
    let s = provider.evaluate(x, t)?;
    let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s_norm == 0.0 {
        return Ok(x.clone());
    }
    let z: Array2<f64> = Array2::from_shape_fn(x.dim(), |_| StandardNormal.sample(rng));
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = 2.0 * (snr * z_norm / s_norm).powi(2);
    let mut out = x + &(&s * eps);
    let kick = (2.0 * eps).sqrt();
    out.zip_mut_with(&z, |o, &n| *o += kick * n);
    Ok(out)
}

/// Masked-residual part of the conditioning gradient:
/// `u = 2·(1−mask)⊙((1−mask)⊙x̂₀ − y)`.
fn masked_residual(x0: &Array2<f64>, y: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    let mut u = Array2::zeros(x0.dim());
    Zip::from(&mut u).and(x0).and(y).and(mask).for_each(|ui, &x0i, &yi, &mi| {
        let keep = 1.0 - mi;
        *ui = 2.0 * keep * (keep * x0i - yi);
    });
    u
}

fn gradient_from_estimate(
    x_pre: &Array2<f64>,
    x0: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
    provider: &dyn ScoreProvider,
    t: f64,
    mode: GradientMode,
) -> Result<Array2<f64>> {
    let u = masked_residual(x0, y, mask);
    match mode {
        GradientMode::Identity => Ok(u),
        GradientMode::ExactJvp => {
            if !provider.supports_jvp() {
                return Err(Error::Config(
                    "exact-jvp gradient requested but the score provider lacks jvp".into(),
                ));
            }
            // ∇‖A(x̂₀(x))−y‖² = (I + σ²·∂s/∂x)ᵀ·u; both analytic score
            // Jacobians are symmetric, so the forward JVP applies.
            let s2 = provider.schedule().sigma(t)?.powi(2);
            let jv = provider.jvp(x_pre, t, &u)?;
            Ok(u + &(jv * s2))
        }
    }
}

/// Gradient of the data-fidelity term `‖A(x̂₀(x)) − y‖²` at `x` (the caller
/// applies λ). `A` keeps mask=0 pixels.
pub fn dps_gradient(
    x: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
    provider: &dyn ScoreProvider,
    t: f64,
    mode: GradientMode,
) -> Result<Array2<f64>> {
    if x.dim() != y.dim() || x.dim() != mask.dim() {
        return Err(Error::ShapeMismatch(format!(
            "conditioning gradient: slice {:?}, measurement {:?}, mask {:?}",
            x.dim(),
            y.dim(),
            mask.dim()
        )));
    }
    let s = provider.evaluate(x, t)?;
    let x0 = tweedie(x, t, &s, provider.schedule())?;
    gradient_from_estimate(x, &x0, y, mask, provider, t, mode)
}

struct SweepCtx<'a> {
    cfg: &'a SamplerConfig,
    schedule: &'a NoiseSchedule,
    /// Loop iteration (ladder transition `i+1 → i`).
    i: usize,
    t: f64,
}

/// One conditioned update of a primary slice, following the literal scheme:
/// x̂₀ from the pre-step x, then the PC step, then the gradient (evaluated at
/// the pre-step x) applied to the result.
fn conditioned_slice_update(
    ctx: &SweepCtx,
    x: &Array2<f64>,
    y: &Array2<f64>,
    mask: &Array2<f64>,
    provider: &dyn ScoreProvider,
    rng: &mut impl rand::Rng,
) -> Result<Array2<f64>> {
    let s_pre = provider.evaluate(x, ctx.t)?;
    let x0 = if ctx.cfg.lambda > 0.0 {
        Some(tweedie(x, ctx.t, &s_pre, ctx.schedule)?)
    } else {
        None
    };
    let mut xp = predictor_step(x, &s_pre, ctx.i + 1, ctx.schedule, rng)?;
    for _ in 0..ctx.cfg.n_corrector {
        xp = corrector_step(&xp, provider, ctx.t, ctx.cfg.snr, rng)?;
    }
    if let Some(x0) = x0 {
        let g = gradient_from_estimate(x, &x0, y, mask, provider, ctx.t, ctx.cfg.gradient_mode)?;
        xp.zip_mut_with(&g, |o, &gi| *o -= ctx.cfg.lambda * gi);
    }
    Ok(xp)
}

/// One unconditioned PC update of a slice.
fn plain_slice_update(
    ctx: &SweepCtx,
    x: &Array2<f64>,
    provider: &dyn ScoreProvider,
    rng: &mut impl rand::Rng,
) -> Result<Array2<f64>> {
    let s = provider.evaluate(x, ctx.t)?;
    let mut xp = predictor_step(x, &s, ctx.i + 1, ctx.schedule, rng)?;
    for _ in 0..ctx.cfg.n_corrector {
        xp = corrector_step(&xp, provider, ctx.t, ctx.cfg.snr, rng)?;
    }
    Ok(xp)
}

fn validate_sampling_inputs(
    m: &Measurement,
    primary: &dyn ScoreProvider,
    secondary: Option<&dyn ScoreProvider>,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
) -> Result<()> {
    cfg.validate()?;
    if cfg.t_steps != schedule.t_steps {
        return Err(Error::Config(format!(
            "sampler is configured for {} steps but the schedule ladder has {}",
            cfg.t_steps, schedule.t_steps
        )));
    }
    let (d1, d2, d3) = m.y.dims();
    if primary.shape() != (d1, d2) {
        return Err(Error::ShapeMismatch(format!(
            "primary provider expects {:?} slices, stack has ({d1}, {d2})",
            primary.shape()
        )));
    }
    if primary.schedule() != schedule {
        return Err(Error::Config("primary provider uses a different noise schedule".into()));
    }
    if let Some(sec) = secondary {
        if sec.shape() != (d2, d3) {
            return Err(Error::ShapeMismatch(format!(
                "secondary provider expects {:?} slices, stack has ({d2}, {d3})",
                sec.shape()
            )));
        }
        if sec.schedule() != schedule {
            return Err(Error::Config(
                "secondary provider uses a different noise schedule".into(),
            ));
        }
    }
    Ok(())
}

/// `X_T ~ N(0, σ_max² I)`, drawn per angle slice from the INIT lane.
fn initial_state(m: &Measurement, cfg: &SamplerConfig, schedule: &NoiseSchedule) -> ProjectionStack {
    let (d1, d2, d3) = m.y.dims();
    let sigma_max = schedule.sigma_max;
    let slices: Vec<Array2<f64>> = (0..d3)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(cfg.seed, cfg.t_steps as u64, lane::INIT, k as u64);
            Array2::from_shape_fn((d1, d2), |_| {
                sigma_max * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
        })
        .collect();
    ProjectionStack::from_primary_slices(m.y.geometry.clone(), DomainTag::Normalized, &slices)
        .expect("initial state has the measurement's shape")
}

fn primary_sweep(
    state: &ProjectionStack,
    m: &Measurement,
    primary: &dyn ScoreProvider,
    ctx: &SweepCtx,
    conditioned: bool,
) -> Result<ProjectionStack> {
    let (_, _, d3) = state.dims();
    let slices: Result<Vec<Array2<f64>>> = (0..d3)
        .into_par_iter()
        .map(|k| {
            let x = state.primary_slice(k);
            let mut rng = stream(ctx.cfg.seed, ctx.i as u64, lane::PRIMARY, k as u64);
            if conditioned {
                let y = m.y.primary_slice(k);
                let mask = m.mask.primary_slice(k);
                conditioned_slice_update(ctx, &x, &y, &mask, primary, &mut rng)
            } else {
                plain_slice_update(ctx, &x, primary, &mut rng)
            }
        })
        .collect();
    ProjectionStack::from_primary_slices(state.geometry.clone(), DomainTag::Normalized, &slices?)
}

fn secondary_sweep(
    state: &ProjectionStack,
    secondary: &dyn ScoreProvider,
    ctx: &SweepCtx,
) -> Result<ProjectionStack> {
    let (d1, _, _) = state.dims();
    let slices: Result<Vec<Array2<f64>>> = (0..d1)
        .into_par_iter()
        .map(|row| {
            let x = state.secondary_slice(row);
            let mut rng = stream(ctx.cfg.seed, ctx.i as u64, lane::SECONDARY, row as u64);
            plain_slice_update(ctx, &x, secondary, &mut rng)
        })
        .collect();
    ProjectionStack::from_secondary_slices(state.geometry.clone(), DomainTag::Normalized, &slices?)
}

/// Replace every angle slice with its denoised estimate at t=0.
fn final_denoise(state: &ProjectionStack, primary: &dyn ScoreProvider) -> Result<ProjectionStack> {
    let (_, _, d3) = state.dims();
    let schedule = *primary.schedule();
    let slices: Result<Vec<Array2<f64>>> = (0..d3)
        .into_par_iter()
        .map(|k| {
            let x = state.primary_slice(k);
            let s = primary.evaluate(&x, 0.0)?;
            tweedie(&x, 0.0, &s, &schedule)
        })
        .collect();
    ProjectionStack::from_primary_slices(state.geometry.clone(), DomainTag::Normalized, &slices?)
}

fn run_sampler(
    m: &Measurement,
    primary: &dyn ScoreProvider,
    secondary: Option<&dyn ScoreProvider>,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    mut on_step: Option<&mut dyn FnMut(usize, &ProjectionStack)>,
) -> Result<ProjectionStack> {
    validate_sampling_inputs(m, primary, secondary, cfg, schedule)?;
    let branches = match secondary {
        Some(_) => {
            if cfg.k_alt == 1 {
                log::warn!(
                    "alternation modulus 1 routes every step to the unconditioned \
                     secondary sweep"
                );
            }
            if cfg.k_alt > cfg.t_steps {
                log::warn!(
                    "alternation modulus {} exceeds the step count {}; only step 0 uses the \
                     secondary sweep",
                    cfg.k_alt,
                    cfg.t_steps
                );
            }
            branch_schedule(cfg.t_steps, cfg.k_alt)
        }
        None => vec![SweepBranch::Primary; cfg.t_steps],
    };
    let mut state = initial_state(m, cfg, schedule);
    for i in (0..cfg.t_steps).rev() {
        let ctx = SweepCtx { cfg, schedule, i, t: i as f64 / cfg.t_steps as f64 };
        state = match branches[i] {
            SweepBranch::Primary => primary_sweep(&state, m, primary, &ctx, true)?,
            SweepBranch::Secondary => {
                let sec = secondary.expect("secondary branches only occur with a provider");
                secondary_sweep(&state, sec, &ctx)?
            }
        };
        if let Some(cb) = on_step.as_deref_mut() {
            cb(i, &state);
        }
    }
    if cfg.final_denoise {
        state = final_denoise(&state, primary)?;
    }
    Ok(state)
}

/// Alternating two-model sampling of the full stack (Algorithm of the
/// perpendicular-model scheme): primary-conditioned angle sweeps interleaved
/// with unconditioned perpendicular sweeps every K-th step.
pub fn tpdm_sample(
    m: &Measurement,
    primary: &dyn ScoreProvider,
    secondary: &dyn ScoreProvider,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    on_step: Option<&mut dyn FnMut(usize, &ProjectionStack)>,
) -> Result<ProjectionStack> {
    run_sampler(m, primary, Some(secondary), cfg, schedule, on_step)
}

/// Slice-independent 2D baseline: every step runs the conditioned primary
/// sweep; the perpendicular orientation is never visited.
pub fn dps_sample_2d(
    m: &Measurement,
    primary: &dyn ScoreProvider,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    on_step: Option<&mut dyn FnMut(usize, &ProjectionStack)>,
) -> Result<ProjectionStack> {
    run_sampler(m, primary, None, cfg, schedule, on_step)
}
