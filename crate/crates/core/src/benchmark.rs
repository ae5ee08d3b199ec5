//! Seeded end-to-end benchmark: generates phantom cases, corrupts them with
//! implants and polychromatic noise, inpaints the traces with the alternating
//! two-model sampler (`tpdm`), the slice-independent sampler (`dps`) and the
//! triangulation baseline (`li`), reconstructs everything, and scores the
//! methods against the implant-free reference.
//!
//! The method-ordering verdicts are computed on masked-projection metrics,
//! where inpainting quality is measured directly; reconstruction-scope
//! orderings are reported but carry no pass/fail weight because filtered
//! backprojection averages localized errors over the whole volume.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::artefact::{beam_harden, log_normalize, poissonize, NoiseParams, Spectrum};
use crate::baseline::{li_inpaint, LiConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    ConeBeamGeometry, DomainTag, GeometryConfig, ProjectionStack, UnitTag, Volume, VolumeGrid,
};
use crate::metrics::{
    aggregate, masked_projection_scores, reconstruction_scores, rows_to_csv, MetricTriple,
    ProjectionMetricMode, ReportRow,
};
use crate::phantom::{place_implants, random_phantom, rasterize, ImplantShape, MaterialDecomposition};
use crate::projector::{dilate_mask, measurement_mask, project_materials, ProjectorConfig};
use crate::recon::{composite, fdk, FilterWindow};
use crate::rng;
use crate::sampler::{dps_sample_2d, tpdm_sample, Measurement, SamplerConfig};
use crate::score::{EmpiricalScoreProvider, NoiseSchedule};

pub const METHOD_TPDM: &str = "tpdm";
pub const METHOD_DPS: &str = "dps";
pub const METHOD_LI: &str = "li";
/// The corrupted stack itself, scored without any inpainting.
pub const METHOD_ARTEFACT: &str = "artefact";

/// Seed-derivation lanes, so every noise source gets an independent stream.
pub mod lanes {
    pub const TRAIN_NOISE: u64 = 0x11;
    pub const CLEAN_NOISE: u64 = 0x12;
    pub const CORRUPT_NOISE: u64 = 0x13;
    pub const SAMPLER: u64 = 0x14;
}

/// Independent sub-seed for (`base`, `lane`, `salt`).
pub fn derive_seed(base: u64, lane: u64, salt: u64) -> u64 {
    use rand::RngExt;
    rng::stream(base, lane, salt, 0).random::<u64>()
}

/// Field-of-view variant of a case. The small field of view halves the
/// reconstructable radius and narrows the detector so that body mass outside
/// the field of view still attenuates the beam (exomass) — implants there are
/// admitted via the exomass flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FovVariant {
    Large,
    Small,
}

impl FovVariant {
    pub fn label(&self) -> &'static str {
        match self {
            FovVariant::Large => "large",
            FovVariant::Small => "small",
        }
    }
    /// Stable numeric id used to salt per-variant seed streams.
    pub fn index(&self) -> u64 {
        match self {
            FovVariant::Large => 0,
            FovVariant::Small => 1,
        }
    }
}

/// A named implant arrangement shared across seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImplantPreset {
    pub name: String,
    pub shapes: Vec<ImplantShape>,
}

/// Two stock arrangements. The posts sit at the radius of the bony ring, so
/// their traces shadow the discriminative anatomy over many angles; the wide
/// pair additionally puts a sphere outside the small field of view (exomass).
pub fn default_implant_presets() -> Vec<ImplantPreset> {
    vec![
        ImplantPreset {
            name: "twin-posts".into(),
            shapes: vec![
                ImplantShape::ZCylinder {
                    center_mm: [9.5, 3.5, 2.0],
                    radius_mm: 3.8,
                    half_length_mm: 8.0,
                },
                ImplantShape::ZCylinder {
                    center_mm: [-7.5, -6.0, -3.0],
                    radius_mm: 3.4,
                    half_length_mm: 7.0,
                },
            ],
        },
        ImplantPreset {
            name: "wide-pair".into(),
            shapes: vec![
                ImplantShape::Sphere {
                    center_mm: [14.0, 8.0, 0.0],
                    radius_mm: 4.5,
                },
                ImplantShape::ZCylinder {
                    center_mm: [-6.5, 7.5, -2.0],
                    radius_mm: 3.6,
                    half_length_mm: 7.0,
                },
            ],
        },
    ]
}

/// Full description of the benchmark suite and the pipeline parameters every
/// stage uses. The default value is the stock desk-scale suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Test-case phantom seeds; must be disjoint from the training seeds.
    pub seeds: Vec<u64>,
    pub fov_variants: Vec<FovVariant>,
    pub implant_presets: Vec<ImplantPreset>,

    /// Number of training phantoms behind the score models.
    pub n_train: usize,
    pub train_seed_base: u64,
    /// Angle / detector-column stride when slicing training stacks into
    /// score-model datasets.
    pub score_stride: usize,

    // Acquisition geometry.
    pub dso_mm: f64,
    pub dsd_mm: f64,
    pub n_cols: usize,
    pub n_rows_large: usize,
    pub n_rows_small: usize,
    pub pixel_size_mm: f64,
    pub n_angles: usize,
    pub fov_radius_large_mm: f64,
    pub fov_radius_small_mm: f64,

    // Simulation grid and phantom scale.
    pub grid_n: usize,
    pub grid_spacing_mm: f64,
    pub phantom_extent_mm: f64,

    // Projection and artefact parameters.
    pub step_fraction: f64,
    pub metal_mu_mm_inv: f64,
    pub spectrum: Spectrum,
    /// Photon budget of the implant-free reference / training acquisitions.
    /// High by default: references are high-quality protocol scans, so the
    /// score models learn anatomy rather than shot noise.
    pub reference_i0: f64,
    /// Photon budget of the corrupted measurement.
    pub i0: f64,
    pub background_rate: f64,
    pub gaussian_sigma: f64,
    pub mask_eps: f64,
    pub mask_dilate_px: usize,

    // Inpainting parameters.
    pub sampler: SamplerConfig,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub li: LiConfig,

    // Evaluation parameters.
    pub window: FilterWindow,
    pub metric_mode: ProjectionMetricMode,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seeds: vec![1, 2, 3, 4],
            fov_variants: vec![FovVariant::Large, FovVariant::Small],
            implant_presets: default_implant_presets(),
            n_train: 6,
            train_seed_base: 100,
            score_stride: 2,
            dso_mm: 500.0,
            dsd_mm: 1000.0,
            n_cols: 64,
            n_rows_large: 64,
            n_rows_small: 32,
            pixel_size_mm: 2.5,
            n_angles: 64,
            fov_radius_large_mm: 30.0,
            fov_radius_small_mm: 15.0,
            grid_n: 64,
            grid_spacing_mm: 1.25,
            phantom_extent_mm: 26.0,
            step_fraction: 0.5,
            metal_mu_mm_inv: 0.3,
            spectrum: Spectrum::builtin_toy(),
            reference_i0: 1.0e6,
            i0: 1.0e5,
            background_rate: 0.0,
            gaussian_sigma: 0.0,
            mask_eps: 1.0e-3,
            mask_dilate_px: 1,
            sampler: SamplerConfig {
                t_steps: 150,
                ..SamplerConfig::default()
            },
            sigma_min: 0.01,
            sigma_max: 50.0,
            li: LiConfig::default(),
            window: FilterWindow::Hann,
            metric_mode: ProjectionMetricMode::Pooled,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.fov_variants.is_empty() || self.implant_presets.is_empty()
        {
            return Err(Error::Config(
                "benchmark suite needs at least one seed, variant and implant preset".into(),
            ));
        }
        if self.n_train == 0 {
            return Err(Error::Config("benchmark needs at least one training phantom".into()));
        }
        let train = self.train_seed_base..self.train_seed_base + self.n_train as u64;
        if self.seeds.iter().any(|s| train.contains(s)) {
            return Err(Error::Config(
                "test seeds overlap the training seed range; the score models would see the \
                 answer"
                    .into(),
            ));
        }
        if self.score_stride == 0 {
            return Err(Error::Config("score_stride must be at least 1".into()));
        }
        self.spectrum.validate()?;
        self.sampler.validate()?;
        self.li.validate()?;
        NoiseSchedule::new(self.sampler.t_steps, self.sigma_min, self.sigma_max)?;
        Ok(())
    }

    pub fn geometry(&self, variant: FovVariant) -> Result<ConeBeamGeometry> {
        let (n_rows, fov) = match variant {
            FovVariant::Large => (self.n_rows_large, self.fov_radius_large_mm),
            FovVariant::Small => (self.n_rows_small, self.fov_radius_small_mm),
        };
        ConeBeamGeometry::new(GeometryConfig {
            dso_mm: self.dso_mm,
            dsd_mm: self.dsd_mm,
            n_cols: self.n_cols,
            n_rows,
            pixel_size_mm: self.pixel_size_mm,
            n_angles: self.n_angles,
            angles_rad: None,
            fov_radius_mm: fov,
        })
    }

    pub fn grid(&self) -> Result<VolumeGrid> {
        VolumeGrid::centered_cube(self.grid_n, self.grid_spacing_mm)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.sampler.t_steps, self.sigma_min, self.sigma_max)
    }

    fn projector(&self) -> ProjectorConfig {
        ProjectorConfig {
            step_fraction: self.step_fraction,
        }
    }
}

/// Sum of the water and bone channels: total attenuation without implants.
pub fn total_mu_volume(d: &MaterialDecomposition) -> Result<Volume> {
    let data = &d.water.data + &d.bone.data;
    Volume::new(d.grid().clone(), UnitTag::MuMmInv, data)
}

/// Rescale a line-integral stack into the normalized domain.
pub fn normalize_stack(s: &ProjectionStack, c: f64) -> Result<ProjectionStack> {
    if s.domain != DomainTag::LineIntegral {
        return Err(Error::Config(format!(
            "normalization expects line integrals, got {:?}",
            s.domain
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("normalization constant must be positive, got {c}")));
    }
    Ok(ProjectionStack {
        geometry: s.geometry.clone(),
        domain: DomainTag::Normalized,
        data: &s.data / c,
    })
}

/// Undo [`normalize_stack`].
pub fn denormalize_stack(s: &ProjectionStack, c: f64) -> Result<ProjectionStack> {
    if s.domain != DomainTag::Normalized {
        return Err(Error::Config(format!(
            "denormalization expects the normalized domain, got {:?}",
            s.domain
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("normalization constant must be positive, got {c}")));
    }
    Ok(ProjectionStack {
        geometry: s.geometry.clone(),
        domain: DomainTag::LineIntegral,
        data: &s.data * c,
    })
}

/// Training outputs for one geometry variant: the two perpendicular score
/// models and the dataset normalization constant.
pub struct TrainSet {
    pub norm_const: f64,
    pub primary: EmpiricalScoreProvider,
    pub secondary: EmpiricalScoreProvider,
}

/// Slice one normalized-domain stack into the two perpendicular score-model
/// views at the given stride: angle slices and detector-row sinograms.
pub fn score_slices(
    s: &ProjectionStack,
    stride: usize,
    norm_const: f64,
) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let (d1, _, d3) = s.dims();
    let primary = (0..d3).step_by(stride.max(1)).map(|k| s.primary_slice(k) / norm_const).collect();
    let secondary =
        (0..d1).step_by(stride.max(1)).map(|i| s.secondary_slice(i) / norm_const).collect();
    (primary, secondary)
}

/// Implant-free acquisition of one phantom through the same polychromatic
/// detector model as the corrupted measurement: material projections, beam
/// hardening, photon noise at the reference dose, log-normalization. Using
/// one acquisition model for training, reference and measurement keeps them
/// on a single intensity manifold (only the implants and the dose differ).
pub fn clean_acquisition(
    decomp: &MaterialDecomposition,
    g: &ConeBeamGeometry,
    cfg: &SuiteConfig,
    noise_seed: u64,
) -> Result<ProjectionStack> {
    let ps = project_materials(decomp, g, cfg.metal_mu_mm_inv, &cfg.projector())?;
    let counts = beam_harden(&ps, &cfg.spectrum, cfg.reference_i0)?;
    let noisy = poissonize(
        &counts,
        &NoiseParams {
            r: cfg.background_rate,
            i0: cfg.reference_i0,
            gaussian_sigma: cfg.gaussian_sigma,
            seed: noise_seed,
        },
    )?;
    log_normalize(&noisy, &cfg.spectrum, cfg.reference_i0)
}

/// Build the score models for one field-of-view variant by projecting the
/// training phantoms and slicing their normalized stacks in both
/// orientations.
pub fn build_train_set(cfg: &SuiteConfig, variant: FovVariant) -> Result<TrainSet> {
    let g = cfg.geometry(variant)?;
    let grid = cfg.grid()?;
    let mut stacks = Vec::with_capacity(cfg.n_train);
    for t in 0..cfg.n_train {
        let seed = cfg.train_seed_base + t as u64;
        let spec = random_phantom(seed, cfg.phantom_extent_mm);
        let decomp = rasterize(&spec, &grid);
        let noise_seed = derive_seed(seed, lanes::TRAIN_NOISE, variant.index());
        stacks.push(clean_acquisition(&decomp, &g, cfg, noise_seed)?);
    }
    let norm_const = stacks
        .iter()
        .flat_map(|s| s.data.iter().copied())
        .fold(0.0f64, f64::max);
    if !(norm_const > 0.0) {
        return Err(Error::Numerical(
            "training projections are empty; cannot derive a normalization constant".into(),
        ));
    }
    let schedule = cfg.schedule()?;
    let mut primary_slices = Vec::new();
    let mut secondary_slices = Vec::new();
    for s in &stacks {
        let (p, sec) = score_slices(s, cfg.score_stride, norm_const);
        primary_slices.extend(p);
        secondary_slices.extend(sec);
    }
    Ok(TrainSet {
        norm_const,
        primary: EmpiricalScoreProvider::new(primary_slices, schedule)?,
        secondary: EmpiricalScoreProvider::new(secondary_slices, schedule)?,
    })
}

/// Everything the inpainting and evaluation stages need for one case.
pub struct PreparedCase {
    pub label: String,
    pub seed: u64,
    pub variant: FovVariant,
    pub preset: String,
    /// Corrupted measurement, normalized domain.
    pub y: ProjectionStack,
    pub mask: ProjectionStack,
    /// Implant-free reference acquisition, normalized domain.
    pub clean: ProjectionStack,
    /// Same reference as line integrals (for reconstruction).
    pub clean_li: ProjectionStack,
}

/// Corrupt one test phantom with an implant preset: polychromatic counts with
/// photon noise, log-normalized and scaled by the training constant.
pub fn prepare_case(
    cfg: &SuiteConfig,
    train: &TrainSet,
    seed: u64,
    variant: FovVariant,
    preset: &ImplantPreset,
    preset_idx: usize,
) -> Result<PreparedCase> {
    let g = cfg.geometry(variant)?;
    let grid = cfg.grid()?;
    let spec = random_phantom(seed, cfg.phantom_extent_mm);
    let mut decomp = rasterize(&spec, &grid);

    let clean_li = clean_acquisition(
        &decomp,
        &g,
        cfg,
        derive_seed(seed, lanes::CLEAN_NOISE, variant.index()),
    )?;
    let clean = normalize_stack(&clean_li, train.norm_const)?;

    let allow_exomass = variant == FovVariant::Small;
    place_implants(&mut decomp, &preset.shapes, allow_exomass, &g)?;
    let ps = project_materials(&decomp, &g, cfg.metal_mu_mm_inv, &cfg.projector())?;
    let mask = dilate_mask(&measurement_mask(&ps.p_implant, cfg.mask_eps)?, cfg.mask_dilate_px)?;

    let counts = beam_harden(&ps, &cfg.spectrum, cfg.i0)?;
    let noisy = poissonize(
        &counts,
        &NoiseParams {
            r: cfg.background_rate,
            i0: cfg.i0,
            gaussian_sigma: 0.0,
            seed: derive_seed(seed, lanes::CORRUPT_NOISE, variant.index() * 64 + preset_idx as u64),
        },
    )?;
    let y_li = log_normalize(&noisy, &cfg.spectrum, cfg.i0)?;
    let y = normalize_stack(&y_li, train.norm_const)?;

    Ok(PreparedCase {
        label: format!("seed{seed}-{}-{}", preset.name, variant.label()),
        seed,
        variant,
        preset: preset.name.clone(),
        y,
        mask,
        clean,
        clean_li,
    })
}

/// Scores of one method on one case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseScores {
    pub method: String,
    pub projection: MetricTriple,
    pub reconstruction: MetricTriple,
    /// Sampling wall time; zero for non-iterative methods.
    pub sample_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseResult {
    pub label: String,
    pub seed: u64,
    pub variant: FovVariant,
    pub preset: String,
    pub scores: Vec<CaseScores>,
}

/// Ordering check of the three inpainting methods on one metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingVerdict {
    pub scope: String,
    pub metric: String,
    pub tpdm_mean: f64,
    pub dps_mean: f64,
    pub li_mean: f64,
    /// True when the means satisfy tpdm >= dps >= li in quality.
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
    pub cases: Vec<CaseResult>,
    pub verdicts_projection: Vec<OrderingVerdict>,
    pub verdicts_reconstruction: Vec<OrderingVerdict>,
    /// True when at least 2 of the 3 projection-scope metrics order the
    /// methods tpdm >= dps >= li.
    pub projection_ordering_majority: bool,
    pub walltime_ratio_dps_over_tpdm: f64,
    pub total_seconds: f64,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

fn inpaint_and_score(
    cfg: &SuiteConfig,
    train: &TrainSet,
    case: &PreparedCase,
    grid: &VolumeGrid,
    reference_volume: &Volume,
) -> Result<Vec<CaseScores>> {
    let schedule = cfg.schedule()?;
    let measurement = Measurement::new(case.y.clone(), case.mask.clone())?;

    let mut sampler_cfg = cfg.sampler.clone();
    sampler_cfg.seed = derive_seed(
        case.seed,
        lanes::SAMPLER,
        case.variant.index() * 1024 + fxhash(&case.preset),
    );
    let t0 = Instant::now();
    let tpdm = tpdm_sample(&measurement, &train.primary, &train.secondary, &sampler_cfg, &schedule, None)?;
    let tpdm_secs = t0.elapsed().as_secs_f64();

    let mut dps_cfg = sampler_cfg.clone();
    dps_cfg.seed = derive_seed(case.seed, lanes::SAMPLER, 7777 + case.variant.index());
    let t0 = Instant::now();
    let dps = dps_sample_2d(&measurement, &train.primary, &dps_cfg, &schedule, None)?;
    let dps_secs = t0.elapsed().as_secs_f64();

    let li = li_inpaint(&case.y, &case.mask, &cfg.li)?;

    let mut out = Vec::new();
    for (method, stack, secs) in [
        (METHOD_TPDM, Some(tpdm), tpdm_secs),
        (METHOD_DPS, Some(dps), dps_secs),
        (METHOD_LI, Some(li), 0.0),
        (METHOD_ARTEFACT, None, 0.0),
    ] {
        let composed = match stack {
            Some(s) => composite(&case.y, &s, &case.mask)?,
            None => case.y.clone(),
        };
        let projection =
            masked_projection_scores(&case.clean, &composed, &case.mask, cfg.metric_mode)?;
        let vol = fdk(&denormalize_stack(&composed, train.norm_const)?, grid, cfg.window)?;
        let reconstruction = reconstruction_scores(reference_volume, &vol)?;
        out.push(CaseScores {
            method: method.to_string(),
            projection,
            reconstruction,
            sample_seconds: secs,
        });
    }
    Ok(out)
}

/// Cheap stable string hash for seed salting.
fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x1000_0000_01b3)
    })
}

fn ordering_verdicts(scope: &str, per_method: &HashMap<String, Vec<MetricTriple>>) -> Vec<OrderingVerdict> {
    let mean = |m: &str, f: fn(&MetricTriple) -> f64| {
        let v = &per_method[m];
        v.iter().map(f).sum::<f64>() / v.len() as f64
    };
    let mut out = Vec::new();
    for (metric, f, higher_better) in [
        ("ssim", (|t: &MetricTriple| t.ssim) as fn(&MetricTriple) -> f64, true),
        ("psnr", |t: &MetricTriple| t.psnr, true),
        ("rmse", |t: &MetricTriple| t.rmse, false),
    ] {
        let (t, d, l) = (mean(METHOD_TPDM, f), mean(METHOD_DPS, f), mean(METHOD_LI, f));
        let pass = if higher_better { t >= d && d >= l } else { t <= d && d <= l };
        out.push(OrderingVerdict {
            scope: scope.to_string(),
            metric: metric.to_string(),
            tpdm_mean: t,
            dps_mean: d,
            li_mean: l,
            pass,
        });
    }
    out
}

/// Run the whole suite. `progress` receives one line per completed stage.
pub fn run_benchmark(
    cfg: &SuiteConfig,
    mut progress: Option<&mut dyn FnMut(&str)>,
) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let wall_start = Instant::now();
    let grid = cfg.grid()?;
    let mut note = |msg: String| {
        if let Some(p) = progress.as_deref_mut() {
            p(&msg);
        }
    };

    let mut train_sets: HashMap<&'static str, TrainSet> = HashMap::new();
    for &variant in &cfg.fov_variants {
        if !train_sets.contains_key(variant.label()) {
            note(format!("training score models ({} field of view)", variant.label()));
            train_sets.insert(variant.label(), build_train_set(cfg, variant)?);
        }
    }

    let mut cases = Vec::new();
    let mut reference_volumes: HashMap<String, Volume> = HashMap::new();
    for &variant in &cfg.fov_variants {
        let train = &train_sets[variant.label()];
        for (preset_idx, preset) in cfg.implant_presets.iter().enumerate() {
            for &seed in &cfg.seeds {
                let case = prepare_case(cfg, train, seed, variant, preset, preset_idx)?;
                note(format!("case {}: corrupted, inpainting", case.label));
                let ref_key = format!("seed{seed}-{}", variant.label());
                if !reference_volumes.contains_key(&ref_key) {
                    let v = fdk(&case.clean_li, &grid, cfg.window)?;
                    reference_volumes.insert(ref_key.clone(), v);
                }
                let scores =
                    inpaint_and_score(cfg, train, &case, &grid, &reference_volumes[&ref_key])?;
                cases.push(CaseResult {
                    label: case.label,
                    seed,
                    variant,
                    preset: case.preset,
                    scores,
                });
            }
        }
    }

    // Aggregate per method and scope.
    let methods = [METHOD_TPDM, METHOD_DPS, METHOD_LI, METHOD_ARTEFACT];
    let mut rows = Vec::new();
    let mut proj: HashMap<String, Vec<MetricTriple>> = HashMap::new();
    let mut recon: HashMap<String, Vec<MetricTriple>> = HashMap::new();
    for method in methods {
        let p: Vec<MetricTriple> = cases
            .iter()
            .flat_map(|c| c.scores.iter().filter(|s| s.method == method).map(|s| s.projection))
            .collect();
        let r: Vec<MetricTriple> = cases
            .iter()
            .flat_map(|c| {
                c.scores.iter().filter(|s| s.method == method).map(|s| s.reconstruction)
            })
            .collect();
        rows.push(aggregate(method, "projection", &p)?);
        rows.push(aggregate(method, "reconstruction", &r)?);
        proj.insert(method.to_string(), p);
        recon.insert(method.to_string(), r);
    }

    let verdicts_projection = ordering_verdicts("projection", &proj);
    let verdicts_reconstruction = ordering_verdicts("reconstruction", &recon);
    let majority = verdicts_projection.iter().filter(|v| v.pass).count() >= 2;

    let tpdm_time: f64 = cases
        .iter()
        .flat_map(|c| c.scores.iter())
        .filter(|s| s.method == METHOD_TPDM)
        .map(|s| s.sample_seconds)
        .sum();
    let dps_time: f64 = cases
        .iter()
        .flat_map(|c| c.scores.iter())
        .filter(|s| s.method == METHOD_DPS)
        .map(|s| s.sample_seconds)
        .sum();
    let ratio = if tpdm_time > 0.0 { dps_time / tpdm_time } else { f64::NAN };

    note(format!(
        "suite finished: {} cases, projection ordering majority = {}",
        cases.len(),
        majority
    ));
    Ok(BenchmarkReport {
        rows,
        cases,
        verdicts_projection,
        verdicts_reconstruction,
        projection_ordering_majority: majority,
        walltime_ratio_dps_over_tpdm: ratio,
        total_seconds: wall_start.elapsed().as_secs_f64(),
    })
}
