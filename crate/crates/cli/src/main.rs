//! `cbct` — pipeline driver for cone-beam CT simulation, metal-trace
//! inpainting and evaluation.
//!
//! The binary orchestrates the `cbct_core` stages over a dataset directory;
//! every numeric operation lives in the library. Typical flow:
//!
//! ```text
//! cbct generate    DATASET                 phantoms -> volumes, clean stacks, score slices
//! cbct corrupt     DATASET/large/case-1    implants -> corrupted stack, trace mask, artefact recon
//! cbct inpaint     DATASET/large/case-1 --method tpdm
//! cbct reconstruct DATASET/large/case-1
//! cbct evaluate    DATASET/large/case-1    metrics CSV/JSON + slice PNGs and difference maps
//! cbct bench       REPORT_DIR              seeded tpdm/dps/li comparison suite
//! ```
//!
//! Exit codes: 0 success, 2 configuration error, 3 implant placement failure,
//! 4 shape mismatch, 5 missing input, 1 anything else.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cbct_core::artefact::{beam_harden, log_normalize, poissonize, NoiseParams, Spectrum};
use cbct_core::baseline::li_inpaint;
use cbct_core::benchmark::{
    clean_acquisition, denormalize_stack, derive_seed, lanes, normalize_stack, run_benchmark,
    score_slices, FovVariant, SuiteConfig, METHOD_DPS, METHOD_LI, METHOD_TPDM,
};
use cbct_core::geometry::{DomainTag, ProjectionStack, Volume};
use cbct_core::io;
use cbct_core::metrics::{
    aggregate, masked_projection_scores, reconstruction_scores, rows_to_csv, rows_to_text,
    MetricTriple, ReportRow,
};
use cbct_core::phantom::{place_implants, random_phantom, rasterize};
use cbct_core::projector::{
    dilate_mask, measurement_mask, project_materials, ProjectionSet, ProjectorConfig,
};
use cbct_core::recon::{composite, fdk};
use cbct_core::sampler::{branch_schedule, dps_sample_2d, tpdm_sample, Measurement, SweepBranch};
use cbct_core::score::EmpiricalScoreProvider;
use cbct_core::{Error, Result};

/// Display window for reconstructed attenuation slices (1/mm).
const VOLUME_PNG_WINDOW: (f64, f64) = (0.0, 0.06);
/// Default display window for reconstruction difference maps.
const DIFF_PNG_WINDOW: (f64, f64) = (-0.04, 0.07);

const METHODS: [&str; 3] = [METHOD_TPDM, METHOD_DPS, METHOD_LI];

#[derive(Parser)]
#[command(
    name = "cbct",
    version,
    about = "Cone-beam CT simulation, projection-domain metal-trace inpainting and evaluation"
)]
struct Cli {
    /// Pipeline configuration JSON (suite-config schema; defaults fill absent
    /// fields). Stage commands fall back to the dataset manifest's config.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the stage seed: generate/bench run the single case seed N;
    /// corrupt/inpaint replace their derived noise/sampler seed with N.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset: training stacks, score-model slices, per-case
    /// material volumes and implant-free projection stacks, manifest.
    Generate {
        /// Output dataset directory (must be absent or empty).
        out_dir: PathBuf,
    },
    /// Inject an implant preset into one case: corrupted stack, trace mask
    /// and the artefact reference reconstruction.
    Corrupt {
        case_dir: PathBuf,
        /// Implant preset name from the config (default: the first preset).
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Single-bin spectrum with photon noise off; also writes
        /// debug-clean-mono and debug-implant stacks so the additive
        /// collapse of the corrupted stack can be checked offline.
        #[arg(long)]
        debug_mono: bool,
    },
    /// Inpaint the masked implant trace of a corrupted case.
    Inpaint {
        case_dir: PathBuf,
        /// Inpainting method: tpdm, dps or li.
        #[arg(long, value_name = "NAME")]
        method: String,
        /// Dump the sampler state every S steps into steps-<method>/.
        #[arg(long, value_name = "S")]
        dump_every: Option<usize>,
    },
    /// FDK-reconstruct the reference, artefact and inpainted stacks of the
    /// given cases.
    Reconstruct {
        #[arg(required = true)]
        case_dirs: Vec<PathBuf>,
    },
    /// Score inpainted cases against their references; write the metrics
    /// CSV/JSON report and central-slice PNGs with difference maps.
    Evaluate {
        #[arg(required = true)]
        case_dirs: Vec<PathBuf>,
        /// Report directory (default: <dataset>/report).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the seeded tpdm/dps/li comparison suite and write its report.
    Bench {
        /// Report output directory.
        out_dir: PathBuf,
    },
}

/// Dataset manifest written by `generate` and consumed by every later stage.
#[derive(Serialize, Deserialize)]
struct Manifest {
    config: SuiteConfig,
    /// Dataset normalization constant per field-of-view variant.
    norm_consts: BTreeMap<String, f64>,
    /// Checksums of the training stacks, keyed by dataset-relative path.
    training: BTreeMap<String, String>,
    cases: Vec<ManifestCase>,
}

#[derive(Serialize, Deserialize)]
struct ManifestCase {
    label: String,
    seed: u64,
    variant: FovVariant,
    /// Dataset-relative case directory.
    path: String,
    /// SHA-256 of every file in the case directory, keyed by file name.
    checksums: BTreeMap<String, String>,
}

/// Per-case metadata written by `generate` (case.json).
#[derive(Serialize, Deserialize)]
struct CaseMeta {
    seed: u64,
    variant: FovVariant,
}

/// Metadata written by `corrupt` (corrupt.json).
#[derive(Serialize, Deserialize)]
struct CorruptMeta {
    preset: String,
    preset_index: usize,
    debug_mono: bool,
    noise_seed: u64,
}

#[derive(Serialize)]
struct RunLog<'a> {
    command: &'a str,
    config_sha256: String,
    versions: BTreeMap<&'static str, &'static str>,
    wall_seconds: f64,
    details: serde_json::Value,
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init()
        .ok();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not configure the thread pool: {e}");
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg_override = cli.config.as_deref().map(load_config).transpose()?;
    match cli.command {
        Command::Generate { out_dir } => {
            let mut cfg = cfg_override.unwrap_or_default();
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            cmd_generate(&cfg, &out_dir)
        }
        Command::Corrupt { case_dir, preset, debug_mono } => {
            cmd_corrupt(cfg_override, &case_dir, preset.as_deref(), debug_mono, cli.seed)
        }
        Command::Inpaint { case_dir, method, dump_every } => {
            cmd_inpaint(cfg_override, &case_dir, &method, dump_every, cli.seed)
        }
        Command::Reconstruct { case_dirs } => cmd_reconstruct(cfg_override, &case_dirs),
        Command::Evaluate { case_dirs, out } => cmd_evaluate(cfg_override, &case_dirs, out),
        Command::Bench { out_dir } => {
            let mut cfg = cfg_override.unwrap_or_default();
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            cmd_bench(&cfg, &out_dir)
        }
    }
}

// ---------------------------------------------------------------------------
// generate

fn cmd_generate(cfg: &SuiteConfig, out: &Path) -> Result<()> {
    let wall = Instant::now();
    cfg.validate()?;
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        return Err(Error::Config(format!(
            "refusing to write a dataset into the non-empty directory {}",
            out.display()
        )));
    }
    fs::create_dir_all(out)?;
    let result = generate_into(cfg, out, wall);
    if result.is_err() {
        // Never leave a half-written dataset behind.
        let _ = fs::remove_dir_all(out);
    }
    result
}

fn generate_into(cfg: &SuiteConfig, out: &Path, wall: Instant) -> Result<()> {
    let grid = cfg.grid()?;
    let mut norm_consts = BTreeMap::new();
    let mut training = BTreeMap::new();
    let mut cases = Vec::new();

    for &variant in &cfg.fov_variants {
        let g = cfg.geometry(variant)?;
        let vdir = out.join(variant.label());
        fs::create_dir_all(vdir.join("score-primary"))?;
        fs::create_dir_all(vdir.join("score-secondary"))?;

        log::info!("generate[{}]: {} training acquisitions", variant.label(), cfg.n_train);
        let mut stacks = Vec::with_capacity(cfg.n_train);
        for t in 0..cfg.n_train {
            let seed = cfg.train_seed_base + t as u64;
            let decomp = rasterize(&random_phantom(seed, cfg.phantom_extent_mm), &grid);
            let s = clean_acquisition(
                &decomp,
                &g,
                cfg,
                derive_seed(seed, lanes::TRAIN_NOISE, variant.index()),
            )?;
            let base = vdir.join(format!("train-{seed}"));
            io::write_stack(&base, &s, None)?;
            for ext in ["raw", "json"] {
                let rel = format!("{}/train-{seed}.{ext}", variant.label());
                training.insert(rel, io::sha256_hex(&base.with_extension(ext))?);
            }
            stacks.push(s);
        }
        let norm = stacks.iter().flat_map(|s| s.data.iter().copied()).fold(0.0f64, f64::max);
        if !(norm > 0.0) {
            return Err(Error::Numerical(
                "training projections are empty; cannot derive a normalization constant".into(),
            ));
        }
        norm_consts.insert(variant.label().to_string(), norm);

        for (t, s) in stacks.iter().enumerate() {
            let (primary, secondary) = score_slices(s, cfg.score_stride, norm);
            for (k, sl) in primary.iter().enumerate() {
                io::write_slice(&vdir.join("score-primary").join(format!("slice-{t:02}-{k:04}")), sl)?;
            }
            for (k, sl) in secondary.iter().enumerate() {
                io::write_slice(
                    &vdir.join("score-secondary").join(format!("slice-{t:02}-{k:04}")),
                    sl,
                )?;
            }
        }

        for &seed in &cfg.seeds {
            let cdir = vdir.join(format!("case-{seed}"));
            fs::create_dir_all(&cdir)?;
            let decomp = rasterize(&random_phantom(seed, cfg.phantom_extent_mm), &grid);
            io::write_volume(&cdir.join("water"), &decomp.water)?;
            io::write_volume(&cdir.join("bone"), &decomp.bone)?;
            let clean = clean_acquisition(
                &decomp,
                &g,
                cfg,
                derive_seed(seed, lanes::CLEAN_NOISE, variant.index()),
            )?;
            io::write_stack(&cdir.join("clean"), &clean, Some(norm))?;
            io::write_json(&cdir.join("case.json"), &CaseMeta { seed, variant })?;
            let mut checksums = BTreeMap::new();
            for name in [
                "water.raw", "water.json", "bone.raw", "bone.json", "clean.raw", "clean.json",
                "case.json",
            ] {
                checksums.insert(name.to_string(), io::sha256_hex(&cdir.join(name))?);
            }
            cases.push(ManifestCase {
                label: format!("seed{seed}-{}", variant.label()),
                seed,
                variant,
                path: format!("{}/case-{seed}", variant.label()),
                checksums,
            });
            log::info!("generate[{}]: case seed {seed} written", variant.label());
        }
    }

    let manifest = Manifest { config: cfg.clone(), norm_consts, training, cases };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    write_run_log(
        &out.join("run-log-generate.json"),
        "generate",
        cfg,
        wall.elapsed().as_secs_f64(),
        serde_json::json!({ "cases": manifest.cases.len(), "variants": cfg.fov_variants.len() }),
    )
}

// ---------------------------------------------------------------------------
// corrupt

fn cmd_corrupt(
    cfg_override: Option<SuiteConfig>,
    case_dir: &Path,
    preset_name: Option<&str>,
    debug_mono: bool,
    seed_override: Option<u64>,
) -> Result<()> {
    let wall = Instant::now();
    let (_root, manifest) = find_manifest(case_dir)?;
    let cfg = cfg_override.unwrap_or(manifest.config);
    let meta = read_case_meta(case_dir)?;
    let norm = norm_const(&manifest.norm_consts, meta.variant)?;

    let (preset_index, preset) = match preset_name {
        Some(name) => cfg
            .implant_presets
            .iter()
            .enumerate()
            .find(|(_, p)| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown implant preset '{name}'")))?,
        None => (0, &cfg.implant_presets[0]),
    };

    let g = cfg.geometry(meta.variant)?;
    let grid = cfg.grid()?;
    let mut decomp = rasterize(&random_phantom(meta.seed, cfg.phantom_extent_mm), &grid);
    let allow_exomass = meta.variant == FovVariant::Small;
    place_implants(&mut decomp, &preset.shapes, allow_exomass, &g)?;
    let ps = project_materials(
        &decomp,
        &g,
        cfg.metal_mu_mm_inv,
        &ProjectorConfig { step_fraction: cfg.step_fraction },
    )?;
    let mask = dilate_mask(&measurement_mask(&ps.p_implant, cfg.mask_eps)?, cfg.mask_dilate_px)?;
    if !mask.data.iter().any(|&v| v != 0.0) {
        return Err(Error::ImplantPlacement(
            "implant trace is invisible on the detector at the configured mask threshold".into(),
        ));
    }

    let noise_seed = seed_override.unwrap_or_else(|| {
        derive_seed(
            meta.seed,
            lanes::CORRUPT_NOISE,
            meta.variant.index() * 64 + preset_index as u64,
        )
    });

    let y = if debug_mono {
        // Single-bin spectrum, photon noise off: the log-normalized stack
        // collapses to the plain sum of material line integrals, which the
        // debug sidecar stacks expose for offline verification.
        let mono = Spectrum::monochromatic(60.0);
        let y = normalize_stack(&log_normalize(&beam_harden(&ps, &mono, cfg.i0)?, &mono, cfg.i0)?, norm)?;
        let clean_ps = ProjectionSet {
            p_water: ps.p_water.clone(),
            p_bone: ps.p_bone.clone(),
            p_implant: ProjectionStack::zeros(g.clone(), DomainTag::LineIntegral),
        };
        let dbg_clean = normalize_stack(
            &log_normalize(&beam_harden(&clean_ps, &mono, cfg.i0)?, &mono, cfg.i0)?,
            norm,
        )?;
        let dbg_implant = normalize_stack(&ps.p_implant, norm)?;
        io::write_stack(&case_dir.join("debug-clean-mono"), &dbg_clean, Some(norm))?;
        io::write_stack(&case_dir.join("debug-implant"), &dbg_implant, Some(norm))?;
        y
    } else {
        let counts = beam_harden(&ps, &cfg.spectrum, cfg.i0)?;
        let noisy = poissonize(
            &counts,
            &NoiseParams {
                r: cfg.background_rate,
                i0: cfg.i0,
                gaussian_sigma: 0.0,
                seed: noise_seed,
            },
        )?;
        normalize_stack(&log_normalize(&noisy, &cfg.spectrum, cfg.i0)?, norm)?
    };

    io::write_stack(&case_dir.join("y"), &y, Some(norm))?;
    io::write_stack(&case_dir.join("mask"), &mask, None)?;
    let artefact_vol = fdk(&denormalize_stack(&y, norm)?, &grid, cfg.window)?;
    io::write_volume(&case_dir.join("recon-artefact"), &artefact_vol)?;
    io::write_json(
        &case_dir.join("corrupt.json"),
        &CorruptMeta { preset: preset.name.clone(), preset_index, debug_mono, noise_seed },
    )?;
    log::info!(
        "corrupt[{}]: preset '{}'{} written",
        case_dir.display(),
        preset.name,
        if debug_mono { " (monochromatic debug)" } else { "" }
    );
    write_run_log(
        &case_dir.join("run-log-corrupt.json"),
        "corrupt",
        &cfg,
        wall.elapsed().as_secs_f64(),
        serde_json::json!({ "preset": preset.name, "debug_mono": debug_mono }),
    )
}

// ---------------------------------------------------------------------------
// inpaint

fn cmd_inpaint(
    cfg_override: Option<SuiteConfig>,
    case_dir: &Path,
    method: &str,
    dump_every: Option<usize>,
    seed_override: Option<u64>,
) -> Result<()> {
    let wall = Instant::now();
    let (root, manifest) = find_manifest(case_dir)?;
    let cfg = cfg_override.unwrap_or(manifest.config);
    let meta = read_case_meta(case_dir)?;
    let norm = norm_const(&manifest.norm_consts, meta.variant)?;
    let method = method.to_ascii_lowercase();
    if !METHODS.contains(&method.as_str()) {
        return Err(Error::Config(format!(
            "unknown inpainting method '{method}' (expected tpdm, dps or li)"
        )));
    }

    let (y, _) = require_stack(case_dir, "y")?;
    let (mask, _) = require_stack(case_dir, "mask")?;
    let schedule = cfg.schedule()?;

    if dump_every == Some(0) {
        return Err(Error::Config("--dump-every must be at least 1".into()));
    }
    let mut dump_fn;
    let mut dump_cb: Option<&mut dyn FnMut(usize, &ProjectionStack)> = None;
    if let Some(s) = dump_every {
        let dir = case_dir.join(format!("steps-{method}"));
        fs::create_dir_all(&dir)?;
        dump_fn = move |i: usize, state: &ProjectionStack| {
            if i % s == 0 {
                if let Err(e) = io::write_stack(&dir.join(format!("step-{i:04}")), state, None) {
                    log::warn!("could not dump step {i}: {e}");
                }
            }
        };
        dump_cb = Some(&mut dump_fn);
    }

    let (n_primary, n_secondary);
    let inpainted = match method.as_str() {
        METHOD_LI => {
            (n_primary, n_secondary) = (0, 0);
            li_inpaint(&y, &mask, &cfg.li)?
        }
        _ => {
            let vdir = root.join(meta.variant.label());
            let measurement = Measurement::new(y.clone(), mask.clone())?;
            let mut sampler_cfg = cfg.sampler.clone();
            let primary = EmpiricalScoreProvider::new(
                io::load_slice_dir(&vdir.join("score-primary"))?,
                schedule,
            )?;
            if method == METHOD_TPDM {
                let sched = branch_schedule(sampler_cfg.t_steps, sampler_cfg.k_alt);
                n_primary = sched.iter().filter(|b| **b == SweepBranch::Primary).count();
                n_secondary = sched.len() - n_primary;
                let secondary = EmpiricalScoreProvider::new(
                    io::load_slice_dir(&vdir.join("score-secondary"))?,
                    schedule,
                )?;
                sampler_cfg.seed = seed_override
                    .unwrap_or_else(|| derive_seed(meta.seed, lanes::SAMPLER, meta.variant.index()));
                tpdm_sample(
                    &measurement,
                    &primary,
                    &secondary,
                    &sampler_cfg,
                    &schedule,
                    dump_cb,
                )?
            } else {
                (n_primary, n_secondary) = (sampler_cfg.t_steps, 0);
                sampler_cfg.seed = seed_override.unwrap_or_else(|| {
                    derive_seed(meta.seed, lanes::SAMPLER, 7777 + meta.variant.index())
                });
                dps_sample_2d(&measurement, &primary, &sampler_cfg, &schedule, dump_cb)?
            }
        }
    };

    let composed = composite(&y, &inpainted, &mask)?;
    io::write_stack(&case_dir.join(format!("inpaint-{method}-raw")), &inpainted, Some(norm))?;
    io::write_stack(&case_dir.join(format!("inpaint-{method}")), &composed, Some(norm))?;
    log::info!(
        "inpaint[{method}]: {n_primary} conditioned primary sweeps, {n_secondary} unconditioned \
         secondary sweeps"
    );
    write_run_log(
        &case_dir.join(format!("run-log-inpaint-{method}.json")),
        "inpaint",
        &cfg,
        wall.elapsed().as_secs_f64(),
        serde_json::json!({
            "method": method,
            "t_steps": if method == METHOD_LI { 0 } else { cfg.sampler.t_steps },
            "k_alt": cfg.sampler.k_alt,
            "lambda": cfg.sampler.lambda,
            "primary_sweeps": n_primary,
            "secondary_sweeps": n_secondary,
        }),
    )
}

// ---------------------------------------------------------------------------
// reconstruct

fn cmd_reconstruct(cfg_override: Option<SuiteConfig>, case_dirs: &[PathBuf]) -> Result<()> {
    for case_dir in case_dirs {
        let wall = Instant::now();
        let (_root, manifest) = find_manifest(case_dir)?;
        let cfg = cfg_override.clone().unwrap_or(manifest.config);
        let grid = cfg.grid()?;
        let mut written = Vec::new();

        let (clean_li, _) = require_stack(case_dir, "clean")?;
        io::write_volume(&case_dir.join("vol-reference"), &fdk(&clean_li, &grid, cfg.window)?)?;
        written.push("vol-reference");

        if stack_exists(case_dir, "y") {
            let (y, c) = io::read_stack(&case_dir.join("y"))?;
            let c = sidecar_norm(c, "y")?;
            io::write_volume(
                &case_dir.join("vol-artefact"),
                &fdk(&denormalize_stack(&y, c)?, &grid, cfg.window)?,
            )?;
            written.push("vol-artefact");
        }
        for method in METHODS {
            let name = format!("inpaint-{method}");
            if stack_exists(case_dir, &name) {
                let (s, c) = io::read_stack(&case_dir.join(&name))?;
                let c = sidecar_norm(c, &name)?;
                io::write_volume(
                    &case_dir.join(format!("vol-{method}")),
                    &fdk(&denormalize_stack(&s, c)?, &grid, cfg.window)?,
                )?;
                written.push(match method {
                    METHOD_TPDM => "vol-tpdm",
                    METHOD_DPS => "vol-dps",
                    _ => "vol-li",
                });
            }
        }
        log::info!("reconstruct[{}]: {}", case_dir.display(), written.join(", "));
        write_run_log(
            &case_dir.join("run-log-reconstruct.json"),
            "reconstruct",
            &cfg,
            wall.elapsed().as_secs_f64(),
            serde_json::json!({ "volumes": written }),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Serialize)]
struct ScopePair {
    projection: Option<MetricTriple>,
    reconstruction: Option<MetricTriple>,
}

#[derive(Serialize)]
struct CaseReport {
    label: String,
    methods: BTreeMap<String, ScopePair>,
}

fn cmd_evaluate(
    cfg_override: Option<SuiteConfig>,
    case_dirs: &[PathBuf],
    out: Option<PathBuf>,
) -> Result<()> {
    let wall = Instant::now();
    let (root, first_manifest) = find_manifest(&case_dirs[0])?;
    let report_dir = out.unwrap_or_else(|| root.join("report"));
    fs::create_dir_all(report_dir.join("png"))?;
    let cfg = cfg_override.unwrap_or(first_manifest.config);

    let mut proj_rows: Vec<ReportRow> = Vec::new();
    let mut recon_rows: Vec<ReportRow> = Vec::new();
    let mut artefact_triples: Vec<MetricTriple> = Vec::new();
    let mut case_reports: Vec<CaseReport> = Vec::new();

    for case_dir in case_dirs {
        let (_root, manifest) = find_manifest(case_dir)?;
        let meta = read_case_meta(case_dir)?;
        let label = case_label(case_dir, &meta);
        let norm = norm_const(&manifest.norm_consts, meta.variant)?;

        let (clean_li, c) = require_stack(case_dir, "clean")?;
        let clean = normalize_stack(&clean_li, c.unwrap_or(norm))?;
        let vref = require_volume(case_dir, "vol-reference")?;
        write_slice_png(&report_dir, &format!("{label}-reference"), &vref, None)?;

        let methods_found: Vec<&str> = METHODS
            .iter()
            .copied()
            .filter(|m| stack_exists(case_dir, &format!("inpaint-{m}")))
            .collect();

        let mut report = CaseReport { label: label.clone(), methods: BTreeMap::new() };

        if methods_found.is_empty() && !stack_exists(case_dir, "y") {
            // Reference-only case: score the reference against itself so the
            // report schema is exercised end to end (identity rows).
            let mut ones = ProjectionStack::zeros(clean.geometry.clone(), DomainTag::Mask);
            ones.data.fill(1.0);
            let proj = masked_projection_scores(&clean, &clean, &ones, cfg.metric_mode)?;
            let rec = reconstruction_scores(&vref, &vref)?;
            proj_rows.push(aggregate("reference", "projection", &[proj])?);
            recon_rows.push(aggregate("reference", "reconstruction", &[rec])?);
            report.methods.insert(
                "reference".into(),
                ScopePair { projection: Some(proj), reconstruction: Some(rec) },
            );
            case_reports.push(report);
            continue;
        }

        let (y, _) = require_stack(case_dir, "y")?;
        let (mask, _) = require_stack(case_dir, "mask")?;

        for method in &methods_found {
            let (composed, _) = io::read_stack(&case_dir.join(format!("inpaint-{method}")))?;
            let proj = masked_projection_scores(&clean, &composed, &mask, cfg.metric_mode)?;
            let vol = require_volume(case_dir, &format!("vol-{method}"))?;
            let rec = reconstruction_scores(&vref, &vol)?;
            proj_rows.push(aggregate(method, "projection", &[proj])?);
            recon_rows.push(aggregate(method, "reconstruction", &[rec])?);
            report.methods.insert(
                method.to_string(),
                ScopePair { projection: Some(proj), reconstruction: Some(rec) },
            );
            write_slice_png(&report_dir, &format!("{label}-{method}"), &vol, Some(&vref))?;
        }

        artefact_triples.push(masked_projection_scores(&clean, &y, &mask, cfg.metric_mode)?);
        if volume_exists(case_dir, "vol-artefact") {
            let vol = require_volume(case_dir, "vol-artefact")?;
            write_slice_png(&report_dir, &format!("{label}-artefact"), &vol, Some(&vref))?;
        }
        case_reports.push(report);
    }

    let mut rows = proj_rows;
    rows.append(&mut recon_rows);
    if !artefact_triples.is_empty() {
        rows.push(aggregate("artefact", "projection", &artefact_triples)?);
    }

    let csv = rows_to_csv(&rows);
    fs::write(report_dir.join("metrics.csv"), &csv)?;
    let text = rows_to_text(&rows);
    fs::write(report_dir.join("metrics.txt"), &text)?;
    io::write_json(&report_dir.join("report.json"), &case_reports)?;
    print!("{text}");
    log::info!("evaluate: {} rows -> {}", rows.len(), report_dir.display());
    write_run_log(
        &report_dir.join("run-log-evaluate.json"),
        "evaluate",
        &cfg,
        wall.elapsed().as_secs_f64(),
        serde_json::json!({ "cases": case_dirs.len(), "rows": rows.len() }),
    )
}

/// Central axial slice PNG; with a reference, also its difference map in the
/// default difference window.
fn write_slice_png(
    report_dir: &Path,
    stem: &str,
    vol: &Volume,
    reference: Option<&Volume>,
) -> Result<()> {
    let png = report_dir.join("png");
    io::write_png(&png.join(format!("{stem}.png")), &central_slice(vol), VOLUME_PNG_WINDOW)?;
    if let Some(r) = reference {
        let diff = central_slice(vol) - central_slice(r);
        io::write_png(&png.join(format!("{stem}-diff.png")), &diff, DIFF_PNG_WINDOW)?;
    }
    Ok(())
}

fn central_slice(v: &Volume) -> Array2<f64> {
    let nz = v.data.len_of(Axis(2));
    v.data.index_axis(Axis(2), nz / 2).to_owned()
}

// ---------------------------------------------------------------------------
// bench

fn cmd_bench(cfg: &SuiteConfig, out: &Path) -> Result<()> {
    let wall = Instant::now();
    fs::create_dir_all(out)?;
    let mut progress = |msg: &str| eprintln!("[bench] {msg}");
    let report = run_benchmark(cfg, Some(&mut progress))?;

    fs::write(out.join("report.csv"), report.to_csv())?;
    io::write_json(&out.join("verdicts.json"), &report)?;
    print!("{}", rows_to_text(&report.rows));
    for v in report.verdicts_projection.iter().chain(report.verdicts_reconstruction.iter()) {
        println!(
            "ordering[{}/{}]: tpdm {:.6} dps {:.6} li {:.6} -> {}",
            v.scope,
            v.metric,
            v.tpdm_mean,
            v.dps_mean,
            v.li_mean,
            if v.pass { "pass" } else { "fail" }
        );
    }
    println!("projection ordering majority: {}", report.projection_ordering_majority);
    println!("wall-time ratio dps/tpdm: {:.3}", report.walltime_ratio_dps_over_tpdm);
    write_run_log(
        &out.join("run-log-bench.json"),
        "bench",
        cfg,
        wall.elapsed().as_secs_f64(),
        serde_json::json!({
            "cases": report.cases.len(),
            "projection_ordering_majority": report.projection_ordering_majority,
            "walltime_ratio_dps_over_tpdm": report.walltime_ratio_dps_over_tpdm,
        }),
    )
}

// ---------------------------------------------------------------------------
// shared plumbing

fn load_config(path: &Path) -> Result<SuiteConfig> {
    io::read_json(path)
        .map_err(|e| Error::Config(format!("failed to load config {}: {e}", path.display())))
}

/// Walk up from a case directory to the dataset root (the directory holding
/// manifest.json).
fn find_manifest(start: &Path) -> Result<(PathBuf, Manifest)> {
    let mut dir = start
        .canonicalize()
        .map_err(|_| Error::MissingInput(format!("case directory {} not found", start.display())))?;
    loop {
        let m = dir.join("manifest.json");
        if m.is_file() {
            return Ok((dir.clone(), io::read_json(&m)?));
        }
        if !dir.pop() {
            return Err(Error::MissingInput(format!(
                "no manifest.json found above {}; run generate first",
                start.display()
            )));
        }
    }
}

fn read_case_meta(case_dir: &Path) -> Result<CaseMeta> {
    let p = case_dir.join("case.json");
    if !p.is_file() {
        return Err(Error::MissingInput(format!(
            "{} is not a case directory (case.json missing)",
            case_dir.display()
        )));
    }
    io::read_json(&p)
}

fn norm_const(consts: &BTreeMap<String, f64>, variant: FovVariant) -> Result<f64> {
    consts.get(variant.label()).copied().ok_or_else(|| {
        Error::Config(format!("manifest lacks a normalization constant for {}", variant.label()))
    })
}

fn stack_exists(dir: &Path, name: &str) -> bool {
    dir.join(format!("{name}.json")).is_file() && dir.join(format!("{name}.raw")).is_file()
}

fn volume_exists(dir: &Path, name: &str) -> bool {
    stack_exists(dir, name)
}

fn require_stack(dir: &Path, name: &str) -> Result<(ProjectionStack, Option<f64>)> {
    if !stack_exists(dir, name) {
        return Err(Error::MissingInput(format!(
            "{name} not found in {} (run the earlier pipeline stage first)",
            dir.display()
        )));
    }
    io::read_stack(&dir.join(name))
}

fn require_volume(dir: &Path, name: &str) -> Result<Volume> {
    if !volume_exists(dir, name) {
        return Err(Error::MissingInput(format!(
            "{name} not found in {} (run reconstruct first)",
            dir.display()
        )));
    }
    io::read_volume(&dir.join(name))
}

fn sidecar_norm(c: Option<f64>, name: &str) -> Result<f64> {
    c.ok_or_else(|| {
        Error::Config(format!("stack {name} has no normalization constant in its sidecar"))
    })
}

/// Case label for reports: seed + implant preset (when corrupted) + variant.
fn case_label(case_dir: &Path, meta: &CaseMeta) -> String {
    match io::read_json::<CorruptMeta>(&case_dir.join("corrupt.json")) {
        Ok(c) => format!("seed{}-{}-{}", meta.seed, c.preset, meta.variant.label()),
        Err(_) => format!("seed{}-{}", meta.seed, meta.variant.label()),
    }
}

fn write_run_log(
    path: &Path,
    command: &str,
    cfg: &SuiteConfig,
    wall_seconds: f64,
    details: serde_json::Value,
) -> Result<()> {
    let cfg_bytes = serde_json::to_vec(cfg)?;
    let mut h = Sha256::new();
    h.update(&cfg_bytes);
    let config_sha256 = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let versions = BTreeMap::from([
        ("cbct-cli", env!("CARGO_PKG_VERSION")),
        ("cbct-core", env!("CARGO_PKG_VERSION")),
    ]);
    io::write_json(path, &RunLog { command, config_sha256, versions, wall_seconds, details })
}
