//! End-to-end tests of the `cbct` binary over miniature datasets.
//!
//! Each test builds its own temporary dataset with a small geometry so the
//! whole file runs in well under a minute.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Axis;
use tempfile::TempDir;

use cbct_core::benchmark::{FovVariant, ImplantPreset, SuiteConfig};
use cbct_core::geometry::{DomainTag, ProjectionStack};
use cbct_core::io;
use cbct_core::phantom::ImplantShape;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbct")).args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn interior_preset() -> ImplantPreset {
    ImplantPreset {
        name: "post".into(),
        shapes: vec![ImplantShape::ZCylinder {
            center_mm: [6.0, 4.0, 0.0],
            radius_mm: 3.0,
            half_length_mm: 8.0,
        }],
    }
}

/// A sphere whose radial extent exceeds the 15 mm field of view but stays
/// inside the detector shadow.
fn exomass_preset() -> ImplantPreset {
    ImplantPreset {
        name: "exo".into(),
        shapes: vec![ImplantShape::Sphere { center_mm: [13.0, 6.0, 0.0], radius_mm: 2.5 }],
    }
}

fn tiny_config(seeds: &[u64], variants: &[FovVariant], presets: Vec<ImplantPreset>) -> SuiteConfig {
    let mut cfg = SuiteConfig::default();
    cfg.seeds = seeds.to_vec();
    cfg.fov_variants = variants.to_vec();
    cfg.implant_presets = presets;
    cfg.n_train = 2;
    cfg.score_stride = 8;
    cfg.n_cols = 32;
    cfg.n_rows_large = 32;
    cfg.n_rows_small = 16;
    cfg.n_angles = 24;
    cfg.fov_radius_large_mm = 15.0;
    cfg.fov_radius_small_mm = 15.0;
    cfg.grid_n = 32;
    cfg.grid_spacing_mm = 2.5;
    cfg.sampler.t_steps = 8;
    cfg
}

fn write_config(dir: &Path, name: &str, cfg: &SuiteConfig) -> PathBuf {
    let p = dir.join(name);
    io::write_json(&p, cfg).unwrap();
    p
}

/// Run `generate` into `<tmp>/<name>` and return the dataset root.
fn generate(tmp: &Path, cfg: &SuiteConfig, name: &str) -> PathBuf {
    let cfg_path = write_config(tmp, &format!("config-{name}.json"), cfg);
    let out = tmp.join(name);
    let r = run(&["--config", cfg_path.to_str().unwrap(), "generate", out.to_str().unwrap()]);
    assert_exit(&r, 0);
    out
}

#[test]
fn generate_writes_manifest_with_checksums_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&[1, 2], &[FovVariant::Large], vec![interior_preset()]);
    let a = generate(tmp.path(), &cfg, "a");
    let b = generate(tmp.path(), &cfg, "b");

    let ma: serde_json::Value = io::read_json(&a.join("manifest.json")).unwrap();
    let cases = ma["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 2, "two seeds make two cases");
    for c in cases {
        assert!(!c["checksums"].as_object().unwrap().is_empty());
    }

    let mb: serde_json::Value = io::read_json(&b.join("manifest.json")).unwrap();
    assert_eq!(ma["cases"], mb["cases"], "same config and seeds must give identical checksums");
    assert_eq!(ma["training"], mb["training"]);

    // Both score-model views are sliced out of the training stacks:
    // 2 stacks, 24 angles at stride 8 -> 6 primary slices (one .raw + .json each).
    let n_primary = fs::read_dir(a.join("large/score-primary")).unwrap().count();
    assert_eq!(n_primary, 12);
    assert!(a.join("large/case-1/water.raw").is_file());
    assert!(a.join("large/case-1/clean.json").is_file());
    assert!(a.join("run-log-generate.json").is_file());

    // Refusing to clobber an existing dataset is a config error.
    let cfg_path = write_config(tmp.path(), "config-clobber.json", &cfg);
    let r = run(&["--config", cfg_path.to_str().unwrap(), "generate", a.to_str().unwrap()]);
    assert_exit(&r, 2);

    // An invalid config (test seed inside the training range) exits 2 and
    // leaves no partial outputs behind.
    let mut bad = cfg.clone();
    bad.seeds = vec![100];
    let bad_path = write_config(tmp.path(), "config-bad.json", &bad);
    let out = tmp.path().join("bad");
    let r = run(&["--config", bad_path.to_str().unwrap(), "generate", out.to_str().unwrap()]);
    assert_exit(&r, 2);
    assert!(!out.exists(), "failed generate must remove partial outputs");
}

#[test]
fn corrupt_debug_mono_is_additive_and_normal_mode_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&[1], &[FovVariant::Large], vec![interior_preset()]);
    let ds = generate(tmp.path(), &cfg, "ds");
    let case = ds.join("large/case-1");
    let case_s = case.to_str().unwrap();

    assert_exit(&run(&["corrupt", case_s, "--debug-mono"]), 0);
    let (y, _) = io::read_stack(&case.join("y")).unwrap();
    assert_eq!(y.domain, DomainTag::Normalized);
    let (clean, _) = io::read_stack(&case.join("debug-clean-mono")).unwrap();
    let (implant, _) = io::read_stack(&case.join("debug-implant")).unwrap();
    let max_dev = y
        .data
        .iter()
        .zip(clean.data.iter().zip(implant.data.iter()))
        .map(|(yv, (cv, iv))| (yv - (cv + iv)).abs())
        .fold(0.0f64, f64::max);
    // Stacks are stored as f32, which bounds the additive identity residual.
    assert!(max_dev < 2e-5, "monochromatic stack must be clean + implant, got deviation {max_dev}");

    // The implant trace must show up in at least 90% of the angles.
    let (mask, _) = io::read_stack(&case.join("mask")).unwrap();
    let n_angles = mask.data.len_of(Axis(2));
    let covered = (0..n_angles)
        .filter(|&k| mask.data.index_axis(Axis(2), k).iter().any(|&v| v != 0.0))
        .count();
    assert!(covered * 10 >= n_angles * 9, "mask covers only {covered}/{n_angles} angles");
    assert!(case.join("recon-artefact.raw").is_file());

    // Re-corrupting with the same seed reproduces the stack bit for bit, at
    // any thread count.
    assert_exit(&run(&["corrupt", case_s]), 0);
    let h1 = io::sha256_hex(&case.join("y.raw")).unwrap();
    assert_exit(&run(&["--threads", "2", "corrupt", case_s]), 0);
    let h2 = io::sha256_hex(&case.join("y.raw")).unwrap();
    assert_eq!(h1, h2, "corrupted stack must not depend on the thread count");
}

#[test]
fn corrupt_allows_exomass_only_in_the_small_variant() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&[1], &[FovVariant::Large, FovVariant::Small], vec![exomass_preset()]);
    let ds = generate(tmp.path(), &cfg, "ds");

    // Outside the small field of view, but exomass placement is allowed there.
    assert_exit(&run(&["corrupt", ds.join("small/case-1").to_str().unwrap()]), 0);
    // The large variant rejects the same implant as unplaceable.
    assert_exit(&run(&["corrupt", ds.join("large/case-1").to_str().unwrap()]), 3);
    // Unknown preset names are config errors.
    let r = run(&["corrupt", ds.join("small/case-1").to_str().unwrap(), "--preset", "nope"]);
    assert_exit(&r, 2);
}

#[test]
fn inpaint_li_with_empty_mask_reproduces_the_input() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&[1], &[FovVariant::Large], vec![interior_preset()]);
    let ds = generate(tmp.path(), &cfg, "ds");
    let case = ds.join("large/case-1");
    let case_s = case.to_str().unwrap();
    assert_exit(&run(&["corrupt", case_s]), 0);

    // Nothing masked: the composite must equal the corrupted stack exactly.
    let (mask, _) = io::read_stack(&case.join("mask")).unwrap();
    let empty = ProjectionStack::zeros(mask.geometry.clone(), DomainTag::Mask);
    io::write_stack(&case.join("mask"), &empty, None).unwrap();
    assert_exit(&run(&["inpaint", case_s, "--method", "li"]), 0);
    assert_eq!(
        fs::read(case.join("y.raw")).unwrap(),
        fs::read(case.join("inpaint-li.raw")).unwrap(),
        "empty mask must leave the stack untouched"
    );

    // A mask with the wrong shape is a shape-mismatch error.
    let mut small = cfg.clone();
    small.n_rows_large = 16;
    let bad_mask = ProjectionStack::zeros(small.geometry(FovVariant::Large).unwrap(), DomainTag::Mask);
    io::write_stack(&case.join("mask"), &bad_mask, None).unwrap();
    assert_exit(&run(&["inpaint", case_s, "--method", "li"]), 4);

    // Unknown methods are config errors.
    assert_exit(&run(&["inpaint", case_s, "--method", "wavelet"]), 2);
}

#[test]
fn inpaint_logs_sweep_counts_and_dumps_intermediate_states() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&[1], &[FovVariant::Large], vec![interior_preset()]);
    let ds = generate(tmp.path(), &cfg, "ds");
    let case = ds.join("large/case-1");
    let case_s = case.to_str().unwrap();
    assert_exit(&run(&["corrupt", case_s]), 0);

    // T=8, K=2: half the sweeps are conditioned primary sweeps, half are
    // unconditioned perpendicular sweeps; together they cover all T steps.
    assert_exit(&run(&["inpaint", case_s, "--method", "tpdm", "--dump-every", "2"]), 0);
    let log: serde_json::Value = io::read_json(&case.join("run-log-inpaint-tpdm.json")).unwrap();
    assert_eq!(log["details"]["primary_sweeps"], 4);
    assert_eq!(log["details"]["secondary_sweeps"], 4);
    assert!(case.join("inpaint-tpdm.raw").is_file());
    assert!(case.join("inpaint-tpdm-raw.raw").is_file());
    let dumps = fs::read_dir(case.join("steps-tpdm"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "raw"))
        .count();
    assert_eq!(dumps, 4, "steps 0, 2, 4 and 6 are dumped");

    // The 2D baseline sampler runs a primary-only schedule.
    assert_exit(&run(&["inpaint", case_s, "--method", "dps"]), 0);
    let log: serde_json::Value = io::read_json(&case.join("run-log-inpaint-dps.json")).unwrap();
    assert_eq!(log["details"]["primary_sweeps"], 8);
    assert_eq!(log["details"]["secondary_sweeps"], 0);
}

#[test]
fn full_pipeline_report_has_the_expected_schema_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&[1, 2], &[FovVariant::Large], vec![interior_preset()]);
    let ds = generate(tmp.path(), &cfg, "ds");
    let case_dirs: Vec<String> = [1, 2]
        .iter()
        .map(|s| ds.join(format!("large/case-{s}")).to_str().unwrap().to_string())
        .collect();

    for case in &case_dirs {
        assert_exit(&run(&["corrupt", case]), 0);
        for method in ["tpdm", "dps", "li"] {
            assert_exit(&run(&["inpaint", case, "--method", method]), 0);
        }
    }
    assert_exit(&run(&["reconstruct", &case_dirs[0], &case_dirs[1]]), 0);

    let rep1 = tmp.path().join("rep1");
    let rep2 = tmp.path().join("rep2");
    for rep in [&rep1, &rep2] {
        let r = run(&["evaluate", &case_dirs[0], &case_dirs[1], "--out", rep.to_str().unwrap()]);
        assert_exit(&r, 0);
    }

    // 3 methods x 2 cases in each scope, plus the aggregated artefact row.
    let csv = fs::read_to_string(rep1.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 14, "header + 6 projection + 6 reconstruction + artefact:\n{csv}");
    assert_eq!(lines[0], "method,scope,ssim_mean,ssim_std,psnr_mean,psnr_std,rmse_mean,rmse_std,n_cases");
    assert_eq!(lines.iter().filter(|l| l.contains(",projection,")).count(), 7);
    assert_eq!(lines.iter().filter(|l| l.contains(",reconstruction,")).count(), 6);
    let artefact = lines[13];
    assert!(artefact.starts_with("artefact,projection,"));
    assert!(artefact.ends_with(",2"), "artefact row aggregates both cases: {artefact}");

    // Rerunning evaluation reproduces the CSV byte for byte.
    assert_eq!(
        fs::read(rep1.join("metrics.csv")).unwrap(),
        fs::read(rep2.join("metrics.csv")).unwrap()
    );

    for stem in ["seed1-post-large-tpdm", "seed1-post-large-tpdm-diff", "seed2-post-large-reference"] {
        assert!(rep1.join(format!("png/{stem}.png")).is_file(), "missing {stem}.png");
    }
    assert!(rep1.join("report.json").is_file());
    assert!(rep1.join("run-log-evaluate.json").is_file());
}

#[test]
fn evaluate_reference_only_yields_identity_rows_and_missing_volumes_fail() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(&[1], &[FovVariant::Large], vec![interior_preset()]);
    let ds = generate(tmp.path(), &cfg, "ds");
    let case = ds.join("large/case-1");
    let case_s = case.to_str().unwrap();

    // Without reconstruction, evaluation has nothing to score.
    assert_exit(&run(&["evaluate", case_s]), 5);

    assert_exit(&run(&["reconstruct", case_s]), 0);
    assert!(case.join("vol-reference.raw").is_file());
    let rep = tmp.path().join("rep");
    assert_exit(&run(&["evaluate", case_s, "--out", rep.to_str().unwrap()]), 0);
    let csv = fs::read_to_string(rep.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header + identity row per scope:\n{csv}");
    for line in &lines[1..] {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], "reference");
        assert_eq!(f[2].parse::<f64>().unwrap(), 1.0, "identity ssim");
        assert_eq!(f[4].parse::<f64>().unwrap(), 200.0, "identity psnr is capped");
        assert_eq!(f[6].parse::<f64>().unwrap(), 0.0, "identity rmse");
    }
}
