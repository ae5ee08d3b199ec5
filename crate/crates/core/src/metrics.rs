//! Image-quality metrics (RMSE, PSNR, SSIM) and score-table generation.
//!
//! Metrics accept 2D or 3D arrays. SSIM uses a separable Gaussian window
//! (sigma 1.5, 11 taps per axis); windows that straddle the image edge are
//! renormalized over their in-bounds support. An optional mask restricts the
//! evaluation to selected pixels; for SSIM the mask selects window *centers*
//! while the window itself may still read neighbouring context.

use ndarray::{ArrayD, ArrayViewD, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SSIM window: 11 Gaussian taps with sigma 1.5 per axis.
const WINDOW_WIDTH: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn window_weights() -> [f64; WINDOW_WIDTH] {
    let mut w = [0.0; WINDOW_WIDTH];
    let half = (WINDOW_WIDTH / 2) as i64;
    let mut sum = 0.0;
    for (m, slot) in w.iter_mut().enumerate() {
        let n = m as i64 - half;
        *slot = (-((n * n) as f64) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
        sum += *slot;
    }
    for slot in w.iter_mut() {
        *slot /= sum;
    }
    w
}

/// Separable zero-extended Gaussian correlation along every axis.
fn blur(x: &ArrayD<f64>, w: &[f64; WINDOW_WIDTH]) -> ArrayD<f64> {
    let half = (WINDOW_WIDTH / 2) as i64;
    let mut cur = x.clone();
    for axis in 0..x.ndim() {
        let mut next = ArrayD::<f64>::zeros(cur.raw_dim());
        Zip::from(next.lanes_mut(Axis(axis)))
            .and(cur.lanes(Axis(axis)))
            .for_each(|mut out, lane| {
                let n = lane.len() as i64;
                for p in 0..n {
                    let mut acc = 0.0;
                    for (m, &wm) in w.iter().enumerate() {
                        let q = p + m as i64 - half;
                        if q >= 0 && q < n {
                            acc += wm * lane[q as usize];
                        }
                    }
                    out[p as usize] = acc;
                }
            });
        cur = next;
    }
    cur
}

fn check_pair(a: &ArrayViewD<'_, f64>, b: &ArrayViewD<'_, f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(a.ndim() == 2 || a.ndim() == 3) {
        return Err(Error::Config(format!(
            "metrics accept 2D or 3D arrays, got {} dimensions",
            a.ndim()
        )));
    }
    Ok(())
}

fn check_mask(a: &ArrayViewD<'_, f64>, mask: Option<&ArrayViewD<'_, f64>>) -> Result<()> {
    if let Some(m) = mask {
        if m.shape() != a.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask shape {:?} does not match data shape {:?}",
                m.shape(),
                a.shape()
            )));
        }
        if !m.iter().any(|&v| v != 0.0) {
            return Err(Error::Config("metric mask selects no pixels".into()));
        }
    }
    Ok(())
}

/// Root-mean-square error over all pixels, or over the masked pixels only.
pub fn rmse(
    a: ArrayViewD<'_, f64>,
    b: ArrayViewD<'_, f64>,
    mask: Option<ArrayViewD<'_, f64>>,
) -> Result<f64> {
    check_pair(&a, &b)?;
    check_mask(&a, mask.as_ref())?;
    let mut sum = 0.0;
    let mut n = 0usize;
    match mask {
        Some(m) => {
            Zip::from(&a).and(&b).and(&m).for_each(|&x, &y, &s| {
                if s != 0.0 {
                    sum += (x - y) * (x - y);
                    n += 1;
                }
            });
        }
        None => {
            Zip::from(&a).and(&b).for_each(|&x, &y| {
                sum += (x - y) * (x - y);
            });
            n = a.len();
        }
    }
    if n == 0 {
        return Err(Error::Config("metric selection is empty".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Peak signal-to-noise ratio in dB, capped at 200 dB for near-exact matches.
pub fn psnr(
    a: ArrayViewD<'_, f64>,
    b: ArrayViewD<'_, f64>,
    data_range: f64,
    mask: Option<ArrayViewD<'_, f64>>,
) -> Result<f64> {
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::Config(format!(
            "psnr data range must be positive and finite, got {data_range}"
        )));
    }
    let e = rmse(a, b, mask)?;
    if e < data_range * 1e-10 {
        return Ok(200.0);
    }
    Ok(20.0 * (data_range / e).log10())
}

/// Per-pixel SSIM map with boundary-renormalized Gaussian windows.
fn ssim_map(
    a: &ArrayViewD<'_, f64>,
    b: &ArrayViewD<'_, f64>,
    data_range: f64,
) -> Result<ArrayD<f64>> {
    for (axis, &len) in a.shape().iter().enumerate() {
        if len < WINDOW_WIDTH {
            return Err(Error::Config(format!(
                "ssim window ({WINDOW_WIDTH} wide) exceeds image extent {len} along axis {axis}"
            )));
        }
    }
    let w = window_weights();
    let a_o = a.to_owned();
    let b_o = b.to_owned();
    let norm = blur(&ArrayD::from_elem(a.raw_dim(), 1.0), &w);
    let mut mu_a = blur(&a_o, &w);
    let mut mu_b = blur(&b_o, &w);
    let mut e_aa = blur(&(&a_o * &a_o), &w);
    let mut e_bb = blur(&(&b_o * &b_o), &w);
    let mut e_ab = blur(&(&a_o * &b_o), &w);
    for f in [&mut mu_a, &mut mu_b, &mut e_aa, &mut e_bb, &mut e_ab] {
        Zip::from(&mut **f).and(&norm).for_each(|v, &n| *v /= n);
    }
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let mut map = ArrayD::<f64>::zeros(a.raw_dim());
    Zip::from(&mut map)
        .and(&mu_a)
        .and(&mu_b)
        .and(&e_aa)
        .and(&e_bb)
        .and(&e_ab)
        .for_each(|m, &ma, &mb, &aa, &bb, &ab| {
            let va = aa - ma * ma;
            let vb = bb - mb * mb;
            let cov = ab - ma * mb;
            *m = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        });
    Ok(map)
}

/// Structural similarity, averaged over all pixels or over mask-selected
/// window centers.
pub fn ssim(
    a: ArrayViewD<'_, f64>,
    b: ArrayViewD<'_, f64>,
    data_range: f64,
    mask: Option<ArrayViewD<'_, f64>>,
) -> Result<f64> {
    check_pair(&a, &b)?;
    check_mask(&a, mask.as_ref())?;
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(Error::Config(format!(
            "ssim data range must be positive and finite, got {data_range}"
        )));
    }
    let map = ssim_map(&a, &b, data_range)?;
    let (sum, n) = match mask {
        Some(m) => {
            let mut sum = 0.0;
            let mut n = 0usize;
            Zip::from(&map).and(&m).for_each(|&v, &s| {
                if s != 0.0 {
                    sum += v;
                    n += 1;
                }
            });
            (sum, n)
        }
        None => (map.sum(), map.len()),
    };
    Ok(sum / n as f64)
}

/// The three scores reported for one method on one case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub ssim: f64,
    pub psnr: f64,
    pub rmse: f64,
}

/// How projection-scope metrics combine the masked pixels of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMetricMode {
    /// Pool masked pixels / window centers across all angle slices.
    #[default]
    Pooled,
    /// Score each angle slice separately and average over nonempty slices.
    PerSlice,
}

/// Masked projection-scope scores: metrics restricted to the masked region,
/// evaluated per 2D angle slice with the reference stack's value range.
pub fn masked_projection_scores(
    reference: &crate::geometry::ProjectionStack,
    candidate: &crate::geometry::ProjectionStack,
    mask: &crate::geometry::ProjectionStack,
    mode: ProjectionMetricMode,
) -> Result<MetricTriple> {
    use crate::geometry::DomainTag;
    if mask.domain != DomainTag::Mask {
        return Err(Error::Config(format!(
            "projection metrics need a mask-domain stack, got {:?}",
            mask.domain
        )));
    }
    let dims = reference.data.dim();
    if candidate.data.dim() != dims || mask.data.dim() != dims {
        return Err(Error::ShapeMismatch(format!(
            "projection metric shapes differ: reference {:?}, candidate {:?}, mask {:?}",
            dims,
            candidate.data.dim(),
            mask.data.dim()
        )));
    }
    let range = value_range(&reference.data.view().into_dyn())?;
    let n_angles = dims.2;

    let mut pooled_sq = 0.0;
    let mut pooled_ssim = 0.0;
    let mut pooled_n = 0usize;
    let mut per_slice: Vec<MetricTriple> = Vec::new();

    for k in 0..n_angles {
        let mk = mask.data.index_axis(Axis(2), k);
        if !mk.iter().any(|&v| v != 0.0) {
            continue;
        }
        let rk = reference.data.index_axis(Axis(2), k);
        let ck = candidate.data.index_axis(Axis(2), k);
        let map = ssim_map(&rk.into_dyn(), &ck.into_dyn(), range)?;
        let mut sq = 0.0;
        let mut ss = 0.0;
        let mut n = 0usize;
        Zip::from(&map)
            .and(&rk.into_dyn())
            .and(&ck.into_dyn())
            .and(&mk.into_dyn())
            .for_each(|&sv, &rv, &cv, &mv| {
                if mv != 0.0 {
                    sq += (rv - cv) * (rv - cv);
                    ss += sv;
                    n += 1;
                }
            });
        pooled_sq += sq;
        pooled_ssim += ss;
        pooled_n += n;
        let e = (sq / n as f64).sqrt();
        per_slice.push(MetricTriple {
            ssim: ss / n as f64,
            psnr: psnr_from_rmse(e, range),
            rmse: e,
        });
    }
    if pooled_n == 0 {
        return Err(Error::Config("projection metric mask selects no pixels".into()));
    }
    match mode {
        ProjectionMetricMode::Pooled => {
            let e = (pooled_sq / pooled_n as f64).sqrt();
            Ok(MetricTriple {
                ssim: pooled_ssim / pooled_n as f64,
                psnr: psnr_from_rmse(e, range),
                rmse: e,
            })
        }
        ProjectionMetricMode::PerSlice => {
            let n = per_slice.len() as f64;
            Ok(MetricTriple {
                ssim: per_slice.iter().map(|t| t.ssim).sum::<f64>() / n,
                psnr: per_slice.iter().map(|t| t.psnr).sum::<f64>() / n,
                rmse: per_slice.iter().map(|t| t.rmse).sum::<f64>() / n,
            })
        }
    }
}

/// Whole-volume reconstruction-scope scores with the reference volume's range.
pub fn reconstruction_scores(
    reference: &crate::geometry::Volume,
    candidate: &crate::geometry::Volume,
) -> Result<MetricTriple> {
    if reference.data.dim() != candidate.data.dim() {
        return Err(Error::ShapeMismatch(format!(
            "volume metric shapes differ: {:?} vs {:?}",
            reference.data.dim(),
            candidate.data.dim()
        )));
    }
    let a = reference.data.view().into_dyn();
    let b = candidate.data.view().into_dyn();
    let range = value_range(&a)?;
    Ok(MetricTriple {
        ssim: ssim(a.clone(), b.clone(), range, None)?,
        psnr: psnr(a.clone(), b.clone(), range, None)?,
        rmse: rmse(a, b, None)?,
    })
}

fn psnr_from_rmse(e: f64, range: f64) -> f64 {
    if e < range * 1e-10 {
        200.0
    } else {
        20.0 * (range / e).log10()
    }
}

/// `max - min` of the reference data; errors when degenerate.
pub fn value_range(a: &ArrayViewD<'_, f64>) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in a.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let r = hi - lo;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Numerical(format!(
            "reference data range is degenerate ({r})"
        )));
    }
    Ok(r)
}

/// One aggregated row of the score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// `projection` (masked projections) or `reconstruction` (whole volumes).
    pub scope: String,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub n_cases: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

/// Aggregate per-case scores for one method and scope into a table row.
pub fn aggregate(method: &str, scope: &str, cases: &[MetricTriple]) -> Result<ReportRow> {
    if cases.is_empty() {
        return Err(Error::Config(format!(
            "no cases to aggregate for method '{method}' ({scope})"
        )));
    }
    let ssim: Vec<f64> = cases.iter().map(|c| c.ssim).collect();
    let psnr: Vec<f64> = cases.iter().map(|c| c.psnr).collect();
    let rmse: Vec<f64> = cases.iter().map(|c| c.rmse).collect();
    let (sm, ss) = mean_std(&ssim);
    let (pm, ps) = mean_std(&psnr);
    let (rm, rs) = mean_std(&rmse);
    Ok(ReportRow {
        method: method.to_string(),
        scope: scope.to_string(),
        ssim_mean: sm,
        ssim_std: ss,
        psnr_mean: pm,
        psnr_std: ps,
        rmse_mean: rm,
        rmse_std: rs,
        n_cases: cases.len(),
    })
}

/// Serialize rows to CSV with a fixed column schema.
pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "method,scope,ssim_mean,ssim_std,psnr_mean,psnr_std,rmse_mean,rmse_std,n_cases\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.4},{:.4},{:.6e},{:.6e},{}\n",
            r.method,
            r.scope,
            r.ssim_mean,
            r.ssim_std,
            r.psnr_mean,
            r.psnr_std,
            r.rmse_mean,
            r.rmse_std,
            r.n_cases
        ));
    }
    out
}

/// Human-readable aligned table of the same rows.
pub fn rows_to_text(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<10} {:<15} {:>18} {:>18} {:>22}\n",
        "method", "scope", "ssim", "psnr [dB]", "rmse"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<15} {:>9.4} ±{:>6.4} {:>9.2} ±{:>6.2} {:>12.4e} ±{:>8.2e}\n",
            r.method, r.scope, r.ssim_mean, r.ssim_std, r.psnr_mean, r.psnr_std, r.rmse_mean,
            r.rmse_std
        ));
    }
    out
}
