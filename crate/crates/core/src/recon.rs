//! Filtered-backprojection reconstruction (Feldkamp/FDK) and the
//! projection-compositing step that precedes it.
//!
//! The FDK pipeline: cosine-weight each detector pixel, ramp-filter every
//! detector row with an FFT, then backproject with fan distance weighting.
//! Full circular scans only; the angle list must be uniform over `[0, 2*pi)`.

use ndarray::{Array2, Array3, Axis, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DomainTag, ProjectionStack, UnitTag, Volume, VolumeGrid};

/// Apodization applied on top of the ramp filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterWindow {
    /// Pure ramp (|f|) response.
    RamLak,
    /// Ramp multiplied by a Hann window that falls to zero at Nyquist.
    Hann,
}

impl Default for FilterWindow {
    fn default() -> Self {
        FilterWindow::Hann
    }
}

/// Number of pixels of constant edge extension applied to every detector row
/// before filtering, to suppress truncation ringing at the row ends.
pub const ROW_EXTENSION: usize = 16;

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Discrete ramp filter for rows of a fixed padded length.
///
/// The frequency response is the FFT of the closed-form spatial ramp kernel
/// `h[0] = 1/(4 tau^2)`, `h[n odd] = -1/(pi^2 n^2 tau^2)`, `h[n even] = 0`,
/// with the DC bin forced to exactly zero so constant rows map to zero.
pub struct RampFilter {
    len: usize,
    pixel_size_mm: f64,
    response: Vec<f64>,
}

impl RampFilter {
    pub fn new(len: usize, pixel_size_mm: f64, window: FilterWindow) -> Result<Self> {
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Config(format!(
                "ramp filter length must be a power of two >= 2, got {len}"
            )));
        }
        if !(pixel_size_mm > 0.0 && pixel_size_mm.is_finite()) {
            return Err(Error::Config(format!(
                "pixel size must be positive and finite, got {pixel_size_mm}"
            )));
        }
        let tau = pixel_size_mm;
        let mut kernel = vec![Complex::new(0.0, 0.0); len];
        for (m, slot) in kernel.iter_mut().enumerate() {
            let n = if m <= len / 2 {
                m as i64
            } else {
                m as i64 - len as i64
            };
            let h = if n == 0 {
                1.0 / (4.0 * tau * tau)
            } else if n % 2 != 0 {
                -1.0 / (std::f64::consts::PI.powi(2) * (n * n) as f64 * tau * tau)
            } else {
                0.0
            };
            *slot = Complex::new(h, 0.0);
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        fft.process(&mut kernel);
        let mut response: Vec<f64> = kernel.iter().map(|c| c.re).collect();
        response[0] = 0.0;
        if window == FilterWindow::Hann {
            for (m, r) in response.iter_mut().enumerate() {
                let w = 0.5 * (1.0 + (std::f64::consts::TAU * m as f64 / len as f64).cos());
                *r *= w;
            }
        }
        Ok(Self {
            len,
            pixel_size_mm,
            response,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Real frequency response, one value per FFT bin.
    pub fn frequency_response(&self) -> &[f64] {
        &self.response
    }

    /// Circularly filter one padded row in place (length must equal `len`).
    /// The result carries the detector-sampling scale `tau`, i.e. it equals
    /// `tau * (row (*) kernel)`.
    pub fn apply(&self, row: &mut [f64]) -> Result<()> {
        if row.len() != self.len {
            return Err(Error::ShapeMismatch(format!(
                "filter row length {} does not match filter length {}",
                row.len(),
                self.len
            )));
        }
        let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(self.len).process(&mut buf);
        for (b, &r) in buf.iter_mut().zip(self.response.iter()) {
            *b *= r;
        }
        planner.plan_fft_inverse(self.len).process(&mut buf);
        let scale = self.pixel_size_mm / self.len as f64;
        for (dst, b) in row.iter_mut().zip(buf.iter()) {
            *dst = b.re * scale;
        }
        Ok(())
    }
}

/// Padded row length used when filtering rows of `n_rows` pixels.
pub fn padded_row_len(n_rows: usize) -> usize {
    next_pow2(2 * (n_rows + 2 * ROW_EXTENSION))
}

/// Cosine-weight and ramp-filter every detector row of the stack.
///
/// Rows run along the `j` axis. Each row is constant-extended by
/// [`ROW_EXTENSION`] pixels on both ends and zero-padded before the FFT.
pub fn filter_stack(
    stack: &ProjectionStack,
    window: FilterWindow,
) -> Result<ProjectionStack> {
    if stack.domain != DomainTag::LineIntegral {
        return Err(Error::Config(format!(
            "reconstruction expects line-integral projections, got {:?}",
            stack.domain
        )));
    }
    let g = &stack.geometry;
    let (d1, d2, d3) = stack.dims();
    let len = padded_row_len(d2);
    let filter = RampFilter::new(len, g.pixel_size_mm, window)?;
    let tau = g.pixel_size_mm;
    let dsd = g.dsd_mm;

    // Cosine weights depend only on the detector pixel, not the angle.
    let mut cos_w = Array2::<f64>::zeros((d1, d2));
    for i in 0..d1 {
        let v = (i as f64 - 0.5 * (d1 as f64 - 1.0)) * tau;
        for j in 0..d2 {
            let u = (j as f64 - 0.5 * (d2 as f64 - 1.0)) * tau;
            cos_w[[i, j]] = dsd / (dsd * dsd + u * u + v * v).sqrt();
        }
    }

    let slices: Result<Vec<Array2<f64>>> = (0..d3)
        .into_par_iter()
        .map(|k| {
            let src = stack.data.index_axis(Axis(2), k);
            let mut out = Array2::<f64>::zeros((d1, d2));
            let mut padded = vec![0.0f64; len];
            for i in 0..d1 {
                for p in padded.iter_mut() {
                    *p = 0.0;
                }
                for j in 0..d2 {
                    padded[ROW_EXTENSION + j] = src[[i, j]] * cos_w[[i, j]];
                }
                for e in 0..ROW_EXTENSION {
                    padded[e] = padded[ROW_EXTENSION];
                    padded[ROW_EXTENSION + d2 + e] = padded[ROW_EXTENSION + d2 - 1];
                }
                filter.apply(&mut padded)?;
                for j in 0..d2 {
                    out[[i, j]] = padded[ROW_EXTENSION + j];
                }
            }
            Ok(out)
        })
        .collect();
    let slices = slices?;
    let mut data = Array3::zeros((d1, d2, d3));
    for (k, s) in slices.into_iter().enumerate() {
        data.index_axis_mut(Axis(2), k).assign(&s);
    }
    Ok(ProjectionStack {
        geometry: stack.geometry.clone(),
        domain: DomainTag::LineIntegral,
        data,
    })
}

/// Feldkamp filtered backprojection of a full circular scan onto `grid`.
pub fn fdk(stack: &ProjectionStack, grid: &VolumeGrid, window: FilterWindow) -> Result<Volume> {
    let g = &stack.geometry;
    let d_beta = g.uniform_full_scan_spacing()?;
    let filtered = filter_stack(stack, window)?;
    let (d1, d2, _) = stack.dims();
    let (nx, ny, nz) = grid.dims();
    let tau = g.pixel_size_mm;
    let dso = g.dso_mm;
    let dsd = g.dsd_mm;
    // Backprojection gain: d_beta/2 from the circular integral, dsd/dso from
    // expressing the filtered rows in physical (not isocentre) detector pitch.
    let gain = 0.5 * d_beta * dsd / dso;

    let trig: Vec<(f64, f64)> = g.angles_rad.iter().map(|&a| (a.cos(), a.sin())).collect();
    let fdata = &filtered.data;

    let planes: Vec<Array2<f64>> = (0..nz)
        .into_par_iter()
        .map(|iz| {
            let mut plane = Array2::<f64>::zeros((nx, ny));
            for ix in 0..nx {
                for iy in 0..ny {
                    let p = grid.voxel_center(ix, iy, iz);
                    let mut acc = 0.0;
                    for (k, &(c, s)) in trig.iter().enumerate() {
                        let u_dist = dso - (p[0] * c + p[1] * s);
                        if u_dist <= 1e-6 * dso {
                            continue;
                        }
                        let mag = dsd / u_dist;
                        let u = (-p[0] * s + p[1] * c) * mag;
                        let v = p[2] * mag;
                        let jf = u / tau + 0.5 * (d2 as f64 - 1.0);
                        let yf = v / tau + 0.5 * (d1 as f64 - 1.0);
                        if jf < 0.0 || jf > (d2 - 1) as f64 || yf < 0.0 || yf > (d1 - 1) as f64 {
                            continue;
                        }
                        let j0 = (jf.floor() as usize).min(d2 - 1);
                        let i0 = (yf.floor() as usize).min(d1 - 1);
                        let j1 = (j0 + 1).min(d2 - 1);
                        let i1 = (i0 + 1).min(d1 - 1);
                        let fj = jf - j0 as f64;
                        let fi = yf - i0 as f64;
                        let q = (1.0 - fi)
                            * ((1.0 - fj) * fdata[[i0, j0, k]] + fj * fdata[[i0, j1, k]])
                            + fi * ((1.0 - fj) * fdata[[i1, j0, k]] + fj * fdata[[i1, j1, k]]);
                        let w = dso / u_dist;
                        acc += w * w * q;
                    }
                    plane[[ix, iy]] = acc * gain;
                }
            }
            plane
        })
        .collect();

    let mut data = Array3::zeros((nx, ny, nz));
    for (iz, plane) in planes.into_iter().enumerate() {
        data.index_axis_mut(Axis(2), iz).assign(&plane);
    }
    Volume::new(grid.clone(), UnitTag::MuMmInv, data)
}

/// Copy the masked region of `inpainted` into `original`:
/// `out = mask * inpainted + (1 - mask) * original`.
pub fn composite(
    original: &ProjectionStack,
    inpainted: &ProjectionStack,
    mask: &ProjectionStack,
) -> Result<ProjectionStack> {
    if mask.domain != DomainTag::Mask {
        return Err(Error::Config(format!(
            "composite mask must be in the mask domain, got {:?}",
            mask.domain
        )));
    }
    if original.domain != inpainted.domain {
        return Err(Error::Config(format!(
            "composite inputs live in different domains: {:?} vs {:?}",
            original.domain, inpainted.domain
        )));
    }
    if original.data.dim() != inpainted.data.dim() || original.data.dim() != mask.data.dim() {
        return Err(Error::ShapeMismatch(format!(
            "composite shapes differ: original {:?}, inpainted {:?}, mask {:?}",
            original.data.dim(),
            inpainted.data.dim(),
            mask.data.dim()
        )));
    }
    let mut out = original.clone();
    Zip::from(&mut out.data)
        .and(&inpainted.data)
        .and(&mask.data)
        .for_each(|o, &p, &m| {
            if m != 0.0 {
                *o = p;
            }
        });
    Ok(out)
}
