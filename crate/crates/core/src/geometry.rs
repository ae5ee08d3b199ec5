//! Scanner geometry and the core array containers.
//!
//! Conventions (used by every other module):
//!
//! * Right-handed world frame in millimetres; the rotation axis is `z`.
//! * The source orbits the axis on a circle of radius `dso_mm` in the `z = 0`
//!   plane; at angle `phi` it sits at `dso · (cos phi, sin phi, 0)`.
//! * The flat detector lies `dsd_mm` from the source on the far side of the
//!   axis, perpendicular to the source–axis line.
//! * A projection stack is indexed `[i, j, k]`: `i` runs along the detector
//!   column axis (parallel to the rotation axis, `n_cols` entries), `j` along
//!   the detector row axis (tangential, `n_rows` entries), and `k` over
//!   projection angles. Slice `[:, :, k]` is a full projection (primary view);
//!   slice `[i, :, :]` is a row-vs-angle plane (secondary view).

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry as written in config files and sidecars. `angles_rad` may be
/// omitted, in which case `n_angles` uniform angles over `[0, 2*pi)` are used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub dso_mm: f64,
    pub dsd_mm: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub pixel_size_mm: f64,
    pub n_angles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles_rad: Option<Vec<f64>>,
    pub fov_radius_mm: f64,
}

/// Validated circular-orbit cone-beam geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometryConfig", into = "GeometryConfig")]
pub struct ConeBeamGeometry {
    pub dso_mm: f64,
    pub dsd_mm: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub pixel_size_mm: f64,
    pub angles_rad: Vec<f64>,
    pub fov_radius_mm: f64,
}

impl TryFrom<GeometryConfig> for ConeBeamGeometry {
    type Error = Error;
    fn try_from(c: GeometryConfig) -> Result<Self> {
        ConeBeamGeometry::new(c)
    }
}

impl From<ConeBeamGeometry> for GeometryConfig {
    fn from(g: ConeBeamGeometry) -> Self {
        GeometryConfig {
            dso_mm: g.dso_mm,
            dsd_mm: g.dsd_mm,
            n_cols: g.n_cols,
            n_rows: g.n_rows,
            pixel_size_mm: g.pixel_size_mm,
            n_angles: g.angles_rad.len(),
            angles_rad: Some(g.angles_rad),
            fov_radius_mm: g.fov_radius_mm,
        }
    }
}

impl ConeBeamGeometry {
    pub fn new(c: GeometryConfig) -> Result<Self> {
        if !(c.dso_mm > 0.0) {
            return Err(Error::Config(format!("dso_mm must be > 0, got {}", c.dso_mm)));
        }
        if !(c.dsd_mm > c.dso_mm) {
            return Err(Error::Config(format!(
                "dsd_mm must exceed dso_mm, got dsd={} dso={}",
                c.dsd_mm, c.dso_mm
            )));
        }
        if !(c.pixel_size_mm > 0.0) {
            return Err(Error::Config(format!(
                "pixel_size_mm must be > 0, got {}",
                c.pixel_size_mm
            )));
        }
        if c.n_cols == 0 || c.n_rows == 0 || c.n_angles == 0 {
            return Err(Error::Config(format!(
                "detector/angle counts must be >= 1, got {}x{}x{}",
                c.n_cols, c.n_rows, c.n_angles
            )));
        }
        if !(c.fov_radius_mm > 0.0 && c.fov_radius_mm <= c.dso_mm) {
            return Err(Error::Config(format!(
                "fov_radius_mm must lie in (0, dso_mm], got {}",
                c.fov_radius_mm
            )));
        }
        let angles = match c.angles_rad {
            Some(a) => {
                if a.len() != c.n_angles {
                    return Err(Error::Config(format!(
                        "angles_rad has {} entries but n_angles = {}",
                        a.len(),
                        c.n_angles
                    )));
                }
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("angles_rad contains non-finite values".into()));
                }
                a
            }
            None => uniform_angles(c.n_angles),
        };
        Ok(ConeBeamGeometry {
            dso_mm: c.dso_mm,
            dsd_mm: c.dsd_mm,
            n_cols: c.n_cols,
            n_rows: c.n_rows,
            pixel_size_mm: c.pixel_size_mm,
            angles_rad: angles,
            fov_radius_mm: c.fov_radius_mm,
        })
    }

    pub fn n_angles(&self) -> usize {
        self.angles_rad.len()
    }

    /// Source position at projection `k`.
    pub fn source_position(&self, k: usize) -> [f64; 3] {
        let phi = self.angles_rad[k];
        [self.dso_mm * phi.cos(), self.dso_mm * phi.sin(), 0.0]
    }

    /// Centre of the detector plane at projection `k` (on the source–axis
    /// line, `dsd_mm` from the source).
    pub fn detector_center(&self, k: usize) -> [f64; 3] {
        let phi = self.angles_rad[k];
        let r = self.dso_mm - self.dsd_mm;
        [r * phi.cos(), r * phi.sin(), 0.0]
    }

    /// In-plane (tangential) detector row axis at projection `k`. The column
    /// axis is the world `z` axis at every angle.
    pub fn detector_row_axis(&self, k: usize) -> [f64; 3] {
        let phi = self.angles_rad[k];
        [-phi.sin(), phi.cos(), 0.0]
    }

    /// World position of the detector point with (fractional) pixel indices
    /// `(i, j)`; integer indices are pixel centres.
    pub fn detector_point(&self, i: f64, j: f64, k: usize) -> [f64; 3] {
        let c = self.detector_center(k);
        let eu = self.detector_row_axis(k);
        let v = (i - 0.5 * (self.n_cols as f64 - 1.0)) * self.pixel_size_mm;
        let u = (j - 0.5 * (self.n_rows as f64 - 1.0)) * self.pixel_size_mm;
        [c[0] + u * eu[0], c[1] + u * eu[1], c[2] + v]
    }

    /// Ray from the source through the centre of detector pixel `(i, j)` at
    /// projection `k`: returns `(origin, unit_direction)`.
    pub fn ray_for_pixel(&self, i: f64, j: f64, k: usize) -> ([f64; 3], [f64; 3]) {
        let s = self.source_position(k);
        let p = self.detector_point(i, j, k);
        let d = [p[0] - s[0], p[1] - s[1], p[2] - s[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (s, [d[0] / n, d[1] / n, d[2] / n])
    }

    /// Angular spacing of a uniform full `2*pi` scan; errors if the angle list
    /// is not `angles[0] + k * 2*pi / n` or has fewer than 2 entries.
    pub fn uniform_full_scan_spacing(&self) -> Result<f64> {
        let n = self.n_angles();
        if n < 2 {
            return Err(Error::Config(format!("need at least 2 angles, got {n}")));
        }
        let step = std::f64::consts::TAU / n as f64;
        for (k, &a) in self.angles_rad.iter().enumerate() {
            let expect = self.angles_rad[0] + k as f64 * step;
            if (a - expect).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "angles are not a uniform full scan: angle[{k}] = {a}, expected {expect}"
                )));
            }
        }
        Ok(step)
    }
}

/// `n` uniform angles over `[0, 2*pi)`.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * std::f64::consts::TAU / n as f64).collect()
}

/// What the values in a projection stack mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainTag {
    /// Attenuation line integrals (dimensionless, `mu * length`).
    LineIntegral,
    /// Detector counts (non-negative).
    Count,
    /// Line integrals divided by a dataset normalization constant.
    Normalized,
    /// Binary indicator stack (values exactly 0 or 1).
    Mask,
}

/// Stack of projections with its acquisition geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub geometry: ConeBeamGeometry,
    pub domain: DomainTag,
    /// Shape `(n_cols, n_rows, n_angles)`, indexed `[i, j, k]`.
    pub data: Array3<f64>,
}

impl ProjectionStack {
    pub fn new(geometry: ConeBeamGeometry, domain: DomainTag, data: Array3<f64>) -> Result<Self> {
        let want = (geometry.n_cols, geometry.n_rows, geometry.n_angles());
        if data.dim() != want {
            return Err(Error::ShapeMismatch(format!(
                "projection stack is {:?} but geometry expects {:?}",
                data.dim(),
                want
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("projection stack contains non-finite values".into()));
        }
        if domain == DomainTag::Count && data.iter().any(|&v| v < 0.0) {
            return Err(Error::Numerical("count-domain stack contains negative values".into()));
        }
        if domain == DomainTag::Mask && data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Numerical("mask stack contains values other than 0/1".into()));
        }
        Ok(ProjectionStack { geometry, domain, data })
    }

    /// Zero-filled stack matching `geometry`.
    pub fn zeros(geometry: ConeBeamGeometry, domain: DomainTag) -> Self {
        let shape = (geometry.n_cols, geometry.n_rows, geometry.n_angles());
        ProjectionStack { geometry, domain, data: Array3::zeros(shape) }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Projection image at angle `k` (an `i x j` plane).
    pub fn primary_slice(&self, k: usize) -> Array2<f64> {
        self.data.index_axis(Axis(2), k).to_owned()
    }

    pub fn primary_slice_view(&self, k: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), k)
    }

    /// Row-vs-angle plane at detector column `i` (a `j x k` plane).
    pub fn secondary_slice(&self, i: usize) -> Array2<f64> {
        self.data.index_axis(Axis(0), i).to_owned()
    }

    pub fn set_primary_slice(&mut self, k: usize, slice: &Array2<f64>) {
        self.data.index_axis_mut(Axis(2), k).assign(slice);
    }

    pub fn set_secondary_slice(&mut self, i: usize, slice: &Array2<f64>) {
        self.data.index_axis_mut(Axis(0), i).assign(slice);
    }

    /// Rebuild a stack from its `n_angles` primary slices.
    pub fn from_primary_slices(
        geometry: ConeBeamGeometry,
        domain: DomainTag,
        slices: &[Array2<f64>],
    ) -> Result<Self> {
        if slices.len() != geometry.n_angles() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} primary slices, got {}",
                geometry.n_angles(),
                slices.len()
            )));
        }
        let mut out = ProjectionStack::zeros(geometry, domain);
        for (k, s) in slices.iter().enumerate() {
            if s.dim() != (out.geometry.n_cols, out.geometry.n_rows) {
                return Err(Error::ShapeMismatch(format!(
                    "primary slice {k} is {:?}, expected ({}, {})",
                    s.dim(),
                    out.geometry.n_cols,
                    out.geometry.n_rows
                )));
            }
            out.set_primary_slice(k, s);
        }
        Ok(out)
    }

    /// Rebuild a stack from its `n_cols` secondary slices.
    pub fn from_secondary_slices(
        geometry: ConeBeamGeometry,
        domain: DomainTag,
        slices: &[Array2<f64>],
    ) -> Result<Self> {
        if slices.len() != geometry.n_cols {
            return Err(Error::ShapeMismatch(format!(
                "expected {} secondary slices, got {}",
                geometry.n_cols,
                slices.len()
            )));
        }
        let mut out = ProjectionStack::zeros(geometry, domain);
        for (i, s) in slices.iter().enumerate() {
            if s.dim() != (out.geometry.n_rows, out.geometry.n_angles()) {
                return Err(Error::ShapeMismatch(format!(
                    "secondary slice {i} is {:?}, expected ({}, {})",
                    s.dim(),
                    out.geometry.n_rows,
                    out.geometry.n_angles()
                )));
            }
            out.set_secondary_slice(i, s);
        }
        Ok(out)
    }
}

/// Axis-aligned voxel grid. Voxel `(0, 0, 0)`'s centre sits at `origin_mm`;
/// voxel centres step by `spacing_mm` along `+x`, `+y`, `+z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing_mm: f64,
    pub origin_mm: [f64; 3],
}

impl VolumeGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, spacing_mm: f64, origin_mm: [f64; 3]) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Config(format!("grid dims must be >= 1, got {nx}x{ny}x{nz}")));
        }
        if !(spacing_mm > 0.0) {
            return Err(Error::Config(format!("grid spacing must be > 0, got {spacing_mm}")));
        }
        Ok(VolumeGrid { nx, ny, nz, spacing_mm, origin_mm })
    }

    /// Cube grid of `n^3` voxels centred on the world origin.
    pub fn centered_cube(n: usize, spacing_mm: f64) -> Result<Self> {
        let half = 0.5 * (n as f64 - 1.0) * spacing_mm;
        VolumeGrid::new(n, n, n, spacing_mm, [-half, -half, -half])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + x as f64 * self.spacing_mm,
            self.origin_mm[1] + y as f64 * self.spacing_mm,
            self.origin_mm[2] + z as f64 * self.spacing_mm,
        ]
    }

    /// World point in continuous voxel-index coordinates.
    pub fn world_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin_mm[0]) / self.spacing_mm,
            (p[1] - self.origin_mm[1]) / self.spacing_mm,
            (p[2] - self.origin_mm[2]) / self.spacing_mm,
        ]
    }
}

/// Physical meaning of voxel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitTag {
    /// Linear attenuation in 1/mm.
    MuMmInv,
    /// Hounsfield units.
    Hu,
    /// Binary indicator (0/1).
    Mask,
}

/// Scalar field on a [`VolumeGrid`], indexed `[x, y, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub unit: UnitTag,
    pub data: Array3<f64>,
}

impl Volume {
    pub fn new(grid: VolumeGrid, unit: UnitTag, data: Array3<f64>) -> Result<Self> {
        if data.dim() != grid.dims() {
            return Err(Error::ShapeMismatch(format!(
                "volume data is {:?} but grid is {:?}",
                data.dim(),
                grid.dims()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("volume contains non-finite values".into()));
        }
        if unit == UnitTag::Mask && data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Numerical("mask volume contains values other than 0/1".into()));
        }
        Ok(Volume { grid, unit, data })
    }

    pub fn zeros(grid: VolumeGrid, unit: UnitTag) -> Self {
        let shape = grid.dims();
        Volume { grid, unit, data: Array3::zeros(shape) }
    }
}
