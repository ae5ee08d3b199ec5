//! Procedural phantoms and material decompositions.
//!
//! A phantom is an ordered list of rotated ellipsoids painted onto a voxel
//! grid (later entries overwrite earlier ones at overlapping voxels). Voxels
//! are classified by their centre. The result is a three-channel material
//! decomposition — water-like and bone-like attenuation plus a binary implant
//! mask — which the projector turns into per-material line integrals.

use ndarray::Zip;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConeBeamGeometry, UnitTag, Volume, VolumeGrid};
use crate::rng;

/// Linear attenuation of water at the reference energy, 1/mm.
pub const MU_WATER_MM_INV: f64 = 0.02;

/// Default soft water/bone split thresholds in Hounsfield units.
pub const HU_SPLIT_DEFAULT: (f64, f64) = (100.0, 500.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Water,
    Bone,
    Metal,
}

/// Ellipsoid with axes rotated by `rotation_z_rad` about the world `z` axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
    pub rotation_z_rad: f64,
    pub material: Material,
    /// Linear attenuation painted into the matching channel, 1/mm. Ignored
    /// for [`Material::Metal`] (metal attenuation is applied at projection
    /// time).
    pub mu_mm_inv: f64,
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center_mm[0], p[1] - self.center_mm[1], p[2] - self.center_mm[2]];
        let (s, c) = self.rotation_z_rad.sin_cos();
        // Rotate into the ellipsoid frame (inverse rotation about z).
        let x = c * d[0] + s * d[1];
        let y = -s * d[0] + c * d[1];
        let z = d[2];
        let [a, b, cz] = self.semi_axes_mm;
        (x / a).powi(2) + (y / b).powi(2) + (z / cz).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub ellipsoids: Vec<Ellipsoid>,
    pub seed: u64,
}

/// Water/bone attenuation plus implant occupancy on a shared grid.
///
/// Invariants: water and bone are non-negative, the implant channel is
/// binary, and implant voxels carry zero water and bone.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialDecomposition {
    pub water: Volume,
    pub bone: Volume,
    pub implant: Volume,
}

impl MaterialDecomposition {
    pub fn new(water: Volume, bone: Volume, implant: Volume) -> Result<Self> {
        if water.grid != bone.grid || water.grid != implant.grid {
            return Err(Error::ShapeMismatch(
                "material channels must share one voxel grid".into(),
            ));
        }
        if water.data.iter().any(|&v| v < 0.0) || bone.data.iter().any(|&v| v < 0.0) {
            return Err(Error::Numerical("material attenuation must be non-negative".into()));
        }
        if implant.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Numerical("implant channel must be binary".into()));
        }
        let overlap = Zip::from(&implant.data)
            .and(&water.data)
            .and(&bone.data)
            .fold(false, |acc, &m, &w, &b| acc | (m == 1.0 && (w != 0.0 || b != 0.0)));
        if overlap {
            return Err(Error::Numerical(
                "implant voxels must carry zero water and bone attenuation".into(),
            ));
        }
        Ok(MaterialDecomposition { water, bone, implant })
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        MaterialDecomposition {
            water: Volume::zeros(grid.clone(), UnitTag::MuMmInv),
            bone: Volume::zeros(grid.clone(), UnitTag::MuMmInv),
            implant: Volume::zeros(grid, UnitTag::Mask),
        }
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.water.grid
    }
}

/// Paint `spec` onto `grid` in list order (later ellipsoids win).
pub fn rasterize(spec: &PhantomSpec, grid: &VolumeGrid) -> MaterialDecomposition {
    let mut out = MaterialDecomposition::zeros(grid.clone());
    for e in &spec.ellipsoids {
        // Conservative axis-aligned bounding box around the rotated ellipsoid.
        let r_xy = e.semi_axes_mm[0].max(e.semi_axes_mm[1]);
        let lo = [e.center_mm[0] - r_xy, e.center_mm[1] - r_xy, e.center_mm[2] - e.semi_axes_mm[2]];
        let hi = [e.center_mm[0] + r_xy, e.center_mm[1] + r_xy, e.center_mm[2] + e.semi_axes_mm[2]];
        let lo_i = grid.world_to_index(lo).map(|v| v.floor().max(0.0) as usize);
        let hi_i = grid.world_to_index(hi);
        let hx = (hi_i[0].ceil() as isize).clamp(-1, grid.nx as isize - 1) as usize;
        let hy = (hi_i[1].ceil() as isize).clamp(-1, grid.ny as isize - 1) as usize;
        let hz = (hi_i[2].ceil() as isize).clamp(-1, grid.nz as isize - 1) as usize;
        if hi_i.iter().any(|&v| v < 0.0) {
            continue;
        }
        for x in lo_i[0]..=hx.min(grid.nx - 1) {
            for y in lo_i[1]..=hy.min(grid.ny - 1) {
                for z in lo_i[2]..=hz.min(grid.nz - 1) {
                    if !e.contains(grid.voxel_center(x, y, z)) {
                        continue;
                    }
                    let (w, b, m) = match e.material {
                        Material::Water => (e.mu_mm_inv, 0.0, 0.0),
                        Material::Bone => (0.0, e.mu_mm_inv, 0.0),
                        Material::Metal => (0.0, 0.0, 1.0),
                    };
                    out.water.data[[x, y, z]] = w;
                    out.bone.data[[x, y, z]] = b;
                    out.implant.data[[x, y, z]] = m;
                }
            }
        }
    }
    out
}

/// Linear attenuation for a Hounsfield value: `mu_water * (1 + h/1000)`,
/// clamped to zero (air and below attenuate nothing at this scale).
pub fn mu_from_hu(h: f64) -> f64 {
    (MU_WATER_MM_INV * (1.0 + h / 1000.0)).max(0.0)
}

/// Split an HU volume into water-like and bone-like attenuation with a soft
/// linear transition between `thresholds.0` and `thresholds.1`.
pub fn decompose_hu(v: &Volume, thresholds: (f64, f64)) -> Result<MaterialDecomposition> {
    if v.unit != UnitTag::Hu {
        return Err(Error::Config(format!("decompose_hu expects an HU volume, got {:?}", v.unit)));
    }
    let (t_low, t_high) = thresholds;
    if !(t_high > t_low) {
        return Err(Error::Config(format!(
            "thresholds must satisfy t_high > t_low, got ({t_low}, {t_high})"
        )));
    }
    let mut out = MaterialDecomposition::zeros(v.grid.clone());
    Zip::from(&v.data)
        .and(&mut out.water.data)
        .and(&mut out.bone.data)
        .for_each(|&h, w, b| {
            let mu = mu_from_hu(h);
            let frac = ((h - t_low) / (t_high - t_low)).clamp(0.0, 1.0);
            *b = frac * mu;
            *w = (1.0 - frac) * mu;
        });
    Ok(out)
}

/// Implant primitives. Cylinders are aligned with the rotation (`z`) axis,
/// the common orientation for dental posts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ImplantShape {
    Sphere { center_mm: [f64; 3], radius_mm: f64 },
    ZCylinder { center_mm: [f64; 3], radius_mm: f64, half_length_mm: f64 },
}

impl ImplantShape {
    fn center(&self) -> [f64; 3] {
        match self {
            ImplantShape::Sphere { center_mm, .. } => *center_mm,
            ImplantShape::ZCylinder { center_mm, .. } => *center_mm,
        }
    }

    /// Radius of the shape's footprint in the `xy` plane.
    fn radial_extent(&self) -> f64 {
        match self {
            ImplantShape::Sphere { radius_mm, .. } => *radius_mm,
            ImplantShape::ZCylinder { radius_mm, .. } => *radius_mm,
        }
    }

    /// Radius of the bounding sphere.
    fn bounding_radius(&self) -> f64 {
        match self {
            ImplantShape::Sphere { radius_mm, .. } => *radius_mm,
            ImplantShape::ZCylinder { radius_mm, half_length_mm, .. } => {
                (radius_mm * radius_mm + half_length_mm * half_length_mm).sqrt()
            }
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            ImplantShape::Sphere { center_mm: c, radius_mm: r } => {
                let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
            }
            ImplantShape::ZCylinder { center_mm: c, radius_mm: r, half_length_mm: h } => {
                let dx = p[0] - c[0];
                let dy = p[1] - c[1];
                dx * dx + dy * dy <= r * r && (p[2] - c[2]).abs() <= *h
            }
        }
    }
}

/// True if the shape's bounding sphere is hit by at least one source–detector
/// beam: at some angle its projection overlaps the detector while the shape
/// sits between source and detector plane.
fn visible_to_any_ray(shape: &ImplantShape, g: &ConeBeamGeometry) -> bool {
    let c = shape.center();
    let rb = shape.bounding_radius();
    let half_w = 0.5 * g.n_rows as f64 * g.pixel_size_mm;
    let half_h = 0.5 * g.n_cols as f64 * g.pixel_size_mm;
    for k in 0..g.n_angles() {
        let phi = g.angles_rad[k];
        let (sin, cos) = phi.sin_cos();
        // Distance from the source along the central-ray direction.
        let u_depth = g.dso_mm - (c[0] * cos + c[1] * sin);
        if u_depth - rb <= 0.0 || u_depth + rb >= g.dsd_mm {
            continue; // behind the source or beyond the detector plane
        }
        let mag = g.dsd_mm / u_depth;
        let u = (c[0] * -sin + c[1] * cos) * mag;
        let v = c[2] * mag;
        let r_proj = rb * mag;
        if u.abs() <= half_w + r_proj && v.abs() <= half_h + r_proj {
            return true;
        }
    }
    false
}

/// Carve implant shapes into a decomposition: implant voxels get mask 1 and
/// zero water/bone.
///
/// Without `allow_exomass` every shape must fit inside the field-of-view
/// cylinder of `geometry`. With it, shapes may sit outside the FOV (exomass)
/// as long as the beam still sees them; a shape invisible to every ray, or
/// outside the voxel grid entirely, is rejected.
pub fn place_implants(
    decomp: &mut MaterialDecomposition,
    implants: &[ImplantShape],
    allow_exomass: bool,
    geometry: &ConeBeamGeometry,
) -> Result<()> {
    for (n, shape) in implants.iter().enumerate() {
        let c = shape.center();
        let radial = (c[0] * c[0] + c[1] * c[1]).sqrt() + shape.radial_extent();
        if !allow_exomass && radial > geometry.fov_radius_mm {
            return Err(Error::ImplantPlacement(format!(
                "implant {n} extends to radius {radial:.2} mm, outside the {:.2} mm field of \
                 view (pass allow_exomass to permit this)",
                geometry.fov_radius_mm
            )));
        }
        if !visible_to_any_ray(shape, geometry) {
            return Err(Error::ImplantPlacement(format!(
                "implant {n} is invisible to every ray of the scan"
            )));
        }
        let grid = decomp.grid().clone();
        let mut any = false;
        let rb = shape.bounding_radius();
        let lo = grid.world_to_index([c[0] - rb, c[1] - rb, c[2] - rb]);
        let hi = grid.world_to_index([c[0] + rb, c[1] + rb, c[2] + rb]);
        let clamp_lo = |v: f64| v.floor().max(0.0) as usize;
        if hi.iter().any(|&v| v < 0.0)
            || lo[0] > grid.nx as f64 - 1.0
            || lo[1] > grid.ny as f64 - 1.0
            || lo[2] > grid.nz as f64 - 1.0
        {
            return Err(Error::ImplantPlacement(format!(
                "implant {n} lies outside the simulation grid"
            )));
        }
        for x in clamp_lo(lo[0])..=(hi[0].ceil() as usize).min(grid.nx - 1) {
            for y in clamp_lo(lo[1])..=(hi[1].ceil() as usize).min(grid.ny - 1) {
                for z in clamp_lo(lo[2])..=(hi[2].ceil() as usize).min(grid.nz - 1) {
                    if shape.contains(grid.voxel_center(x, y, z)) {
                        decomp.implant.data[[x, y, z]] = 1.0;
                        decomp.water.data[[x, y, z]] = 0.0;
                        decomp.bone.data[[x, y, z]] = 0.0;
                        any = true;
                    }
                }
            }
        }
        if !any {
            return Err(Error::ImplantPlacement(format!(
                "implant {n} covers no voxel centre of the simulation grid"
            )));
        }
    }
    Ok(())
}

/// Seeded random phantom: a soft-tissue body ellipsoid with internal bone
/// features and density variations, all within radius `extent_mm` of the
/// rotation axis.
pub fn random_phantom(seed: u64, extent_mm: f64) -> PhantomSpec {
    const PHANTOM_LANE: u64 = 0x5048_414e; // distinguishes phantom draws from other uses of `seed`
    let mut r = rng::stream(seed, PHANTOM_LANE, 0, 0);
    let mut ellipsoids = Vec::new();

    let jitter = |r: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| r.random_range(lo..hi);

    // All specimens share one anatomical template: the body outline and the
    // positions of every feature are fixed across seeds. What varies is the
    // specimen "build": one global latent scales all tissue densities
    // together (denser bone goes with denser soft tissue and deeper
    // cavities), plus per-feature residuals an order of magnitude smaller.
    // Shared large-scale structure with a low-dimensional family of
    // variations is what makes a small training set informative about an
    // unseen specimen.
    let build = jitter(&mut r, -1.0, 1.0);
    ellipsoids.push(Ellipsoid {
        center_mm: [0.5, -0.4, 0.0],
        semi_axes_mm: [0.88 * extent_mm, 0.80 * extent_mm, 0.84 * extent_mm],
        rotation_z_rad: 0.35,
        material: Material::Water,
        mu_mm_inv: 0.02,
    });

    // A couple of low-contrast soft-tissue density variations.
    const SOFT_CENTER: [[f64; 3]; 2] = [[0.24, 0.12, 0.10], [-0.28, -0.22, -0.14]];
    const SOFT_AXES: [[f64; 3]; 2] = [[0.24, 0.20, 0.27], [0.18, 0.25, 0.21]];
    const SOFT_ROT: [f64; 2] = [0.8, 2.3];
    for s in 0..2 {
        let res = jitter(&mut r, -1.0, 1.0);
        ellipsoids.push(Ellipsoid {
            center_mm: [
                SOFT_CENTER[s][0] * extent_mm,
                SOFT_CENTER[s][1] * extent_mm,
                SOFT_CENTER[s][2] * extent_mm,
            ],
            semi_axes_mm: [
                SOFT_AXES[s][0] * extent_mm,
                SOFT_AXES[s][1] * extent_mm,
                SOFT_AXES[s][2] * extent_mm,
            ],
            rotation_z_rad: SOFT_ROT[s],
            material: Material::Water,
            mu_mm_inv: 0.020 * (1.0 + 0.05 * build + 0.005 * res),
        });
    }

    // Bone features: a fixed ring of dense ellipsoids, density per seed.
    const N_BONES: usize = 4;
    const BONE_Z: [f64; N_BONES] = [0.10, -0.18, 0.22, -0.06];
    const BONE_ELONG: [f64; N_BONES] = [1.6, 1.2, 1.9, 1.4];
    for b in 0..N_BONES {
        let ang = b as f64 / N_BONES as f64 * std::f64::consts::TAU + 0.15;
        let rad = 0.42 * extent_mm;
        let a = 0.14 * extent_mm;
        let res = jitter(&mut r, -1.0, 1.0);
        ellipsoids.push(Ellipsoid {
            center_mm: [rad * ang.cos(), rad * ang.sin(), BONE_Z[b] * extent_mm],
            semi_axes_mm: [a, 0.8 * a, BONE_ELONG[b] * a],
            rotation_z_rad: ang,
            material: Material::Bone,
            mu_mm_inv: 0.050 * (1.0 + 0.08 * build + 0.008 * res),
        });
    }

    // One low-density cavity at a fixed spot, depth per seed.
    let a = 0.15 * extent_mm;
    let res = jitter(&mut r, -1.0, 1.0);
    ellipsoids.push(Ellipsoid {
        center_mm: [-0.12 * extent_mm, 0.18 * extent_mm, -0.10 * extent_mm],
        semi_axes_mm: [a, 1.1 * a, 0.9 * a],
        rotation_z_rad: 1.1,
        material: Material::Water,
        mu_mm_inv: 0.014 * (1.0 + 0.10 * build + 0.01 * res),
    });

    PhantomSpec { ellipsoids, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryConfig;

    fn grid_32() -> VolumeGrid {
        VolumeGrid::centered_cube(32, 2.0).unwrap()
    }

    fn geom() -> ConeBeamGeometry {
        ConeBeamGeometry::new(GeometryConfig {
            dso_mm: 500.0,
            dsd_mm: 1000.0,
            n_cols: 16,
            n_rows: 16,
            pixel_size_mm: 8.0,
            n_angles: 16,
            angles_rad: None,
            fov_radius_mm: 30.0,
        })
        .unwrap()
    }

    fn sphere(center: [f64; 3], r: f64, material: Material, mu: f64) -> Ellipsoid {
        Ellipsoid {
            center_mm: center,
            semi_axes_mm: [r, r, r],
            rotation_z_rad: 0.0,
            material,
            mu_mm_inv: mu,
        }
    }

    /// 6-connected components of a binary volume, counted by BFS.
    fn connected_components(v: &Volume) -> usize {
        let (nx, ny, nz) = v.grid.dims();
        let mut seen = vec![false; nx * ny * nz];
        let idx = |x: usize, y: usize, z: usize| (x * ny + y) * nz + z;
        let mut count = 0;
        let mut queue = Vec::new();
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    if v.data[[x, y, z]] != 1.0 || seen[idx(x, y, z)] {
                        continue;
                    }
                    count += 1;
                    seen[idx(x, y, z)] = true;
                    queue.push((x, y, z));
                    while let Some((cx, cy, cz)) = queue.pop() {
                        let mut visit = |nx_: isize, ny_: isize, nz_: isize| {
                            if nx_ < 0 || ny_ < 0 || nz_ < 0 {
                                return;
                            }
                            let (ux, uy, uz) = (nx_ as usize, ny_ as usize, nz_ as usize);
                            if ux >= nx || uy >= ny || uz >= nz {
                                return;
                            }
                            if v.data[[ux, uy, uz]] == 1.0 && !seen[idx(ux, uy, uz)] {
                                seen[idx(ux, uy, uz)] = true;
                                queue.push((ux, uy, uz));
                            }
                        };
                        let (ix, iy, iz) = (cx as isize, cy as isize, cz as isize);
                        visit(ix - 1, iy, iz);
                        visit(ix + 1, iy, iz);
                        visit(ix, iy - 1, iz);
                        visit(ix, iy + 1, iz);
                        visit(ix, iy, iz - 1);
                        visit(ix, iy, iz + 1);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn sphere_voxel_count_matches_brute_force_and_analytic() {
        // Radius of 2 voxel widths on a 1 mm grid.
        let grid = VolumeGrid::centered_cube(16, 1.0).unwrap();
        let spec = PhantomSpec {
            ellipsoids: vec![sphere([0.3, -0.2, 0.1], 2.0, Material::Water, 0.02)],
            seed: 0,
        };
        let d = rasterize(&spec, &grid);
        let painted = d.water.data.iter().filter(|&&w| w > 0.0).count();

        // Independent brute force over every voxel centre.
        let mut brute = 0;
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    let p = grid.voxel_center(x, y, z);
                    let dx = p[0] - 0.3;
                    let dy = p[1] + 0.2;
                    let dz = p[2] - 0.1;
                    if dx * dx + dy * dy + dz * dz <= 4.0 {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(painted, brute);

        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 8.0; // (4/3) pi r^3 voxels
        let lo = (0.8 * analytic).floor() as usize;
        let hi = (1.2 * analytic).ceil() as usize;
        assert!(
            (lo..=hi).contains(&painted),
            "painted {painted} voxels, expected within 20% of {analytic:.1}"
        );
    }

    #[test]
    fn later_ellipsoids_overwrite_earlier() {
        let grid = grid_32();
        let spec = PhantomSpec {
            ellipsoids: vec![
                sphere([0.0; 3], 20.0, Material::Water, 0.02),
                sphere([0.0; 3], 6.0, Material::Bone, 0.05),
            ],
            seed: 0,
        };
        let d = rasterize(&spec, &grid);
        // Inside the bone sphere: bone only.
        assert_eq!(d.bone.data[[16, 16, 16]], 0.05);
        assert_eq!(d.water.data[[16, 16, 16]], 0.0);
        // Inside the body but outside bone: water only.
        assert_eq!(d.water.data[[16, 16, 8]], 0.02);
        assert_eq!(d.bone.data[[16, 16, 8]], 0.0);
        MaterialDecomposition::new(d.water, d.bone, d.implant).unwrap();
    }

    #[test]
    fn metal_paints_only_the_implant_channel() {
        let grid = grid_32();
        let spec = PhantomSpec {
            ellipsoids: vec![
                sphere([0.0; 3], 20.0, Material::Water, 0.02),
                sphere([0.0; 3], 4.0, Material::Metal, 0.3),
            ],
            seed: 0,
        };
        let d = rasterize(&spec, &grid);
        assert_eq!(d.implant.data[[16, 16, 16]], 1.0);
        assert_eq!(d.water.data[[16, 16, 16]], 0.0);
        assert_eq!(d.bone.data[[16, 16, 16]], 0.0);
        MaterialDecomposition::new(d.water, d.bone, d.implant).unwrap();
    }

    #[test]
    fn hu_decomposition_hits_the_anchor_points() {
        let grid = VolumeGrid::centered_cube(2, 1.0).unwrap();
        let mk = |h: f64| {
            Volume::new(grid.clone(), UnitTag::Hu, ndarray::Array3::from_elem((2, 2, 2), h))
                .unwrap()
        };
        let (t_low, t_high) = HU_SPLIT_DEFAULT;

        let d = decompose_hu(&mk(0.0), HU_SPLIT_DEFAULT).unwrap();
        assert_eq!(d.water.data[[0, 0, 0]], MU_WATER_MM_INV);
        assert_eq!(d.bone.data[[0, 0, 0]], 0.0);

        let d = decompose_hu(&mk(-1000.0), HU_SPLIT_DEFAULT).unwrap();
        assert_eq!(d.water.data[[0, 0, 0]], 0.0);
        assert_eq!(d.bone.data[[0, 0, 0]], 0.0);

        let d = decompose_hu(&mk(t_high), HU_SPLIT_DEFAULT).unwrap();
        assert_eq!(d.water.data[[0, 0, 0]], 0.0);
        assert!((d.bone.data[[0, 0, 0]] - mu_from_hu(t_high)).abs() < 1e-15);

        // Midpoint of the soft transition splits the attenuation in half.
        let mid = 0.5 * (t_low + t_high);
        let d = decompose_hu(&mk(mid), HU_SPLIT_DEFAULT).unwrap();
        assert!((d.water.data[[0, 0, 0]] - 0.5 * mu_from_hu(mid)).abs() < 1e-15);
        assert!((d.bone.data[[0, 0, 0]] - 0.5 * mu_from_hu(mid)).abs() < 1e-15);
    }

    #[test]
    fn hu_decomposition_preserves_total_attenuation() {
        let grid = VolumeGrid::new(40, 1, 1, 1.0, [0.0; 3]).unwrap();
        let hus: Vec<f64> = (0..40).map(|n| -1200.0 + n as f64 * 75.0).collect();
        let data = ndarray::Array3::from_shape_vec((40, 1, 1), hus.clone()).unwrap();
        let v = Volume::new(grid, UnitTag::Hu, data).unwrap();
        let d = decompose_hu(&v, HU_SPLIT_DEFAULT).unwrap();
        for (n, &h) in hus.iter().enumerate() {
            let total = d.water.data[[n, 0, 0]] + d.bone.data[[n, 0, 0]];
            assert!(
                (total - mu_from_hu(h)).abs() < 1e-15,
                "water+bone != mu at h={h}: {total} vs {}",
                mu_from_hu(h)
            );
        }
    }

    #[test]
    fn implants_outside_fov_need_the_exomass_flag() {
        let mut g = geom();
        g.fov_radius_mm = 20.0; // leave grid room outside the FOV for the exomass shape
        let grid = grid_32();
        let outside = ImplantShape::Sphere {
            center_mm: [1.2 * g.fov_radius_mm, 0.0, 0.0],
            radius_mm: 3.0,
        };
        let mut d = MaterialDecomposition::zeros(grid.clone());
        let err = place_implants(&mut d, &[outside.clone()], false, &g).unwrap_err();
        assert!(matches!(err, Error::ImplantPlacement(_)));

        let mut d = MaterialDecomposition::zeros(grid);
        place_implants(&mut d, &[outside], true, &g).unwrap();
        assert!(d.implant.data.iter().any(|&m| m == 1.0));
    }

    #[test]
    fn invisible_implants_are_rejected() {
        let g = geom();
        let grid = grid_32();
        // Far above the cone along z: never projected onto the detector.
        let shape = ImplantShape::Sphere { center_mm: [0.0, 0.0, 500.0], radius_mm: 3.0 };
        let mut d = MaterialDecomposition::zeros(grid);
        let err = place_implants(&mut d, &[shape], true, &g).unwrap_err();
        assert!(matches!(err, Error::ImplantPlacement(_)), "got {err:?}");
    }

    #[test]
    fn two_separated_cylinders_make_two_components() {
        let g = geom();
        let grid = grid_32();
        let mut d = MaterialDecomposition::zeros(grid);
        let implants = [
            ImplantShape::ZCylinder {
                center_mm: [-12.0, 0.0, 0.0],
                radius_mm: 3.0,
                half_length_mm: 8.0,
            },
            ImplantShape::ZCylinder {
                center_mm: [12.0, 0.0, 0.0],
                radius_mm: 3.0,
                half_length_mm: 8.0,
            },
        ];
        place_implants(&mut d, &implants, false, &g).unwrap();
        assert_eq!(connected_components(&d.implant), 2);
    }

    #[test]
    fn implants_carve_out_bone() {
        let g = geom();
        let grid = grid_32();
        let spec = PhantomSpec {
            ellipsoids: vec![sphere([0.0; 3], 10.0, Material::Bone, 0.05)],
            seed: 0,
        };
        let mut d = rasterize(&spec, &grid);
        assert!(d.bone.data[[16, 16, 16]] > 0.0);
        place_implants(
            &mut d,
            &[ImplantShape::Sphere { center_mm: [0.0; 3], radius_mm: 4.0 }],
            false,
            &g,
        )
        .unwrap();
        assert_eq!(d.implant.data[[16, 16, 16]], 1.0);
        assert_eq!(d.bone.data[[16, 16, 16]], 0.0);
        MaterialDecomposition::new(d.water, d.bone, d.implant).unwrap();
    }

    #[test]
    fn random_phantoms_are_seeded_and_distinct() {
        let a = random_phantom(11, 26.0);
        let b = random_phantom(11, 26.0);
        let c = random_phantom(12, 26.0);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
        assert!(a.ellipsoids.len() >= 5);
        for e in &a.ellipsoids {
            let r_xy = (e.center_mm[0].powi(2) + e.center_mm[1].powi(2)).sqrt();
            assert!(r_xy <= 26.0, "feature centre outside the requested extent");
        }
        // Rasterizing a random phantom yields a valid decomposition.
        let d = rasterize(&a, &grid_32());
        MaterialDecomposition::new(d.water, d.bone, d.implant).unwrap();
    }
}
