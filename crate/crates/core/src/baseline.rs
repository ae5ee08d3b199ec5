//! Linear-interpolation inpainting baseline.
//!
//! Fills masked pixels of each angle slice independently by Delaunay
//! triangulation of the known pixels followed by barycentric interpolation.
//! Pixels outside the convex hull of the known points fall back to the
//! nearest known pixel value, so the output always stays within the range
//! spanned by the known data.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spade::{
    handles::VertexHandle, DelaunayTriangulation, HasPosition, Point2, PositionInTriangulation,
    Triangulation,
};

use crate::error::{Error, Result};
use crate::geometry::{DomainTag, ProjectionStack};

/// Options controlling how the interpolation point set is built.
///
/// Triangulating every known pixel of a slice is wasteful: far away from the
/// masked region the surface is only ever evaluated near its vertices. The
/// default therefore keeps every known pixel inside a small band around the
/// mask and thins the remainder to a regular subgrid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LiConfig {
    /// Chebyshev radius (in pixels) of the band around masked pixels in which
    /// every known pixel becomes a triangulation vertex.
    pub band_radius: usize,
    /// Stride of the subgrid of known pixels used outside the band.
    pub sparse_stride: usize,
    /// Use every known pixel as a vertex, ignoring the band/stride thinning.
    pub full_density: bool,
}

impl Default for LiConfig {
    fn default() -> Self {
        Self {
            band_radius: 3,
            sparse_stride: 4,
            full_density: false,
        }
    }
}

impl LiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sparse_stride == 0 {
            return Err(Error::Config("sparse_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// A known pixel sample: position in pixel coordinates plus its value.
struct Sample {
    pos: Point2<f64>,
    value: f64,
}

impl HasPosition for Sample {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.pos
    }
}

/// Grow the masked set by `radius` pixels in Chebyshev distance.
fn dilate_chebyshev(mask: ArrayView2<'_, f64>, radius: usize) -> Array2<bool> {
    let mut cur = mask.map(|&m| m != 0.0);
    let (n1, n2) = cur.dim();
    for _ in 0..radius {
        let prev = cur.clone();
        for i in 0..n1 {
            for j in 0..n2 {
                if prev[[i, j]] {
                    continue;
                }
                let i0 = i.saturating_sub(1);
                let i1 = (i + 1).min(n1 - 1);
                let j0 = j.saturating_sub(1);
                let j1 = (j + 1).min(n2 - 1);
                'scan: for ii in i0..=i1 {
                    for jj in j0..=j1 {
                        if prev[[ii, jj]] {
                            cur[[i, j]] = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }
    cur
}

fn vertex_value(v: &VertexHandle<'_, Sample>) -> f64 {
    v.data().value
}

/// Interpolate one slice in place. `values` holds the slice data, `mask` is
/// 1.0 on pixels to fill and 0.0 on known pixels.
fn inpaint_slice(values: &mut Array2<f64>, mask: ArrayView2<'_, f64>, cfg: &LiConfig) -> Result<()> {
    let (n1, n2) = values.dim();
    let masked: Vec<(usize, usize)> = mask
        .indexed_iter()
        .filter(|&(_, &m)| m != 0.0)
        .map(|((i, j), _)| (i, j))
        .collect();
    if masked.is_empty() {
        return Ok(());
    }
    let n_known = n1 * n2 - masked.len();
    if n_known < 3 {
        return Err(Error::Config(format!(
            "linear interpolation needs at least 3 known pixels per slice, found {n_known}"
        )));
    }

    let band = dilate_chebyshev(mask, cfg.band_radius);
    let mut tri: DelaunayTriangulation<Sample> = DelaunayTriangulation::new();
    for i in 0..n1 {
        for j in 0..n2 {
            if mask[[i, j]] != 0.0 {
                continue;
            }
            let keep = cfg.full_density
                || band[[i, j]]
                || (i % cfg.sparse_stride == 0 && j % cfg.sparse_stride == 0);
            if !keep {
                continue;
            }
            tri.insert(Sample {
                pos: Point2::new(j as f64, i as f64),
                value: values[[i, j]],
            })
            .map_err(|e| Error::Numerical(format!("triangulation insert failed: {e:?}")))?;
        }
    }

    for &(i, j) in &masked {
        let p = Point2::new(j as f64, i as f64);
        let value = match tri.locate(p) {
            PositionInTriangulation::OnFace(f) => {
                let face = tri.face(f);
                let weights = face.barycentric_interpolation(p);
                let verts = face.vertices();
                weights
                    .iter()
                    .zip(verts.iter())
                    .map(|(w, v)| w * vertex_value(v))
                    .sum()
            }
            PositionInTriangulation::OnEdge(e) => {
                let edge = tri.directed_edge(e);
                let a = edge.from();
                let b = edge.to();
                let (pa, pb) = (a.position(), b.position());
                let (dx, dy) = (pb.x - pa.x, pb.y - pa.y);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((p.x - pa.x) * dx + (p.y - pa.y) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (1.0 - t) * vertex_value(&a) + t * vertex_value(&b)
            }
            PositionInTriangulation::OnVertex(v) => vertex_value(&tri.vertex(v)),
            PositionInTriangulation::OutsideOfConvexHull(_)
            | PositionInTriangulation::NoTriangulation => tri
                .nearest_neighbor(p)
                .map(|v| vertex_value(&v))
                .ok_or_else(|| Error::Numerical("triangulation has no vertices".into()))?,
        };
        values[[i, j]] = value;
    }
    Ok(())
}

/// Fill the masked pixels of every angle slice by planar interpolation over
/// the known pixels of the same slice. Known pixels are returned unchanged.
pub fn li_inpaint(
    stack: &ProjectionStack,
    mask: &ProjectionStack,
    cfg: &LiConfig,
) -> Result<ProjectionStack> {
    cfg.validate()?;
    if mask.domain != DomainTag::Mask {
        return Err(Error::Config(format!(
            "li_inpaint mask must be in the mask domain, got {:?}",
            mask.domain
        )));
    }
    if stack.data.dim() != mask.data.dim() {
        return Err(Error::ShapeMismatch(format!(
            "li_inpaint: stack {:?} vs mask {:?}",
            stack.data.dim(),
            mask.data.dim()
        )));
    }
    let mut out = stack.clone();
    let n_angles = out.data.len_of(Axis(2));
    let slices: Result<Vec<Array2<f64>>> = (0..n_angles)
        .into_par_iter()
        .map(|k| {
            let mut v = stack.data.index_axis(Axis(2), k).to_owned();
            inpaint_slice(&mut v, mask.data.index_axis(Axis(2), k), cfg)?;
            Ok(v)
        })
        .collect();
    for (k, s) in slices?.into_iter().enumerate() {
        out.data.index_axis_mut(Axis(2), k).assign(&s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConeBeamGeometry, GeometryConfig};
    use ndarray::Array3;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack_from(data: Array3<f64>, domain: DomainTag) -> ProjectionStack {
        let (d1, d2, d3) = data.dim();
        let g = ConeBeamGeometry::new(GeometryConfig {
            dso_mm: 500.0,
            dsd_mm: 1000.0,
            n_cols: d1,
            n_rows: d2,
            pixel_size_mm: 1.0,
            n_angles: d3,
            angles_rad: None,
            fov_radius_mm: 30.0,
        })
        .unwrap();
        ProjectionStack::new(g, domain, data).unwrap()
    }

    fn random_case(seed: u64, n1: usize, n2: usize) -> (ProjectionStack, ProjectionStack) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_fn((n1, n2, 1), |_| rng.random_range(0.0..1.0));
        // A random interior rectangle of masked pixels: a known ring always
        // remains around the blob, so it lies inside the convex hull.
        let h = rng.random_range(1..=n1 / 2);
        let w = rng.random_range(1..=n2 / 2);
        let i0 = rng.random_range(1..n1 - h);
        let j0 = rng.random_range(1..n2 - w);
        let mut m = Array3::zeros((n1, n2, 1));
        for i in i0..i0 + h {
            for j in j0..j0 + w {
                m[[i, j, 0]] = 1.0;
            }
        }
        (
            stack_from(data, DomainTag::Normalized),
            stack_from(m, DomainTag::Mask),
        )
    }

    #[test]
    fn empty_mask_is_a_bitwise_passthrough() {
        let (stack, _) = random_case(7, 16, 12);
        let mask = stack_from(Array3::zeros((16, 12, 1)), DomainTag::Mask);
        let out = li_inpaint(&stack, &mask, &LiConfig::default()).unwrap();
        assert_eq!(
            out.data.as_slice().unwrap(),
            stack.data.as_slice().unwrap(),
            "untouched slices must be bit-identical"
        );
    }

    #[test]
    fn affine_fields_are_reproduced_exactly() {
        // Planar interpolation is exact for affine data, no matter where the
        // mask sits, because every triangle interpolates the same plane.
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let (n1, n2) = (20, 17);
            let a = rng.random_range(-1.0..1.0);
            let b = rng.random_range(-1.0..1.0);
            let c = rng.random_range(-1.0..1.0);
            let plane = Array3::from_shape_fn((n1, n2, 1), |(i, j, _)| {
                a * i as f64 + b * j as f64 + c
            });
            let (_, mask) = random_case(300 + seed, n1, n2);
            let stack = stack_from(plane.clone(), DomainTag::Normalized);
            for cfg in [
                LiConfig::default(),
                LiConfig {
                    full_density: true,
                    ..LiConfig::default()
                },
            ] {
                let out = li_inpaint(&stack, &mask, &cfg).unwrap();
                let scale = plane.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let err = (&out.data - &plane)
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(
                    err <= 1e-9 * scale,
                    "seed {seed}: affine reproduction error {err:.3e}"
                );
            }
        }
    }

    #[test]
    fn symmetric_neighbours_average_to_their_midpoint() {
        // All known pixels are 3.0 except the two horizontal neighbours of the
        // centre, which sit symmetrically at 2.0 and 4.0. Any triangle that
        // contains the centre yields exactly 3.0 there.
        let mut data = Array3::from_elem((5, 5, 1), 3.0);
        data[[2, 1, 0]] = 2.0;
        data[[2, 3, 0]] = 4.0;
        let mut m = Array3::zeros((5, 5, 1));
        m[[2, 2, 0]] = 1.0;
        let stack = stack_from(data, DomainTag::Normalized);
        let mask = stack_from(m, DomainTag::Mask);
        let out = li_inpaint(&stack, &mask, &LiConfig::default()).unwrap();
        assert!(
            (out.data[[2, 2, 0]] - 3.0).abs() <= 1e-9,
            "centre value {}",
            out.data[[2, 2, 0]]
        );
    }

    #[test]
    fn inpainting_twice_is_idempotent() {
        let (stack, mask) = random_case(42, 24, 24);
        let cfg = LiConfig::default();
        let once = li_inpaint(&stack, &mask, &cfg).unwrap();
        let twice = li_inpaint(&once, &mask, &cfg).unwrap();
        assert_eq!(
            once.data.as_slice().unwrap(),
            twice.data.as_slice().unwrap(),
            "re-running on an already filled stack must change nothing"
        );
    }

    #[test]
    fn filled_values_stay_within_the_known_range() {
        for seed in 0..50u64 {
            let (stack, mask) = random_case(1000 + seed, 18, 15);
            let out = li_inpaint(&stack, &mask, &LiConfig::default()).unwrap();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            ndarray::Zip::from(&stack.data)
                .and(&mask.data)
                .for_each(|&v, &m| {
                    if m == 0.0 {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                });
            let eps = 1e-12 * hi.abs().max(lo.abs()).max(1.0);
            ndarray::Zip::from(&out.data).and(&mask.data).for_each(|&v, &m| {
                if m != 0.0 {
                    assert!(
                        v >= lo - eps && v <= hi + eps,
                        "seed {seed}: filled value {v} outside known range [{lo}, {hi}]"
                    );
                }
            });
        }
    }

    #[test]
    fn too_few_known_pixels_is_rejected() {
        let data = Array3::from_elem((3, 3, 1), 0.5);
        let mut m = Array3::from_elem((3, 3, 1), 1.0);
        m[[0, 0, 0]] = 0.0;
        m[[2, 2, 0]] = 0.0;
        let err = li_inpaint(
            &stack_from(data, DomainTag::Normalized),
            &stack_from(m, DomainTag::Mask),
            &LiConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn mask_domain_and_shape_are_enforced() {
        let (stack, mask) = random_case(5, 8, 8);
        let bad_domain = stack_from(mask.data.clone(), DomainTag::Normalized);
        assert!(li_inpaint(&stack, &bad_domain, &LiConfig::default()).is_err());
        let bad_shape = stack_from(Array3::zeros((8, 9, 1)), DomainTag::Mask);
        assert_eq!(
            li_inpaint(&stack, &bad_shape, &LiConfig::default())
                .unwrap_err()
                .exit_code(),
            4
        );
        let bad_cfg = LiConfig {
            sparse_stride: 0,
            ..LiConfig::default()
        };
        assert!(li_inpaint(&stack, &mask, &bad_cfg).is_err());
    }

    #[test]
    fn band_thinning_matches_full_density_near_the_mask() {
        // Inside the band every known pixel is a vertex, so for data that is
        // locally affine near the mask the thinned and full triangulations
        // agree there even though the far field is thinned.
        let (n1, n2) = (32, 32);
        let data = Array3::from_shape_fn((n1, n2, 1), |(i, j, _)| {
            0.02 * i as f64 - 0.01 * j as f64 + 0.3
        });
        let mut m = Array3::zeros((n1, n2, 1));
        for i in 14..18 {
            for j in 15..19 {
                m[[i, j, 0]] = 1.0;
            }
        }
        let stack = stack_from(data, DomainTag::Normalized);
        let mask = stack_from(m, DomainTag::Mask);
        let thin = li_inpaint(&stack, &mask, &LiConfig::default()).unwrap();
        let full = li_inpaint(
            &stack,
            &mask,
            &LiConfig {
                full_density: true,
                ..LiConfig::default()
            },
        )
        .unwrap();
        let gap = (&thin.data - &full.data)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(gap <= 1e-9, "thinned vs full-density gap {gap:.3e}");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (stack, mask) = random_case(77, 20, 20);
        let cfg = LiConfig::default();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| li_inpaint(&stack, &mask, &cfg).unwrap());
        let b = pool4.install(|| li_inpaint(&stack, &mask, &cfg).unwrap());
        assert_eq!(a.data.as_slice().unwrap(), b.data.as_slice().unwrap());
    }
}
