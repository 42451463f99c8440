//! Trimmed point-to-point ICP.

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RigidTransform;
use crate::error::{Error, Result};
use crate::mesh::{KdTree, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the trimmed RMS residual improves by less than this (mm).
    pub tolerance_mm: f64,
    /// Fraction of correspondences kept per iteration in the first stage.
    pub trim_stage1: f64,
    /// Fraction of the stage-1 source kept as stage-2 source, and the trim
    /// fraction used during stage 2.
    pub trim_stage2: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            tolerance_mm: 0.001,
            trim_stage1: 0.9,
            trim_stage2: 0.8,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("trim_stage1", self.trim_stage1), ("trim_stage2", self.trim_stage2)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must be in (0, 1], got {f}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be non-negative, got {}",
                self.tolerance_mm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub iterations: usize,
    /// Root of the mean squared trimmed residual before the first update and
    /// after each accepted update, mm. Non-increasing.
    pub residuals: Vec<f64>,
    /// Closest-target distance of every source point at the final pose.
    pub distances: Vec<f64>,
}

impl IcpResult {
    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().unwrap()
    }
}

/// What ICP aligns onto: a point set, or a triangle mesh whose surface is
/// queried through the triangles around the nearest vertex.
#[derive(Debug, Clone)]
pub struct IcpTarget {
    tree: KdTree,
    triangles: Vec<[u32; 3]>,
    /// Triangles incident to vertex `v`: `incident[offsets[v]..offsets[v + 1]]`.
    offsets: Vec<usize>,
    incident: Vec<u32>,
}

impl IcpTarget {
    pub fn from_points(points: &[Point3<f64>]) -> Result<Self> {
        Ok(Self {
            tree: KdTree::build(points)?,
            triangles: Vec::new(),
            offsets: vec![0; points.len() + 1],
            incident: Vec::new(),
        })
    }

    pub fn from_mesh(mesh: &TriangleMesh) -> Result<Self> {
        let n = mesh.vertices().len();
        let tree = KdTree::build(mesh.vertices())?;
        let mut offsets = vec![0usize; n + 1];
        for t in mesh.triangles() {
            for &v in t {
                offsets[v as usize + 1] += 1;
            }
        }
        for v in 0..n {
            offsets[v + 1] += offsets[v];
        }
        let mut fill = offsets.clone();
        let mut incident = vec![0u32; offsets[n]];
        for (ti, t) in mesh.triangles().iter().enumerate() {
            for &v in t {
                incident[fill[v as usize]] = ti as u32;
                fill[v as usize] += 1;
            }
        }
        Ok(Self {
            tree,
            triangles: mesh.triangles().to_vec(),
            offsets,
            incident,
        })
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }

    /// Closest point to `p` on the vertices and on the triangles incident to
    /// the nearest vertex.
    pub fn closest(&self, p: &Point3<f64>) -> (Point3<f64>, f64) {
        let n = self.tree.nearest(p);
        let mut best = (*self.tree.point(n.index), n.distance);
        for &ti in &self.incident[self.offsets[n.index]..self.offsets[n.index + 1]] {
            let [a, b, c] = self.triangles[ti as usize].map(|i| *self.tree.point(i as usize));
            let q = closest_on_triangle(p, &a, &b, &c);
            let d = (p - q).norm();
            if d < best.1 {
                best = (q, d);
            }
        }
        best
    }
}

/// Closest point of triangle `abc` to `p`, by Voronoi region of the
/// triangle's features.
pub fn closest_on_triangle(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Point3<f64> {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

struct Matching {
    /// (source index, closest target point, distance), trimmed and sorted
    /// by distance then source index.
    kept: Vec<(usize, Point3<f64>, f64)>,
    distances: Vec<f64>,
    rms: f64,
}

fn kept_count(n: usize, trim: f64) -> usize {
    ((trim * n as f64).ceil() as usize).clamp(1, n)
}

fn match_points(moved: &[Point3<f64>], target: &IcpTarget, trim: f64) -> Result<Matching> {
    let nn: Vec<_> = moved.par_iter().map(|p| target.closest(p)).collect();
    let mut order: Vec<usize> = (0..moved.len()).collect();
    order.sort_by(|&a, &b| nn[a].1.total_cmp(&nn[b].1).then(a.cmp(&b)));
    order.truncate(kept_count(moved.len(), trim));
    if order.len() < 3 {
        return Err(Error::InsufficientCorrespondences { found: order.len() });
    }
    let kept: Vec<_> = order.iter().map(|&i| (i, nn[i].0, nn[i].1)).collect();
    let rms = (kept.iter().map(|k| k.2 * k.2).sum::<f64>() / kept.len() as f64).sqrt();
    Ok(Matching {
        kept,
        distances: nn.iter().map(|n| n.1).collect(),
        rms,
    })
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]`, with the
/// determinant correction that excludes reflections.
pub fn kabsch(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::SizeMismatch {
            expected: src.len(),
            actual: dst.len(),
        });
    }
    if src.len() < 3 {
        return Err(Error::InsufficientCorrespondences { found: src.len() });
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidTransform::from_parts_unchecked(r, cd - r * cs))
}

/// Refine `init` so that `source` moves onto the indexed target.
///
/// Each iteration pairs every moved source point with its closest target
/// point, keeps the `trim` fraction of pairs with the smallest distances and
/// solves for the rigid motion of the kept pairs from the original source.
/// The trimmed sum of squares cannot grow from one iteration to the next;
/// an update that raises it through rounding is rejected and iteration
/// stops, so the residual history is non-increasing.
pub fn icp_trimmed(
    source: &[Point3<f64>],
    target: &IcpTarget,
    init: &RigidTransform,
    params: &IcpParams,
    trim: f64,
) -> Result<IcpResult> {
    params.validate()?;
    if !(trim > 0.0 && trim <= 1.0) {
        return Err(Error::InvalidParameter(format!("trim must be in (0, 1], got {trim}")));
    }
    if source.is_empty() {
        return Err(Error::Empty("ICP source"));
    }
    let mut xf = *init;
    let mut m = match_points(&xf.apply_points(source), target, trim)?;
    let mut residuals = vec![m.rms];
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let src: Vec<_> = m.kept.iter().map(|k| source[k.0]).collect();
        let dst: Vec<_> = m.kept.iter().map(|k| k.1).collect();
        let candidate = kabsch(&src, &dst)?;
        let next = match_points(&candidate.apply_points(source), target, trim)?;
        if next.rms > m.rms {
            break;
        }
        let gain = m.rms - next.rms;
        xf = candidate;
        m = next;
        residuals.push(m.rms);
        if gain < params.tolerance_mm {
            break;
        }
    }
    Ok(IcpResult {
        transform: xf,
        iterations,
        residuals,
        distances: m.distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const NX: usize = 60;
    const NY: usize = 45;

    /// Wavy triangulated sheet with an off-centre hill, so no sliding
    /// symmetry. 2 mm grid.
    fn sheet() -> TriangleMesh {
        let mut pts = Vec::new();
        for j in 0..NY {
            for i in 0..NX {
                let (x, y) = (i as f64 * 2.0 - 60.0, j as f64 * 2.0 - 45.0);
                let hill = 20.0 * (-((x - 20.0).powi(2) + (y + 10.0).powi(2)) / 300.0).exp();
                pts.push(Point3::new(x, y, 8.0 * (x / 17.0).sin() * (y / 23.0).cos() + hill));
            }
        }
        let mut tris = Vec::new();
        for j in 0..NY - 1 {
            for i in 0..NX - 1 {
                let v = (j * NX + i) as u32;
                let (r, u, ru) = (v + 1, v + NX as u32, v + NX as u32 + 1);
                tris.push([v, r, ru]);
                tris.push([v, ru, u]);
            }
        }
        TriangleMesh::new(pts, tris).unwrap()
    }

    fn tight() -> IcpParams {
        IcpParams {
            max_iterations: 200,
            tolerance_mm: 1e-9,
            ..IcpParams::default()
        }
    }

    fn pose_err(est: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
        (
            (est.translation() - truth.translation()).norm(),
            est.rotation_angle_to(truth).to_degrees(),
        )
    }

    #[test]
    fn kabsch_recovers_exact_motion() {
        let src = sheet().vertices().to_vec();
        let truth = RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.4, Vector3::new(5.0, -7.0, 2.0));
        let dst = truth.apply_points(&src);
        let est = kabsch(&src, &dst).unwrap();
        assert!((est.rotation() - truth.rotation()).abs().max() < 1e-12);
        assert!((est.translation() - truth.translation()).abs().max() < 1e-10);
        assert!((est.rotation().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kabsch_never_reflects() {
        // Planar points mirrored: the best orthogonal fit is a reflection.
        let src = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
        ];
        let dst: Vec<_> = src.iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect();
        let est = kabsch(&src, &dst).unwrap();
        assert!((est.rotation().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closest_on_triangle_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut r = || {
            Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            )
        };
        for _ in 0..200 {
            let (a, b, c, p) = (r(), r(), r(), r());
            let q = closest_on_triangle(&p, &a, &b, &c);
            let mut best = f64::INFINITY;
            let n = 200;
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                    best = best.min((p - (a + (b - a) * u + (c - a) * v)).norm());
                }
            }
            let d = (p - q).norm();
            assert!(d <= best + 1e-12, "closer sample exists");
            assert!(d > best - 0.1, "{d} vs {best}");
        }
    }

    #[test]
    fn aligned_input_is_a_fixed_point() {
        let m = sheet();
        let target = IcpTarget::from_mesh(&m).unwrap();
        let r = icp_trimmed(
            m.vertices(),
            &target,
            &RigidTransform::identity(),
            &IcpParams::default(),
            1.0,
        )
        .unwrap();
        assert!(r.transform.rotation_angle() < 1e-6);
        assert!(r.transform.translation().norm() < 1e-6);
        assert!(r.final_residual() < 1e-9);
    }

    #[test]
    fn recovers_five_mm_shift() {
        let m = sheet();
        let truth = RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0));
        let target = IcpTarget::from_mesh(&m.transformed(&truth)).unwrap();
        let init = RigidTransform::from_translation(Vector3::new(4.0, 0.5, 0.0));
        let r = icp_trimmed(m.vertices(), &target, &init, &tight(), 0.9).unwrap();
        assert!((r.transform.translation() - truth.translation()).norm() < 0.1);
        assert!(r.residuals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn trimming_rejects_gross_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = sheet();
        let truth = RigidTransform::from_axis_angle(
            &Vector3::new(0.2, 1.0, 0.1),
            3f64.to_radians(),
            Vector3::new(2.0, -1.5, 1.0),
        );
        let target = IcpTarget::from_mesh(&m.transformed(&truth)).unwrap();
        // Replace 20% of the source with points floating far off the surface.
        let mut src = m.vertices().to_vec();
        for p in src.iter_mut().step_by(5) {
            *p += Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(25.0..60.0),
            );
        }
        let init = RigidTransform::identity();
        let trimmed = pose_err(
            &icp_trimmed(&src, &target, &init, &tight(), 0.8).unwrap().transform,
            &truth,
        );
        let full = pose_err(
            &icp_trimmed(&src, &target, &init, &tight(), 1.0).unwrap().transform,
            &truth,
        );
        assert!(trimmed.0 < 1.0 && trimmed.1 < 1.0, "trimmed {trimmed:?}");
        assert!(full.0 > 1.0 || full.1 > 1.0, "untrimmed {full:?}");
    }

    #[test]
    fn point_target_uses_vertices() {
        let m = sheet();
        let t = IcpTarget::from_points(m.vertices()).unwrap();
        let q = Point3::new(0.9, 0.1, 50.0);
        let (p, d) = t.closest(&q);
        let n = t.tree().nearest(&q);
        assert_eq!((p, d), (*t.tree().point(n.index), n.distance));
    }

    #[test]
    fn too_few_pairs() {
        let pts = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        let t = IcpTarget::from_points(&pts).unwrap();
        let r = icp_trimmed(&pts, &t, &RigidTransform::identity(), &IcpParams::default(), 0.5);
        assert!(matches!(r, Err(Error::InsufficientCorrespondences { found: 2 })));
    }

    #[test]
    fn invalid_trim_rejected() {
        let m = sheet();
        let t = IcpTarget::from_mesh(&m).unwrap();
        for trim in [0.0, 1.5, f64::NAN] {
            assert!(icp_trimmed(
                m.vertices(),
                &t,
                &RigidTransform::identity(),
                &IcpParams::default(),
                trim
            )
            .is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn residual_history_never_increases(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..0.15,
            t in prop::array::uniform3(-6.0f64..6.0),
            trim in 0.5f64..=1.0,
        ) {
            prop_assume!(Vector3::from(axis).norm() > 1e-3);
            let m = sheet();
            let truth = RigidTransform::from_axis_angle(&Vector3::from(axis), angle, Vector3::from(t));
            let target = IcpTarget::from_mesh(&m.transformed(&truth)).unwrap();
            let r = icp_trimmed(m.vertices(), &target, &RigidTransform::identity(), &IcpParams::default(), trim).unwrap();
            prop_assert!(r.residuals.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.residuals);
            prop_assert!(r.transform.orthonormality_error() < 1e-9);
        }
    }
}
