//! Rigid co-registration of the segmented skin surface onto the camera
//! surface: anterior cut, principal-axes alignment anchored on a virtual
//! landmark pair, and two trimmed ICP refinements over a region of interest.

mod icp;
mod pca;
mod transform;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::errormap::{hausdorff, ErrorMap};
use crate::mesh::{front_cut_indexed, KdTree, TriangleMesh};

pub use icp::{closest_on_triangle, icp_trimmed, kabsch, IcpParams, IcpResult, IcpTarget};
pub use pca::{pca_align, principal_frame, PcaAlignment, PcaCandidate, PrincipalFrame};
pub use transform::{compose, invert, RigidTransform, RigidTransformJson};

#[cfg(test)]
pub(crate) use transform::strategy as transform_strategy;

/// Default radius of the region of interest around the landmark, mm.
pub const DEFAULT_ROI_MM: f64 = 150.0;
/// Maximum distance between a landmark and its surface, mm.
pub const LANDMARK_TOLERANCE_MM: f64 = 2.0;

/// A pair of corresponding points, one picked on each surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub segmented: Point3<f64>,
    pub camera: Point3<f64>,
}

impl Landmark {
    pub fn new(segmented: Point3<f64>, camera: Point3<f64>) -> Self {
        Self { segmented, camera }
    }

    /// Both landmarks displaced by the same vector.
    pub fn shifted(&self, by: &Vector3<f64>) -> Self {
        Self::new(self.segmented + by, self.camera + by)
    }

    /// Check that each point lies within `tol` mm of a vertex of its surface.
    pub fn validate(&self, seg: &KdTree, cam: &KdTree, tol: f64) -> Result<()> {
        for (name, p, tree) in [("segmented", &self.segmented, seg), ("camera", &self.camera, cam)] {
            let d = tree.nearest(p).distance;
            if !(d <= tol) {
                return Err(Error::InvalidParameter(format!(
                    "{name} landmark {:?} is {d:.2} mm from its surface (limit {tol} mm)",
                    [p.x, p.y, p.z]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoregisterConfig {
    pub icp: IcpParams,
    /// Source points farther than this from the segmented landmark are left
    /// out of ICP, mm.
    pub roi_radius_mm: f64,
    /// Anterior direction of the segmented volume, used by the front cut.
    pub anterior_axis: [f64; 3],
    /// PCA sign candidates rotating more than this are discarded, degrees.
    pub max_pca_rotation_deg: f64,
    pub landmark_tolerance_mm: f64,
}

impl Default for CoregisterConfig {
    fn default() -> Self {
        Self {
            icp: IcpParams::default(),
            roi_radius_mm: DEFAULT_ROI_MM,
            anterior_axis: [0.0, 1.0, 0.0],
            max_pca_rotation_deg: 60.0,
            landmark_tolerance_mm: LANDMARK_TOLERANCE_MM,
        }
    }
}

impl CoregisterConfig {
    pub fn validate(&self) -> Result<()> {
        self.icp.validate()?;
        if !(self.roi_radius_mm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ROI radius must be positive, got {}",
                self.roi_radius_mm
            )));
        }
        if Vector3::from(self.anterior_axis).try_normalize(1e-12).is_none() {
            return Err(Error::InvalidParameter("anterior axis must be non-zero".into()));
        }
        if !(self.max_pca_rotation_deg >= 0.0) || !(self.landmark_tolerance_mm >= 0.0) {
            return Err(Error::InvalidParameter(
                "PCA rotation limit and landmark tolerance must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn anterior(&self) -> Vector3<f64> {
        Vector3::from(self.anterior_axis).normalize()
    }
}

/// Summary of one ICP stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub source_points: usize,
    pub trim: f64,
    pub iterations: usize,
    pub residuals_mm: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Coregistration {
    /// Maps segmented-surface coordinates onto camera coordinates.
    pub transform: RigidTransform,
    /// Distances between the registered segmented surface and the camera
    /// surface, both restricted to the ROI ball around the camera landmark.
    pub error_map: ErrorMap,
    /// Anterior cut of the segmented mesh, in its own coordinates.
    pub front: TriangleMesh,
    /// Indices into `front` of the points in each error-map field.
    pub error_source: Vec<usize>,
    /// Indices into the camera mesh of the points in the second field.
    pub error_target: Vec<usize>,
    pub pca: PcaAlignment,
    pub stages: Vec<StageReport>,
}

/// Indices of the points within `radius` of `centre`, ascending.
pub fn select_roi(points: &[Point3<f64>], centre: &Point3<f64>, radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    (0..points.len())
        .filter(|&i| (points[i] - centre).norm_squared() <= r2)
        .collect()
}

/// Indices of the `fraction` of points with the smallest residuals, ties by
/// lower index, returned ascending.
pub fn best_fraction(residuals: &[f64], fraction: f64) -> Vec<usize> {
    let keep = ((fraction * residuals.len() as f64).ceil() as usize).min(residuals.len());
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    order.sort_by(|&a, &b| residuals[a].total_cmp(&residuals[b]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// Full co-registration of `seg` (volume coordinates) onto `cam`.
///
/// Stages: anterior cut, PCA alignment with landmark translation, ROI
/// selection around both landmarks, trimmed ICP, selection of the
/// best `trim_stage2` fraction of the stage-1 points, and a second trimmed
/// ICP. Errors carry the name of the failing stage.
pub fn coregister(
    seg: &TriangleMesh,
    cam: &TriangleMesh,
    landmark: &Landmark,
    config: &CoregisterConfig,
) -> Result<Coregistration> {
    config.validate().map_err(|e| e.in_stage("configuration"))?;
    if seg.is_empty() {
        return Err(Error::Empty("segmented mesh").in_stage("input"));
    }
    if cam.is_empty() {
        return Err(Error::Empty("camera mesh").in_stage("input"));
    }
    let cam_pts = cam.vertices();
    let cam_tree = KdTree::build(cam_pts).map_err(|e| e.in_stage("input"))?;
    let seg_tree = KdTree::build(seg.vertices()).map_err(|e| e.in_stage("input"))?;
    landmark
        .validate(&seg_tree, &cam_tree, config.landmark_tolerance_mm)
        .map_err(|e| e.in_stage("landmark"))?;

    let (front, _) = front_cut_indexed(seg, &config.anterior());
    if front.is_empty() {
        return Err(Error::Empty("anterior cut").in_stage("front_cut"));
    }
    let front_pts = front.vertices();

    let pca = pca_align(front_pts, cam_pts, landmark, config.max_pca_rotation_deg).map_err(|e| e.in_stage("pca"))?;

    let roi = select_roi(front_pts, &landmark.segmented, config.roi_radius_mm);
    if roi.is_empty() {
        return Err(Error::Empty("region of interest").in_stage("roi"));
    }
    let src1: Vec<_> = roi.iter().map(|&i| front_pts[i]).collect();
    let mut in_target_roi = vec![false; cam_pts.len()];
    for i in select_roi(cam_pts, &landmark.camera, config.roi_radius_mm) {
        in_target_roi[i] = true;
    }
    let target = IcpTarget::from_mesh(&cam.select_vertices(&in_target_roi).0).map_err(|e| e.in_stage("roi"))?;
    let icp = &config.icp;
    let s1 = icp_trimmed(&src1, &target, &pca.transform, icp, icp.trim_stage1).map_err(|e| e.in_stage("icp_stage1"))?;

    let src2: Vec<_> = best_fraction(&s1.distances, icp.trim_stage2)
        .into_iter()
        .map(|i| src1[i])
        .collect();
    let s2 = icp_trimmed(&src2, &target, &s1.transform, icp, icp.trim_stage2).map_err(|e| e.in_stage("icp_stage2"))?;

    let transform = s2.transform;
    let moved = transform.apply_points(front_pts);
    let error_source = select_roi(&moved, &landmark.camera, config.roi_radius_mm);
    let error_target = select_roi(cam_pts, &landmark.camera, config.roi_radius_mm);
    let x1: Vec<_> = error_source.iter().map(|&i| moved[i]).collect();
    let x2: Vec<_> = error_target.iter().map(|&i| cam_pts[i]).collect();
    let error_map = hausdorff(&x1, &x2).map_err(|e| e.in_stage("errormap"))?;

    let stage = |name: &str, n: usize, trim: f64, r: &IcpResult| StageReport {
        name: name.into(),
        source_points: n,
        trim,
        iterations: r.iterations,
        residuals_mm: r.residuals.clone(),
    };
    let stages = vec![
        stage("icp_stage1", src1.len(), icp.trim_stage1, &s1),
        stage("icp_stage2", src2.len(), icp.trim_stage2, &s2),
    ];
    Ok(Coregistration {
        transform,
        error_map,
        front,
        error_source,
        error_target,
        pca,
        stages,
    })
}

/// Translation and rotation discrepancy between an estimate and the truth,
/// the translation measured at `at` (mm, degrees).
pub fn pose_error(estimate: &RigidTransform, truth: &RigidTransform, at: &Point3<f64>) -> (f64, f64) {
    let dt = (estimate.apply_point(at) - truth.apply_point(at)).norm();
    (dt, estimate.rotation_angle_to(truth).to_degrees())
}
