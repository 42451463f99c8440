//! Principal-axes initialisation.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use super::{Landmark, RigidTransform};
use crate::error::{Error, Result};
use crate::mesh::centroid;

/// Ratio below which the second principal variance counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Centroid and right-handed principal axes (columns, by decreasing
/// variance) of a point set.
#[derive(Debug, Clone, Copy)]
pub struct PrincipalFrame {
    pub centroid: Point3<f64>,
    pub axes: Matrix3<f64>,
    pub variances: [f64; 3],
}

pub fn principal_frame(points: &[Point3<f64>]) -> Result<PrincipalFrame> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "PCA needs at least 3 points, got {}",
            points.len()
        )));
    }
    let c = centroid(points).unwrap();
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let variances = order.map(|i| eig.eigenvalues[i].max(0.0));
    if variances[0] <= 0.0 || variances[1] <= RANK_TOL * variances[0] {
        return Err(Error::Degenerate(
            "point set is collinear; principal axes are undefined".into(),
        ));
    }
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).normalize();
    let e3 = e1.cross(&e2);
    Ok(PrincipalFrame {
        centroid: c,
        axes: Matrix3::from_columns(&[e1, e2, e3]),
        variances,
    })
}

/// One of the four proper sign choices for mapping source axes onto target
/// axes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PcaCandidate {
    pub signs: [i8; 3],
    /// Distance between the landmarks after centroid-to-centroid alignment.
    pub landmark_distance: f64,
    /// Rotation angle of the candidate, degrees.
    pub rotation_deg: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone)]
pub struct PcaAlignment {
    pub transform: RigidTransform,
    pub candidates: [PcaCandidate; 4],
    /// Index of the chosen candidate; `None` when no candidate was
    /// admissible and the rotation fell back to identity.
    pub chosen: Option<usize>,
}

/// Rotate the source principal axes onto the target ones, then translate so
/// the source landmark lands on the target landmark.
///
/// The axis signs leave four proper rotations. Because both inputs come in
/// the same anatomical orientation, candidates rotating by more than
/// `max_rotation_deg` are discarded; the remaining candidate with the
/// smallest landmark-pair distance (after matching centroids) is chosen.
/// Without admissible candidate the rotation is the identity.
pub fn pca_align(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
    landmark: &Landmark,
    max_rotation_deg: f64,
) -> Result<PcaAlignment> {
    let s = principal_frame(source)?;
    let t = principal_frame(target)?;
    const SIGNS: [[i8; 3]; 4] = [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]];

    let rotations = SIGNS.map(|sg| {
        let d = Matrix3::from_diagonal(&Vector3::new(sg[0] as f64, sg[1] as f64, sg[2] as f64));
        t.axes * d * s.axes.transpose()
    });
    let candidates: [PcaCandidate; 4] = std::array::from_fn(|i| {
        let r = rotations[i];
        let moved = r * (landmark.segmented - s.centroid) + t.centroid.coords;
        let rot = RigidTransform::from_parts_unchecked(r, Vector3::zeros());
        let rotation_deg = rot.rotation_angle().to_degrees();
        PcaCandidate {
            signs: SIGNS[i],
            landmark_distance: (moved - landmark.camera.coords).norm(),
            rotation_deg,
            admissible: rotation_deg <= max_rotation_deg,
        }
    });
    let chosen = (0..4).filter(|&i| candidates[i].admissible).min_by(|&a, &b| {
        candidates[a]
            .landmark_distance
            .total_cmp(&candidates[b].landmark_distance)
            .then(a.cmp(&b))
    });
    let r = chosen.map(|i| rotations[i]).unwrap_or_else(Matrix3::identity);
    let translation = landmark.camera.coords - r * landmark.segmented.coords;
    Ok(PcaAlignment {
        transform: RigidTransform::from_parts_unchecked(r, translation),
        candidates,
        chosen,
    })
}
