//! Surface-to-surface error: per-vertex nearest distances in both
//! directions, the symmetric Hausdorff distance, and the blue-to-red colour
//! ramp used to paint the distances onto the meshes.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::KdTree;

/// Default colour saturation distance, millimetres.
pub const DEFAULT_SATURATION_MM: f64 = 5.0;

/// One direction of the Hausdorff distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedDistance {
    /// Distance from each source point to the nearest target point.
    pub per_point: Vec<f64>,
    pub max: f64,
}

/// Summary statistics of a distance distribution, millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl DistanceSummary {
    pub fn of(distances: &[f64]) -> Self {
        if distances.is_empty() {
            return Self {
                max: 0.0,
                mean: 0.0,
                median: 0.0,
                p95: 0.0,
            };
        }
        let mut sorted = distances.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            max: *sorted.last().unwrap(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: percentile(&sorted, 0.5),
            p95: percentile(&sorted, 0.95),
        }
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Median of unsorted data.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.5)
}

/// Nearest distance from every point of `from` to the indexed set.
pub fn directed_distance(from: &[Point3<f64>], to: &KdTree) -> Result<DirectedDistance> {
    if from.is_empty() {
        return Err(Error::Empty("source point set"));
    }
    let per_point: Vec<f64> = from.par_iter().map(|p| to.nearest(p).distance).collect();
    let max = per_point.iter().copied().fold(0.0, f64::max);
    Ok(DirectedDistance { per_point, max })
}

/// Distances between a pair of surfaces, `x1` (segmented) and `x2`
/// (camera).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    /// For every vertex of `x1`, the distance to `x2`.
    pub first: DirectedDistance,
    /// For every vertex of `x2`, the distance to `x1`.
    pub second: DirectedDistance,
    pub hausdorff: f64,
}

impl ErrorMap {
    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            hausdorff_mm: self.hausdorff,
            first_to_second: DistanceSummary::of(&self.first.per_point),
            second_to_first: DistanceSummary::of(&self.second.per_point),
            first_vertices: self.first.per_point.len(),
            second_vertices: self.second.per_point.len(),
        }
    }
}

/// JSON summary of an [`ErrorMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub hausdorff_mm: f64,
    pub first_to_second: DistanceSummary,
    pub second_to_first: DistanceSummary,
    pub first_vertices: usize,
    pub second_vertices: usize,
}

/// Symmetric Hausdorff distance with per-vertex fields for both surfaces.
pub fn hausdorff(x1: &[Point3<f64>], x2: &[Point3<f64>]) -> Result<ErrorMap> {
    let t1 = KdTree::build(x1)?;
    let t2 = KdTree::build(x2)?;
    hausdorff_indexed(x1, &t1, x2, &t2)
}

pub fn hausdorff_indexed(x1: &[Point3<f64>], t1: &KdTree, x2: &[Point3<f64>], t2: &KdTree) -> Result<ErrorMap> {
    let first = directed_distance(x1, t2)?;
    let second = directed_distance(x2, t1)?;
    let hausdorff = first.max.max(second.max);
    Ok(ErrorMap {
        first,
        second,
        hausdorff,
    })
}

/// Blue `(0,0,255)` at zero, red `(255,0,0)` at and beyond `saturation_mm`,
/// linear in between.
pub fn colorize(distances: &[f64], saturation_mm: f64) -> Result<Vec<[u8; 3]>> {
    if !(saturation_mm.is_finite() && saturation_mm > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "colour saturation must be positive, got {saturation_mm}"
        )));
    }
    Ok(distances.iter().map(|&d| color_of(d, saturation_mm)).collect())
}

pub fn color_of(distance: f64, saturation_mm: f64) -> [u8; 3] {
    let t = (distance / saturation_mm).clamp(0.0, 1.0);
    let t = if t.is_nan() { 1.0 } else { t };
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}
