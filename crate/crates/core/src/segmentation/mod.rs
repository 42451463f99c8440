//! Slice-wise skin segmentation.
//!
//! Every slice gets a label grid initialised to [`Label::Interior`]. A
//! breadth-first fill starts from a background corner and walks over
//! 4-connected pixels that are below the skin iso-value, labelling them
//! [`Label::Background`]. The first pixel at or above the iso-value met along
//! any path is labelled [`Label::Skin`] and is not expanded, so whatever the
//! fill never reaches keeps the initial label and forms the body interior.

mod marching_cubes;

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::volume::{pad_slices, SliceView, Volume, VolumeGeometry};

pub use marching_cubes::marching_cubes;

/// Per-voxel class of the segmentation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Skin = 1,
    Interior = 2,
}

/// Skin threshold in volume units (HU for CT, intensity for MR).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct IsoValue(f64);

impl IsoValue {
    pub fn new(threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "iso-value must be finite, got {threshold}"
            )));
        }
        Ok(Self(threshold))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_background(self, v: i32) -> bool {
        (v as f64) < self.0
    }
}

/// Labels of one slice, x-fastest, values in `{0, 1, 2}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceLabels {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl SliceLabels {
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

/// The four slice corners, in the order they are tried as seeds.
pub fn corner_seeds(width: usize, height: usize) -> [(usize, usize); 4] {
    [(0, 0), (width - 1, 0), (0, height - 1), (width - 1, height - 1)]
}

/// Flood-fill one slice from `seed`.
pub fn segment_slice(slice: &SliceView<'_>, iso: IsoValue, seed: (usize, usize)) -> Result<SliceLabels> {
    let (w, h) = (slice.width(), slice.height());
    if seed.0 >= w || seed.1 >= h {
        return Err(Error::InvalidParameter(format!("seed {seed:?} outside {w}x{h} slice")));
    }
    let seed_value = slice.get(seed.0, seed.1);
    if !iso.is_background(seed_value) {
        return Err(Error::SeedNotBackground {
            slice: 0,
            seed,
            value: seed_value,
            iso: iso.value(),
        });
    }

    let data = slice.data();
    let mut labels = vec![Label::Interior as u8; w * h];
    let mut queued = vec![false; w * h];
    let mut queue = VecDeque::new();
    let start = seed.1 * w + seed.0;
    queued[start] = true;
    queue.push_back(start);

    while let Some(p) = queue.pop_front() {
        if !iso.is_background(data[p]) {
            labels[p] = Label::Skin as u8;
            continue;
        }
        labels[p] = Label::Background as u8;
        let (x, y) = (p % w, p / w);
        let mut push = |q: usize| {
            if !queued[q] {
                queued[q] = true;
                queue.push_back(q);
            }
        };
        if x > 0 {
            push(p - 1);
        }
        if x + 1 < w {
            push(p + 1);
        }
        if y > 0 {
            push(p - w);
        }
        if y + 1 < h {
            push(p + w);
        }
    }

    Ok(SliceLabels {
        width: w,
        height: h,
        labels,
    })
}

/// Try the four corners in turn; the error of the last corner is returned
/// when none of them is background.
fn segment_slice_any_corner(slice: &SliceView<'_>, iso: IsoValue, k: usize) -> Result<SliceLabels> {
    let mut last = None;
    for seed in corner_seeds(slice.width(), slice.height()) {
        match segment_slice(slice, iso, seed) {
            Ok(l) => return Ok(l),
            Err(Error::SeedNotBackground { seed, value, iso, .. }) => {
                last = Some(Error::SeedNotBackground {
                    slice: k,
                    seed,
                    value,
                    iso,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("four corners tried"))
}

/// Label grid over a whole volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    dims: [usize; 3],
    geometry: VolumeGeometry,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(dims: [usize; 3], geometry: VolumeGeometry, labels: Vec<u8>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if labels.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 2) {
            return Err(Error::InvalidParameter(format!("label {bad} not in {{0,1,2}}")));
        }
        Ok(Self { dims, geometry, labels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    /// Voxel counts for background, skin and interior.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// `true` when no background voxel is 4-adjacent (in-slice) to an
    /// interior voxel.
    pub fn skin_separates(&self) -> bool {
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let l = self.get(i, j, k);
                    if i + 1 < nx && l + self.get(i + 1, j, k) == 2 && l != 1 {
                        return false;
                    }
                    if j + 1 < ny && l + self.get(i, j + 1, k) == 2 && l != 1 {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Segment every slice of `vol` (after one voxel of padding) and crop the
/// labels back to the original extent. Slices run in parallel on the current
/// rayon pool and are merged in slice order.
pub fn segment_volume(vol: &Volume, iso: IsoValue) -> Result<LabelGrid> {
    segment_volume_padded(vol, iso, 1)
}

pub fn segment_volume_padded(vol: &Volume, iso: IsoValue, pad: usize) -> Result<LabelGrid> {
    let padded = pad_slices(vol, pad);
    let [px, py, nz] = padded.dims();
    let [nx, ny, _] = vol.dims();
    let slices: Vec<SliceLabels> = (0..nz)
        .into_par_iter()
        .map(|k| segment_slice_any_corner(&padded.slice(k), iso, k))
        .collect::<Result<_>>()?;

    let mut labels = Vec::with_capacity(nx * ny * nz);
    for s in &slices {
        debug_assert_eq!((s.width, s.height), (px, py));
        for j in 0..ny {
            let row = (j + pad) * px + pad;
            labels.extend_from_slice(&s.labels[row..row + nx]);
        }
    }
    LabelGrid::new(vol.dims(), *vol.geometry(), labels)
}

/// Marching cubes on the body indicator (labels 1 and 2) at level 0.5, with
/// vertices at edge midpoints. The grid is treated as surrounded by
/// background so the surface is closed. Returns an empty mesh when there is
/// no body voxel.
pub fn extract_skin_mesh(labels: &LabelGrid, geometry: &VolumeGeometry) -> Result<TriangleMesh> {
    let [nx, ny, nz] = labels.dims();
    let inside = |i: i64, j: i64, k: i64| {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < nx
            && (j as usize) < ny
            && (k as usize) < nz
            && labels.get(i as usize, j as usize, k as usize) != Label::Background as u8
    };
    marching_cubes(labels.dims(), inside, geometry)
}
