//! Volumetric images: storage, the header+raw file format, slice padding,
//! decimation and oblique reformatting.
//!
//! Voxel positions always refer to voxel centres. A voxel index `(i, j, k)`
//! maps to patient millimetres as `origin + axes * (spacing ⊙ (i, j, k))`,
//! where the columns of `axes` are the patient-frame directions of the three
//! voxel axes. The patient frame is `x` left-right, `y` posterior-to-anterior
//! (`+y` is anterior) and `z` head-feet.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::registration::RigidTransform;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Physical placement of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGeometry {
    pub spacing: [f64; 3],
    pub origin: Point3<f64>,
    pub axes: Matrix3<f64>,
}

impl VolumeGeometry {
    pub fn new(spacing: [f64; 3], origin: Point3<f64>, axes: Matrix3<f64>) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing:?}")));
        }
        check_rotation(&axes, "axes")?;
        Ok(Self { spacing, origin, axes })
    }

    /// Axis-aligned geometry with the given spacing and origin.
    pub fn axis_aligned(spacing: [f64; 3], origin: Point3<f64>) -> Result<Self> {
        Self::new(spacing, origin, Matrix3::identity())
    }

    /// Patient-frame position of a (possibly fractional) voxel index.
    pub fn index_to_world(&self, index: [f64; 3]) -> Point3<f64> {
        let scaled = Vector3::new(
            index[0] * self.spacing[0],
            index[1] * self.spacing[1],
            index[2] * self.spacing[2],
        );
        self.origin + self.axes * scaled
    }

    /// Fractional voxel index of a patient-frame position.
    pub fn world_to_index(&self, p: &Point3<f64>) -> [f64; 3] {
        let local = self.axes.transpose() * (p - self.origin);
        [
            local.x / self.spacing[0],
            local.y / self.spacing[1],
            local.z / self.spacing[2],
        ]
    }

    /// Length of the voxel diagonal in millimetres.
    pub fn voxel_diagonal(&self) -> f64 {
        self.spacing.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

pub(crate) fn check_rotation(m: &Matrix3<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Geometry(format!("{what} contains non-finite values")));
    }
    let err = (m.transpose() * m - Matrix3::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(Error::Geometry(format!(
            "{what} is not orthonormal (max |AᵀA - I| = {err:e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::Geometry(format!("{what} must have determinant +1, got {det}")));
    }
    Ok(())
}

/// A 3D scalar image (CT Hounsfield units or MR intensities).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    geometry: VolumeGeometry,
    data: Vec<i32>,
}

impl Volume {
    /// Build a volume from x-fastest data.
    pub fn new(dims: [usize; 3], geometry: VolumeGeometry, data: Vec<i32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("dims must be >= 1, got {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, geometry, data })
    }

    /// A volume filled with a single value.
    pub fn filled(dims: [usize; 3], geometry: VolumeGeometry, value: i32) -> Result<Self> {
        Self::new(dims, geometry, vec![value; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> i32 {
        self.data[self.linear_index(i, j, k)]
    }

    pub fn min_value(&self) -> i32 {
        self.data.iter().copied().min().unwrap_or(0)
    }

    pub fn max_value(&self) -> i32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Borrow slice `k` (constant z index) as a 2D grid.
    pub fn slice(&self, k: usize) -> SliceView<'_> {
        let n = self.dims[0] * self.dims[1];
        SliceView {
            width: self.dims[0],
            height: self.dims[1],
            data: &self.data[k * n..(k + 1) * n],
        }
    }

    /// Patient-frame position of voxel `(i, j, k)`.
    pub fn voxel_position(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.geometry.index_to_world([i as f64, j as f64, k as f64])
    }

    /// Trilinear sample at a patient-frame position, `None` outside the grid.
    pub fn sample(&self, p: &Point3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        let c = self.geometry.world_to_index(p);
        let mut lo = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let max = (self.dims[a] - 1) as f64;
            if !(c[a] >= -EPS && c[a] <= max + EPS) {
                return None;
            }
            let x = c[a].clamp(0.0, max);
            let f = x.floor();
            lo[a] = (f as usize).min(self.dims[a] - 1);
            frac[a] = x - f;
        }
        let hi = [
            (lo[0] + 1).min(self.dims[0] - 1),
            (lo[1] + 1).min(self.dims[1] - 1),
            (lo[2] + 1).min(self.dims[2] - 1),
        ];
        let mut acc = 0.0;
        for corner in 0..8 {
            let (bx, by, bz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = (if bx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if by == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if bz == 1 { frac[2] } else { 1.0 - frac[2] });
            if w == 0.0 {
                continue;
            }
            let i = if bx == 1 { hi[0] } else { lo[0] };
            let j = if by == 1 { hi[1] } else { lo[1] };
            let k = if bz == 1 { hi[2] } else { lo[2] };
            acc += w * self.get(i, j, k) as f64;
        }
        Some(acc)
    }
}

/// Borrowed 2D view of one volume slice, x-fastest.
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a> {
    width: usize,
    height: usize,
    data: &'a [i32],
}

impl<'a> SliceView<'a> {
    pub fn new(width: usize, height: usize, data: &'a [i32]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("slice"));
        }
        if data.len() != width * height {
            return Err(Error::SizeMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &'a [i32] {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.data[y * self.width + x]
    }
}

/// Grow every slice by `width` voxels on each in-plane side, filling the
/// border with the global minimum so the flood fill can route around a body
/// (or table) touching the slice edge. Existing voxels keep their positions.
pub fn pad_slices(vol: &Volume, width: usize) -> Volume {
    if width == 0 {
        return vol.clone();
    }
    let [nx, ny, nz] = vol.dims;
    let (px, py) = (nx + 2 * width, ny + 2 * width);
    let fill = vol.min_value();
    let mut data = vec![fill; px * py * nz];
    for k in 0..nz {
        for j in 0..ny {
            let src = vol.linear_index(0, j, k);
            let dst = (k * py + j + width) * px + width;
            data[dst..dst + nx].copy_from_slice(&vol.data[src..src + nx]);
        }
    }
    let g = vol.geometry;
    let origin = g.index_to_world([-(width as f64), -(width as f64), 0.0]);
    Volume {
        dims: [px, py, nz],
        geometry: VolumeGeometry { origin, ..g },
        data,
    }
}

/// Keep every `factor`-th voxel along each axis, starting at index 0.
pub fn subsample(vol: &Volume, factor: [usize; 3]) -> Result<Volume> {
    if factor.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "subsample factors must be >= 1, got {factor:?}"
        )));
    }
    if factor == [1, 1, 1] {
        return Ok(vol.clone());
    }
    let [nx, ny, nz] = vol.dims;
    let out = [nx.div_ceil(factor[0]), ny.div_ceil(factor[1]), nz.div_ceil(factor[2])];
    let mut data = Vec::with_capacity(out.iter().product());
    for k in 0..out[2] {
        for j in 0..out[1] {
            for i in 0..out[0] {
                data.push(vol.get(i * factor[0], j * factor[1], k * factor[2]));
            }
        }
    }
    let g = vol.geometry;
    let spacing = [
        g.spacing[0] * factor[0] as f64,
        g.spacing[1] * factor[1] as f64,
        g.spacing[2] * factor[2] as f64,
    ];
    Volume::new(out, VolumeGeometry { spacing, ..g }, data)
}

/// An oblique image plane, in millimetres.
///
/// Pixel `(c, r)` sits at `origin + u * c / resolution + v * r / resolution`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlaneSpec {
    pub origin: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    /// Width and height in millimetres.
    pub extent: [f64; 2],
    /// Pixels per millimetre.
    pub resolution: f64,
}

impl PlaneSpec {
    pub fn validate(&self) -> Result<()> {
        let (u, v) = (Vector3::from(self.u), Vector3::from(self.v));
        if (u.norm() - 1.0).abs() > ORTHONORMAL_TOL || (v.norm() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Geometry("plane directions must be unit length".into()));
        }
        if u.dot(&v).abs() > ORTHONORMAL_TOL {
            return Err(Error::Geometry("plane directions must be orthogonal".into()));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "plane resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.extent.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidParameter("plane extent must be >= 0".into()));
        }
        Ok(())
    }

    pub fn pixel_dims(&self) -> (usize, usize) {
        let n = |e: f64| ((e * self.resolution).round() as usize).max(1);
        (n(self.extent[0]), n(self.extent[1]))
    }

    pub fn pixel_position(&self, col: usize, row: usize) -> Point3<f64> {
        Point3::from(self.origin)
            + Vector3::from(self.u) * (col as f64 / self.resolution)
            + Vector3::from(self.v) * (row as f64 / self.resolution)
    }
}

/// A resampled 2D image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl SliceImage {
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Linear 8-bit rendering of `[lo, hi]`.
    pub fn to_gray8(&self, lo: f64, hi: f64) -> Vec<u8> {
        let span = if hi > lo { hi - lo } else { 1.0 };
        self.pixels
            .iter()
            .map(|&p| (((p - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Write as binary PGM, or PNG when the extension is `.png`.
    pub fn save(&self, path: &Path, lo: f64, hi: f64) -> Result<()> {
        let gray = self.to_gray8(lo, hi);
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            image::save_buffer(
                path,
                &gray,
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::L8,
            )
            .map_err(|e| Error::format("png", e.to_string()))
        } else {
            let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
            bytes.extend_from_slice(&gray);
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
    }
}

/// Resample `vol`, placed in a new frame by `xform` (volume mm to plane
/// frame mm), on the pixels of `plane`. Pixels outside the volume get the
/// volume minimum.
pub fn reformat_slice(vol: &Volume, xform: &RigidTransform, plane: &PlaneSpec) -> Result<SliceImage> {
    plane.validate()?;
    let (width, height) = plane.pixel_dims();
    let back = xform.inverse();
    let fill = vol.min_value() as f64;
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let p = back.apply_point(&plane.pixel_position(col, row));
            pixels.push(vol.sample(&p).unwrap_or(fill));
        }
    }
    Ok(SliceImage { width, height, pixels })
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DType {
    U8,
    I16,
    U16,
    I32,
}

impl DType {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "uint8" | "u8" => DType::U8,
            "int16" | "i16" => DType::I16,
            "uint16" | "u16" => DType::U16,
            "int32" | "i32" => DType::I32,
            other => return Err(Error::format("volume header", format!("unsupported dtype '{other}'"))),
        })
    }

    fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 | DType::U16 => 2,
            DType::I32 => 4,
        }
    }
}

fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn parse_floats<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format("volume header", format!("{key}: {e}")))?;
    vals.try_into()
        .map_err(|v: Vec<f64>| Error::format("volume header", format!("{key}: expected {N} values, got {}", v.len())))
}

/// Read a volume from its text header; the raw file is named by the
/// `data_file` key (relative to the header) or defaults to the header path
/// with a `.raw` extension.
pub fn load_volume(header_path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut axes = None;
    let mut dtype = DType::I32;
    let mut big_endian = false;
    let mut data_file = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::format("volume header", format!("expected 'key: value', got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "dims" => {
                let d = parse_floats::<3>(key, value)?;
                if d.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
                    return Err(Error::format("volume header", "dims must be positive integers"));
                }
                dims = Some(d.map(|v| v as usize));
            }
            "spacing_mm" => spacing = Some(parse_floats::<3>(key, value)?),
            "origin_mm" => origin = Some(parse_floats::<3>(key, value)?),
            "axes" => axes = Some(parse_floats::<9>(key, value)?),
            "dtype" => dtype = DType::parse(value)?,
            "byte_order" => {
                big_endian = match value {
                    "little" => false,
                    "big" => true,
                    other => return Err(Error::format("volume header", format!("unknown byte_order '{other}'"))),
                }
            }
            "data_file" => data_file = Some(value.to_string()),
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| Error::format("volume header", "missing dims"))?;
    let spacing = spacing.ok_or_else(|| Error::format("volume header", "missing spacing_mm"))?;
    let origin = origin.unwrap_or([0.0; 3]);
    let axes = axes
        .map(|a| Matrix3::from_row_slice(&a))
        .unwrap_or_else(Matrix3::identity);
    let geometry = VolumeGeometry::new(spacing, Point3::from(origin), axes)?;

    let raw_path = match data_file {
        Some(f) => header_path.parent().unwrap_or(Path::new(".")).join(f),
        None => raw_path_for(header_path),
    };
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = dims.iter().product::<usize>();
    if bytes.len() % dtype.size() != 0 || bytes.len() / dtype.size() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() / dtype.size(),
        });
    }
    let data = bytes
        .chunks_exact(dtype.size())
        .map(|c| match (dtype, big_endian) {
            (DType::U8, _) => c[0] as i32,
            (DType::I16, false) => i16::from_le_bytes([c[0], c[1]]) as i32,
            (DType::I16, true) => i16::from_be_bytes([c[0], c[1]]) as i32,
            (DType::U16, false) => u16::from_le_bytes([c[0], c[1]]) as i32,
            (DType::U16, true) => u16::from_be_bytes([c[0], c[1]]) as i32,
            (DType::I32, false) => i32::from_le_bytes([c[0], c[1], c[2], c[3]]),
            (DType::I32, true) => i32::from_be_bytes([c[0], c[1], c[2], c[3]]),
        })
        .collect();
    Volume::new(dims, geometry, data)
}

/// Write `vol` as `header_path` plus a little-endian int32 raw file next to it.
pub fn save_volume(vol: &Volume, header_path: &Path) -> Result<()> {
    let raw_path = raw_path_for(header_path);
    let g = &vol.geometry;
    let mut header = String::from("# skinfuse volume\n");
    let [nx, ny, nz] = vol.dims;
    let _ = writeln!(header, "dims: {nx} {ny} {nz}");
    let _ = writeln!(header, "spacing_mm: {} {} {}", g.spacing[0], g.spacing[1], g.spacing[2]);
    let _ = writeln!(header, "origin_mm: {} {} {}", g.origin.x, g.origin.y, g.origin.z);
    let axes: Vec<String> = (0..3)
        .flat_map(|r| (0..3).map(move |c| (r, c)))
        .map(|(r, c)| g.axes[(r, c)].to_string())
        .collect();
    let _ = writeln!(header, "axes: {}", axes.join(" "));
    header.push_str("dtype: int32\nbyte_order: little\n");
    if let Some(name) = raw_path.file_name() {
        let _ = writeln!(header, "data_file: {}", name.to_string_lossy());
    }
    fs::write(header_path, header).map_err(|e| Error::io(header_path, e))?;
    let mut bytes = Vec::with_capacity(vol.data.len() * 4);
    for v in &vol.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
}
