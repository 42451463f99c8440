//! Indexed triangle meshes, exact nearest-neighbour search and the
//! anterior-surface cut used before registration.

mod kdtree;
pub mod ply;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub use kdtree::{brute_force_nearest, KdTree, Neighbor};

/// Triangles with a doubled area below this (mm²) are dropped on construction.
const DEGENERATE_AREA2: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vector3<f64>>,
    colors: Option<Vec<[u8; 3]>>,
}

impl TriangleMesh {
    /// Build a mesh, dropping degenerate triangles and computing
    /// area-weighted vertex normals.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::Geometry(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                t[0] != t[1]
                    && t[1] != t[2]
                    && t[0] != t[2]
                    && (b - a).cross(&(c - a)).norm_squared() > DEGENERATE_AREA2
            })
            .collect();
        let normals = vertex_normals(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            normals,
            colors: None,
        })
    }

    /// A vertex-only mesh (point cloud) with caller-supplied normals.
    pub fn from_points(vertices: Vec<Point3<f64>>, normals: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        let normals = match normals {
            Some(ns) if ns.len() != vertices.len() => {
                return Err(Error::SizeMismatch {
                    expected: vertices.len(),
                    actual: ns.len(),
                })
            }
            Some(ns) => ns
                .into_iter()
                .map(|v| v.try_normalize(1e-12).unwrap_or_else(Vector3::zeros))
                .collect(),
            None => vec![Vector3::zeros(); vertices.len()],
        };
        Ok(Self {
            vertices,
            triangles: Vec::new(),
            normals,
            colors: None,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Unit vertex normals; zero for vertices without incident area.
    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn has_normal(&self, i: usize) -> bool {
        self.normals[i] != Vector3::zeros()
    }

    pub fn colors(&self) -> Option<&[[u8; 3]]> {
        self.colors.as_deref()
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::SizeMismatch {
                expected: self.vertices.len(),
                actual: colors.len(),
            });
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Apply a rigid motion to positions and normals.
    pub fn transformed(&self, xf: &crate::registration::RigidTransform) -> Self {
        Self {
            vertices: xf.apply_points(&self.vertices),
            triangles: self.triangles.clone(),
            normals: self.normals.iter().map(|n| xf.apply_vector(n)).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Keep the vertices flagged in `keep` (with their normals and colours)
    /// and the triangles whose three vertices are kept. Returns the new mesh
    /// and, for each new vertex, its index in `self`.
    pub fn select_vertices(&self, keep: &[bool]) -> (Self, Vec<usize>) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            remap[i] = kept.len() as u32;
            kept.push(i);
        }
        let triangles = self
            .triangles
            .iter()
            .filter(|t| t.iter().all(|&i| remap[i as usize] != u32::MAX))
            .map(|t| t.map(|i| remap[i as usize]))
            .collect();
        let mesh = Self {
            vertices: kept.iter().map(|&i| self.vertices[i]).collect(),
            triangles,
            normals: kept.iter().map(|&i| self.normals[i]).collect(),
            colors: self.colors.as_ref().map(|c| kept.iter().map(|&i| c[i]).collect()),
        };
        (mesh, kept)
    }

    /// Enclosed volume by the divergence theorem; positive for outward
    /// winding of a closed surface.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize].coords);
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                (b - a).cross(&(c - a)).norm() / 2.0
            })
            .sum()
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        centroid(&self.vertices)
    }
}

pub(crate) fn centroid(pts: &[Point3<f64>]) -> Option<Point3<f64>> {
    if pts.is_empty() {
        return None;
    }
    let sum = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / pts.len() as f64))
}

/// Area-weighted average of incident face normals, normalised. The
/// unnormalised cross product of a face is twice its area times its normal,
/// so summing raw cross products gives the weighting for free.
pub fn vertex_normals(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize(1e-300).unwrap_or_else(Vector3::zeros))
        .collect()
}

/// Keep the vertices whose normal makes an angle below 90° with
/// `anterior_axis` (strictly positive dot product), and the triangles whose
/// three vertices survive. Vertices without a normal are dropped. Normals are
/// carried over unchanged, so cutting twice with the same axis is a no-op.
pub fn front_cut(mesh: &TriangleMesh, anterior_axis: &Vector3<f64>) -> TriangleMesh {
    front_cut_indexed(mesh, anterior_axis).0
}

/// [`front_cut`], also returning the original index of every kept vertex.
pub fn front_cut_indexed(mesh: &TriangleMesh, anterior_axis: &Vector3<f64>) -> (TriangleMesh, Vec<usize>) {
    let keep: Vec<bool> = mesh.normals.iter().map(|n| n.dot(anterior_axis) > 0.0).collect();
    mesh.select_vertices(&keep)
}
