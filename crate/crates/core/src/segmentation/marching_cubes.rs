//! Marching cubes over a binary indicator with midpoint vertex placement.
//!
//! The 256-case triangle table is derived at first use instead of being
//! transcribed: on every cube face the sign-change edges are joined into
//! oriented segments, the segments are chained into closed loops and each
//! loop is fanned into triangles. Ambiguous faces (two diagonal inside
//! corners) always separate the inside corners. Because that rule depends
//! only on the four corner values of a face, two cells sharing a face always
//! agree on its segments and the surface is watertight.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};

use crate::error::Result;
use crate::mesh::TriangleMesh;
use crate::volume::VolumeGeometry;

/// Corner `c` of the unit cube sits at `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_pos(c: usize) -> Vector3<f64> {
    Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

/// The twelve cube edges as (corner, corner) with the first corner lower.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Faces as cyclic corner quadruples with their outward normal.
const FACES: [([usize; 4], [f64; 3]); 6] = [
    ([0, 2, 6, 4], [-1.0, 0.0, 0.0]),
    ([1, 3, 7, 5], [1.0, 0.0, 0.0]),
    ([0, 1, 5, 4], [0.0, -1.0, 0.0]),
    ([2, 3, 7, 6], [0.0, 1.0, 0.0]),
    ([0, 1, 3, 2], [0.0, 0.0, -1.0]),
    ([4, 5, 7, 6], [0.0, 0.0, 1.0]),
];

fn edge_between(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == key).expect("corners share an edge")
}

fn edge_mid(e: usize) -> Vector3<f64> {
    let (a, b) = EDGES[e];
    (corner_pos(a) + corner_pos(b)) * 0.5
}

type CaseTable = Vec<Vec<[u8; 3]>>;

fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

fn build_case(mask: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask & (1 << c) != 0;
    // next[e] = edge that follows e along its loop
    let mut next = [usize::MAX; 12];

    for (corners, normal) in FACES {
        let n = Vector3::from(normal);
        let mut segments: Vec<(usize, usize, usize)> = Vec::new();
        let crossing: Vec<usize> = (0..4)
            .filter(|&s| inside(corners[s]) != inside(corners[(s + 1) % 4]))
            .collect();
        match crossing.len() {
            0 => {}
            2 => {
                let ea = edge_between(corners[crossing[0]], corners[(crossing[0] + 1) % 4]);
                let eb = edge_between(corners[crossing[1]], corners[(crossing[1] + 1) % 4]);
                let pin = *corners.iter().find(|&&c| inside(c)).unwrap();
                segments.push((ea, eb, pin));
            }
            4 => {
                for s in 0..4 {
                    let c = corners[s];
                    if inside(c) {
                        let prev = corners[(s + 3) % 4];
                        let nxt = corners[(s + 1) % 4];
                        segments.push((edge_between(prev, c), edge_between(c, nxt), c));
                    }
                }
            }
            _ => unreachable!("a face has an even number of sign changes"),
        }
        for (ea, eb, pin) in segments {
            let (a, b) = (edge_mid(ea), edge_mid(eb));
            let turn = (b - a).cross(&(corner_pos(pin) - a)).dot(&n);
            let (from, to) = if turn > 0.0 { (ea, eb) } else { (eb, ea) };
            debug_assert_eq!(next[from], usize::MAX);
            next[from] = to;
        }
    }

    let mut triangles = Vec::new();
    let mut used = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut lp = vec![start];
        used[start] = true;
        let mut e = next[start];
        while e != start {
            used[e] = true;
            lp.push(e);
            e = next[e];
        }
        // The face rule walks each loop with the inside on its left seen from
        // outside the cube, which makes fans wind towards the inside; emit
        // them reversed so normals face the background.
        lp.reverse();
        triangles.extend(fan_without_slivers(&lp));
    }
    triangles
}

/// Fan-triangulate a loop from the first apex that yields no zero-area
/// triangle.
fn fan_without_slivers(lp: &[usize]) -> Vec<[u8; 3]> {
    let m = lp.len();
    let fan = |apex: usize| -> Vec<[u8; 3]> {
        (1..m - 1)
            .map(|i| [lp[apex] as u8, lp[(apex + i) % m] as u8, lp[(apex + i + 1) % m] as u8])
            .collect()
    };
    let area = |t: &[u8; 3]| {
        let (a, b, c) = (
            edge_mid(t[0] as usize),
            edge_mid(t[1] as usize),
            edge_mid(t[2] as usize),
        );
        (b - a).cross(&(c - a)).norm()
    };
    (0..m)
        .map(fan)
        .find(|tris| tris.iter().all(|t| area(t) > 1e-9))
        .unwrap_or_else(|| fan(0).into_iter().filter(|t| area(t) > 1e-9).collect())
}

/// Extract the 0.5 level set of a binary field.
///
/// `inside(i, j, k)` is queried on the grid and on a one-voxel ring around
/// it; returning `false` there closes the surface. Vertices are created in
/// cell order, so the output is deterministic.
pub fn marching_cubes<F>(dims: [usize; 3], inside: F, geometry: &VolumeGeometry) -> Result<TriangleMesh>
where
    F: Fn(i64, i64, i64) -> bool,
{
    let table = case_table();
    let [nx, ny, nz] = dims.map(|d| d as i64);
    let mut vertex_of: HashMap<(i64, i64, i64, u8), u32> = HashMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    // Two z-layers of inside flags, reused while sweeping.
    let plane = ((nx + 2) * (ny + 2)) as usize;
    let layer = |k: i64| -> Vec<bool> {
        let mut v = Vec::with_capacity(plane);
        for j in -1..=ny {
            for i in -1..=nx {
                v.push(inside(i, j, k));
            }
        }
        v
    };
    let at = |l: &Vec<bool>, i: i64, j: i64| l[((j + 1) * (nx + 2) + (i + 1)) as usize];

    let mut lower = layer(-1);
    for k in -1..nz {
        let upper = layer(k + 1);
        for j in -1..ny {
            for i in -1..nx {
                let mut mask = 0usize;
                for c in 0..8 {
                    let (di, dj, dk) = ((c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64);
                    let l = if dk == 0 { &lower } else { &upper };
                    if at(l, i + di, j + dj) {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                for tri in &table[mask] {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        let (a, b) = EDGES[e as usize];
                        let axis = (a ^ b).trailing_zeros() as u8;
                        let base = (i + (a & 1) as i64, j + ((a >> 1) & 1) as i64, k + ((a >> 2) & 1) as i64);
                        let key = (base.0, base.1, base.2, axis);
                        ids[slot] = *vertex_of.entry(key).or_insert_with(|| {
                            let mut idx = [base.0 as f64, base.1 as f64, base.2 as f64];
                            idx[axis as usize] += 0.5;
                            vertices.push(geometry.index_to_world(idx));
                            (vertices.len() - 1) as u32
                        });
                    }
                    triangles.push(ids);
                }
            }
        }
        lower = upper;
    }
    TriangleMesh::new(vertices, triangles)
}
