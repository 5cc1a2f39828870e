//! Marching cubes over a [`TsdfVolume`] at the zero level set.
//!
//! The 256-case triangulation is generated from one face rule: on a face with
//! two diagonally opposite inside corners, the inside corners are always
//! separated. Neighboring cells therefore agree on every shared face and
//! closed fields give closed meshes. There is no asymptotic decider, so the
//! topology of saddle faces can differ from the trilinear interpolant.

use std::collections::HashMap;
use std::sync::LazyLock;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::tables::EDGE_TABLE;
use super::tsdf::TsdfVolume;
use super::TriangleMesh;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Cube faces as corner loops, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .unwrap()
}

/// Surface polygons, as loops of cube edge indices, for one corner
/// configuration. Loops run clockwise seen from the positive side.
///
/// On each face every run of inside corners is cut off by a segment from the
/// edge where the counter-clockwise walk leaves the run to the edge where it
/// entered. Each crossing edge is left in exactly one of its two faces and
/// entered in the other, so the segments chain into closed loops.
fn case_loops(case: usize) -> Vec<Vec<u8>> {
    let inside = |c: usize| (case >> c) & 1 == 1;
    let mut next = [None::<usize>; 12];
    for f in FACES {
        for i in 0..4 {
            let prev = f[(i + 3) % 4];
            if !inside(f[i]) || inside(prev) {
                continue;
            }
            let mut j = i;
            while inside(f[(j + 1) % 4]) {
                j = (j + 1) % 4;
            }
            next[edge_between(f[j], f[(j + 1) % 4])] = Some(edge_between(prev, f[i]));
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if seen[start] || next[start].is_none() {
            continue;
        }
        let mut ring = vec![start as u8];
        seen[start] = true;
        let mut cur = next[start].unwrap();
        while cur != start {
            seen[cur] = true;
            ring.push(cur as u8);
            cur = next[cur].expect("open face loop");
        }
        loops.push(ring);
    }
    loops
}

static CASES: LazyLock<Vec<Vec<Vec<u8>>>> = LazyLock::new(|| (0..256).map(case_loops).collect());

/// Triangulates a polygon, given counter-clockwise as seen from the side the
/// triangles should face, maximizing the smallest triangle area. Diagonals
/// stay inside the cell, so the choice never affects neighboring cells.
fn triangulate_polygon(pts: &[Vector3<f64>]) -> Vec<[usize; 3]> {
    let n = pts.len();
    if n < 3 {
        return Vec::new();
    }
    let area = |i: usize, k: usize, j: usize| (pts[k] - pts[i]).cross(&(pts[j] - pts[i])).norm();
    // best[i][j]: smallest area in the best triangulation of i..=j
    let mut best = vec![vec![f64::INFINITY; n]; n];
    let mut split = vec![vec![0usize; n]; n];
    for len in 2..n {
        for i in 0..n - len {
            let j = i + len;
            best[i][j] = f64::NEG_INFINITY;
            for k in i + 1..j {
                let score = area(i, k, j).min(best[i][k]).min(best[k][j]);
                if score > best[i][j] {
                    best[i][j] = score;
                    split[i][j] = k;
                }
            }
        }
    }
    let mut tris = Vec::with_capacity(n - 2);
    let mut stack = vec![(0, n - 1)];
    while let Some((i, j)) = stack.pop() {
        if j < i + 2 {
            continue;
        }
        let k = split[i][j];
        tris.push([i, k, j]);
        stack.push((i, k));
        stack.push((k, j));
    }
    tris
}

/// Crossings closer than this to a sample (in world units, capped at
/// `SNAP_MAX_FRACTION` of a voxel) are moved onto the sample. Corner-cutting
/// triangles with all crossings farther out have a cross product norm of at
/// least `SNAP_DISTANCE^2`, above the emission threshold; the ones closer in
/// collapse instead of being dropped, which would open holes.
const SNAP_DISTANCE: f64 = 2e-6;
const SNAP_MAX_FRACTION: f64 = 0.01;

/// Twice the smallest emitted triangle area.
const MIN_CROSS: f64 = 2e-12;

/// Vertex identity: a lattice edge (lower endpoint, axis 0..3) or, when the
/// crossing snaps onto a sample, that sample (axis 3). Neighboring cells
/// derive the same key for a shared crossing.
type VertexKey = u64;

fn corner_key(index: usize) -> VertexKey {
    (index as u64) << 2 | 3
}

struct Crossing {
    key: VertexKey,
    pos: Vector3<f64>,
}

fn crossing(vol: &TsdfVolume, a: [usize; 3], b: [usize; 3], va: f64, vb: f64) -> Crossing {
    let ia = vol.index(a[0], a[1], a[2]);
    let ib = vol.index(b[0], b[1], b[2]);
    let snap = SNAP_DISTANCE.min(SNAP_MAX_FRACTION * vol.voxel_size()) / vol.voxel_size();
    let span = (va - vb).abs();
    if va.abs() <= snap * span {
        return Crossing {
            key: corner_key(ia),
            pos: vol.point(a[0], a[1], a[2]),
        };
    }
    if vb.abs() <= snap * span {
        return Crossing {
            key: corner_key(ib),
            pos: vol.point(b[0], b[1], b[2]),
        };
    }
    // orient from the lower lattice point so both cells compute identical bits
    let (lo, hi, vlo, vhi, ilo) = if ia < ib { (a, b, va, vb, ia) } else { (b, a, vb, va, ib) };
    let axis = (0..3).find(|&d| lo[d] != hi[d]).unwrap();
    let t = vlo / (vlo - vhi);
    let plo = vol.point(lo[0], lo[1], lo[2]);
    let phi = vol.point(hi[0], hi[1], hi[2]);
    Crossing {
        key: (ilo as u64) << 2 | axis as u64,
        pos: plo + t * (phi - plo),
    }
}

/// Triangles of one z-slab of cells, as vertex keys, plus key positions.
struct Slab {
    triangles: Vec<[VertexKey; 3]>,
    positions: Vec<(VertexKey, Vector3<f64>)>,
}

fn march_slab(vol: &TsdfVolume, k: usize) -> Slab {
    let [nx, ny, _] = vol.dims();
    let values = vol.values();
    let weights = vol.weights();
    let mut triangles = Vec::new();
    let mut positions = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let mut v = [0.0; 8];
            let mut observed = true;
            let mut case = 0usize;
            for (c, off) in CORNERS.iter().enumerate() {
                let idx = vol.index(i + off[0], j + off[1], k + off[2]);
                if weights[idx] <= 0.0 {
                    observed = false;
                    break;
                }
                v[c] = values[idx];
                if v[c] < 0.0 {
                    case |= 1 << c;
                }
            }
            if !observed || EDGE_TABLE[case] == 0 {
                continue;
            }
            let mut edge_key = [0; 12];
            let mut edge_pos = [Vector3::zeros(); 12];
            for (e, [ca, cb]) in EDGES.iter().enumerate() {
                if EDGE_TABLE[case] & (1 << e) == 0 {
                    continue;
                }
                let pa = [i + CORNERS[*ca][0], j + CORNERS[*ca][1], k + CORNERS[*ca][2]];
                let pb = [i + CORNERS[*cb][0], j + CORNERS[*cb][1], k + CORNERS[*cb][2]];
                let x = crossing(vol, pa, pb, v[*ca], v[*cb]);
                edge_key[e] = x.key;
                edge_pos[e] = x.pos;
                positions.push((x.key, x.pos));
            }
            for ring in &CASES[case] {
                let mut poly: Vec<(VertexKey, Vector3<f64>)> =
                    ring.iter().rev().map(|e| (edge_key[*e as usize], edge_pos[*e as usize])).collect();
                // snapped crossings can repeat a key along the loop
                poly.dedup_by_key(|p| p.0);
                if poly.len() > 1 && poly[0].0 == poly[poly.len() - 1].0 {
                    poly.pop();
                }
                let pts: Vec<Vector3<f64>> = poly.iter().map(|p| p.1).collect();
                for t in triangulate_polygon(&pts) {
                    let keys = t.map(|i| poly[i].0);
                    if keys[0] != keys[1] && keys[1] != keys[2] && keys[0] != keys[2] {
                        triangles.push(keys);
                    }
                }
            }
        }
    }
    Slab { triangles, positions }
}

/// Extracts the zero level set. Only cells whose eight samples all carry
/// positive weight contribute. Output is deterministic regardless of the
/// thread count.
pub fn extract_mesh(vol: &TsdfVolume) -> TriangleMesh {
    let nz = vol.dims()[2];
    if vol.dims().iter().any(|d| *d < 2) {
        return TriangleMesh::default();
    }
    let slabs: Vec<Slab> = (0..nz - 1).into_par_iter().map(|k| march_slab(vol, k)).collect();

    let mut ids: HashMap<VertexKey, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for slab in &slabs {
        let pos: HashMap<VertexKey, Vector3<f64>> = slab.positions.iter().copied().collect();
        for tri in &slab.triangles {
            let idx = tri.map(|key| {
                *ids.entry(key).or_insert_with(|| {
                    vertices.push(pos[&key]);
                    (vertices.len() - 1) as u32
                })
            });
            let [a, b, c] = idx.map(|i| vertices[i as usize]);
            if (b - a).cross(&(c - a)).norm() > MIN_CROSS {
                triangles.push(idx);
            }
        }
    }
    let mut mesh = TriangleMesh {
        vertices,
        triangles,
        normals: None,
    };
    mesh.drop_unused_vertices();
    mesh
}
