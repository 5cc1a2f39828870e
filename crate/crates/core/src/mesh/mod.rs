//! Collision geometry: TSDF fusion, marching cubes, triangle meshes and
//! terrain height queries.

mod marching;
mod tables;
pub mod tsdf;

use std::collections::HashMap;
use std::io::Write;

use nalgebra::Vector3;
use thiserror::Error;

use crate::transform::SimilarityTransform;

pub use marching::extract_mesh;
pub use tsdf::{FuseStats, TsdfVolume, VolumeHeader};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("volume: {0}")]
    Volume(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|i| *i >= n)) {
            return Err(MeshError::Volume(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::Volume("non-finite vertex".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            normals: None,
        })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]` at height `z`, two triangles.
    pub fn quad(x0: f64, x1: f64, y0: f64, y1: f64, z: f64) -> Self {
        Self {
            vertices: vec![
                Vector3::new(x0, y0, z),
                Vector3::new(x1, y0, z),
                Vector3::new(x1, y1, z),
                Vector3::new(x0, y1, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        }
    }

    /// Concatenates meshes, offsetting indices.
    pub fn merged(parts: &[&TriangleMesh]) -> Self {
        let mut out = Self::default();
        for m in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            out.triangles.extend(m.triangles.iter().map(|t| t.map(|i| i + base)));
        }
        out
    }

    pub fn triangle(&self, t: usize) -> [Vector3<f64>; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    /// Area-weighted vertex normals from the triangle winding.
    pub fn compute_normals(&mut self) {
        let mut n = vec![Vector3::zeros(); self.vertices.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i as usize]);
            let f = (b - a).cross(&(c - a));
            for i in t {
                n[*i as usize] += f;
            }
        }
        for v in &mut n {
            let len = v.norm();
            if len > 0.0 {
                *v /= len;
            }
        }
        self.normals = Some(n);
    }

    pub(crate) fn drop_unused_vertices(&mut self) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                if remap[*i as usize] == u32::MAX {
                    remap[*i as usize] = kept.len() as u32;
                    kept.push(self.vertices[*i as usize]);
                }
                *i = remap[*i as usize];
            }
        }
        self.vertices = kept;
        self.normals = None;
    }

    /// Counts of edges used by one triangle and by more than two triangles.
    pub fn edge_report(&self) -> (usize, usize) {
        let mut uses: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary = uses.values().filter(|c| **c == 1).count();
        let nonmanifold = uses.values().filter(|c| **c > 2).count();
        (boundary, nonmanifold)
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_report() == (0, 0)
    }

    pub fn write_stl(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut header = [0u8; 80];
        header[..14].copy_from_slice(b"gsforge mesh  ");
        out.write_all(&header)?;
        out.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let n = (b - a).cross(&(c - a));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            for v in [n, a, b, c] {
                for x in v.iter() {
                    out.write_all(&(*x as f32).to_le_bytes())?;
                }
            }
            out.write_all(&[0, 0])?;
        }
        Ok(())
    }

    pub fn write_obj(&self, mut out: impl Write) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        if let Some(ns) = &self.normals {
            for n in ns {
                writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
            }
        }
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            if self.normals.is_some() {
                writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}")?;
            } else {
                writeln!(out, "f {a} {b} {c}")?;
            }
        }
        Ok(())
    }

    /// Minimal OBJ reader: `v` and triangular or polygonal `f` records.
    pub fn read_obj(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = || MeshError::Volume(format!("obj line {}: {line:?}", n + 1));
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.take(3).map(|s| s.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
                    if c.len() != 3 {
                        return Err(bad());
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|s| {
                            let head = s.split('/').next().unwrap_or("");
                            head.parse::<u32>().ok().filter(|i| *i > 0).map(|i| i - 1).ok_or_else(bad)
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(bad());
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }
}

/// Maps every vertex by `t`; topology is unchanged.
pub fn transform_mesh(mesh: &TriangleMesh, t: &SimilarityTransform) -> TriangleMesh {
    TriangleMesh {
        vertices: mesh.vertices.iter().map(|v| t.apply(v)).collect(),
        triangles: mesh.triangles.clone(),
        normals: mesh
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| t.rotation * n).collect()),
    }
}

/// Uniform xy grid over a mesh for vertical ray queries.
#[derive(Debug, Clone)]
pub struct HeightIndex {
    mesh: TriangleMesh,
    lo: [f64; 2],
    cell: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<u32>>,
}

impl HeightIndex {
    pub fn new(mesh: TriangleMesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &mesh.vertices {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        if mesh.triangles.is_empty() {
            return Self {
                mesh,
                lo: [0.0; 2],
                cell: 1.0,
                cols: 0,
                rows: 0,
                cells: Vec::new(),
            };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        // roughly one triangle per cell on a uniform tessellation
        let target = (mesh.triangles.len() as f64).sqrt().clamp(1.0, 1024.0);
        let cell = span / target;
        let cols = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let rows = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let mut cells = vec![Vec::new(); cols * rows];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let p = tri.map(|i| mesh.vertices[i as usize]);
            let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for v in &p {
                x0 = x0.min(v.x);
                x1 = x1.max(v.x);
                y0 = y0.min(v.y);
                y1 = y1.max(v.y);
            }
            let c0 = ((x0 - lo[0]) / cell).floor() as usize;
            let c1 = (((x1 - lo[0]) / cell).floor() as usize).min(cols - 1);
            let r0 = ((y0 - lo[1]) / cell).floor() as usize;
            let r1 = (((y1 - lo[1]) / cell).floor() as usize).min(rows - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    cells[r * cols + c].push(t as u32);
                }
            }
        }
        Self {
            mesh,
            lo,
            cell,
            cols,
            rows,
            cells,
        }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    /// Height of the highest surface hit by a downward vertical ray at
    /// `(x, y)`, or `None` when the ray misses every triangle.
    pub fn height(&self, x: f64, y: f64) -> Option<f64> {
        if self.cols == 0 {
            return None;
        }
        let c = ((x - self.lo[0]) / self.cell).floor();
        let r = ((y - self.lo[1]) / self.cell).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        let mut best: Option<f64> = None;
        for &t in &self.cells[r as usize * self.cols + c as usize] {
            if let Some(z) = vertical_hit(&self.mesh.triangle(t as usize), x, y) {
                best = Some(best.map_or(z, |b| b.max(z)));
            }
        }
        best
    }
}

/// z where the vertical line through `(x, y)` meets the triangle.
fn vertical_hit(p: &[Vector3<f64>; 3], x: f64, y: f64) -> Option<f64> {
    let [a, b, c] = p;
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if det.abs() < 1e-15 {
        return None;
    }
    let l1 = ((x - a.x) * (c.y - a.y) - (c.x - a.x) * (y - a.y)) / det;
    let l2 = ((b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y)) / det;
    let l0 = 1.0 - l1 - l2;
    const EPS: f64 = -1e-12;
    if l0 < EPS || l1 < EPS || l2 < EPS {
        return None;
    }
    Some(l0 * a.z + l1 * b.z + l2 * c.z)
}
