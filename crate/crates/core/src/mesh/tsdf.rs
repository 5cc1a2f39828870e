//! Truncated signed distance volume fused from depth maps.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MeshError;
use crate::camera::CameraModel;

/// Grid samples sit on lattice points `origin + voxel_size * (i, j, k)`.
/// Values are signed distance divided by the truncation, positive in front of
/// the observed surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    origin: Vector3<f64>,
    voxel_size: f64,
    dims: [usize; 3],
    truncation: f64,
    values: Vec<f64>,
    weights: Vec<f64>,
    warnings: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FuseStats {
    pub updated: usize,
    /// Set when no voxel projected onto a valid depth sample.
    pub skipped_frame: bool,
}

/// JSON sidecar written next to a raw volume checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    /// Order of the f32 grids in the raw file.
    pub layout: Vec<String>,
}

impl TsdfVolume {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self, MeshError> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(MeshError::Volume(format!("voxel size must be positive, got {voxel_size}")));
        }
        if !(truncation >= voxel_size) {
            return Err(MeshError::Volume(format!(
                "truncation {truncation} is smaller than the voxel size {voxel_size}"
            )));
        }
        if dims.contains(&0) {
            return Err(MeshError::Volume(format!("dims must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            values: vec![1.0; n],
            weights: vec![0.0; n],
            warnings: 0,
        })
    }

    /// Volume with the default truncation of four voxels.
    pub fn with_default_truncation(origin: Vector3<f64>, voxel_size: f64, dims: [usize; 3]) -> Result<Self, MeshError> {
        Self::new(origin, voxel_size, dims, 4.0 * voxel_size)
    }

    /// Volume covering the axis-aligned box `[lo, hi]` with some padding.
    pub fn covering(lo: Vector3<f64>, hi: Vector3<f64>, voxel_size: f64, padding: f64) -> Result<Self, MeshError> {
        let origin = lo - Vector3::repeat(padding);
        let extent = hi - lo + Vector3::repeat(2.0 * padding);
        let dims = [0, 1, 2].map(|a| (extent[a] / voxel_size).ceil() as usize + 1);
        Self::with_default_truncation(origin, voxel_size, dims)
    }

    /// Fills every sample from an analytic signed distance function, with
    /// weight 1.
    pub fn from_fn(
        origin: Vector3<f64>,
        voxel_size: f64,
        dims: [usize; 3],
        truncation: f64,
        sdf: impl Fn(&Vector3<f64>) -> f64 + Sync,
    ) -> Result<Self, MeshError> {
        let mut v = Self::new(origin, voxel_size, dims, truncation)?;
        let (o, s, t) = (v.origin, v.voxel_size, v.truncation);
        let plane = dims[0] * dims[1];
        v.values.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = o + s * Vector3::new(i as f64, j as f64, k as f64);
                    slab[j * dims[0] + i] = (sdf(&p) / t).clamp(-1.0, 1.0);
                }
            }
        });
        v.weights.fill(1.0);
        Ok(v)
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Frames that touched no voxel.
    pub fn warnings(&self) -> u32 {
        self.warnings
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + self.voxel_size * Vector3::new(i as f64, j as f64, k as f64)
    }

    /// Integrates one depth map (camera z per pixel, non-positive means no
    /// measurement). Voxels more than one truncation behind the measured
    /// surface are left untouched.
    pub fn fuse_depth(&mut self, depth: &[f64], camera: &CameraModel) -> Result<FuseStats, MeshError> {
        let k = camera.intrinsics;
        if depth.len() != k.pixel_count() {
            return Err(MeshError::Volume(format!(
                "depth map has {} samples, camera is {}x{}",
                depth.len(),
                k.width,
                k.height
            )));
        }
        let dims = self.dims;
        let plane = dims[0] * dims[1];
        let (o, s, trunc) = (self.origin, self.voxel_size, self.truncation);
        let updated: usize = self
            .values
            .par_chunks_mut(plane)
            .zip(self.weights.par_chunks_mut(plane))
            .enumerate()
            .map(|(kz, (vals, wts))| {
                let mut count = 0;
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let p = o + s * Vector3::new(i as f64, j as f64, kz as f64);
                        let pc = camera.world_to_camera(&p);
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let u = k.fx * pc.x / pc.z + k.cx;
                        let v = k.fy * pc.y / pc.z + k.cy;
                        let Some(d) = sample_depth(depth, k.width as usize, k.height as usize, u, v) else {
                            continue;
                        };
                        let sdf = d - pc.z;
                        if sdf < -trunc {
                            continue;
                        }
                        let sample = sdf.min(trunc) / trunc;
                        let idx = j * dims[0] + i;
                        let w = wts[idx];
                        vals[idx] = (vals[idx] * w + sample) / (w + 1.0);
                        wts[idx] = w + 1.0;
                        count += 1;
                    }
                }
                count
            })
            .sum();
        let skipped_frame = updated == 0;
        if skipped_frame {
            self.warnings += 1;
            log::warn!("depth frame did not reach the volume");
        }
        Ok(FuseStats { updated, skipped_frame })
    }

    pub fn header(&self) -> VolumeHeader {
        VolumeHeader {
            origin: [self.origin.x, self.origin.y, self.origin.z],
            voxel_size: self.voxel_size,
            dims: self.dims,
            truncation: self.truncation,
            layout: vec!["values".into(), "weights".into()],
        }
    }

    /// Writes `<path>` as raw little-endian f32 (values then weights) and
    /// `<path>.json` as the sidecar.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), MeshError> {
        let mut raw = Vec::with_capacity(8 * self.values.len());
        for v in self.values.iter().chain(&self.weights) {
            raw.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(path, raw)?;
        let side = serde_json::to_string_pretty(&self.header()).map_err(|e| MeshError::Volume(e.to_string()))?;
        fs::write(sidecar_path(path), side)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, MeshError> {
        let side = fs::read_to_string(sidecar_path(path))?;
        let h: VolumeHeader = serde_json::from_str(&side).map_err(|e| MeshError::Volume(e.to_string()))?;
        let mut v = Self::new(Vector3::from(h.origin), h.voxel_size, h.dims, h.truncation)?;
        let raw = fs::read(path)?;
        let n = v.values.len();
        if raw.len() != 8 * n {
            return Err(MeshError::Volume(format!("checkpoint holds {} bytes, expected {}", raw.len(), 8 * n)));
        }
        let floats: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        v.values.copy_from_slice(&floats[..n]);
        v.weights.copy_from_slice(&floats[n..]);
        Ok(v)
    }
}

/// Bilinear depth between the four nearest pixel centers. Near the border,
/// or when any of the four is missing, falls back to the containing pixel
/// alone so discontinuities are never blended.
fn sample_depth(depth: &[f64], w: usize, h: usize, u: f64, v: f64) -> Option<f64> {
    if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
        return None;
    }
    let valid = |d: f64| d > 0.0 && d.is_finite();
    let (fx, fy) = (u - 0.5, v - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    if x0 >= 0.0 && y0 >= 0.0 && (x0 as usize) + 1 < w && (y0 as usize) + 1 < h {
        let (x0, y0) = (x0 as usize, y0 as usize);
        let q = [
            depth[y0 * w + x0],
            depth[y0 * w + x0 + 1],
            depth[(y0 + 1) * w + x0],
            depth[(y0 + 1) * w + x0 + 1],
        ];
        if q.iter().all(|d| valid(*d)) {
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let top = q[0] + tx * (q[1] - q[0]);
            let bottom = q[2] + tx * (q[3] - q[2]);
            return Some(top + ty * (bottom - top));
        }
    }
    let d = depth[v as usize * w + u as usize];
    valid(d).then_some(d)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
