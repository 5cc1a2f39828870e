//! Multi-view patch NCC with plane-induced homographies.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::raster::{luminance, RenderOutput};

/// Patches with a variance below this are skipped.
const MIN_VARIANCE: f64 = 1e-12;

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn from_rgb(width: u32, height: u32, rgb: &[f64]) -> Self {
        let data = rgb.chunks_exact(3).map(|c| luminance([c[0], c[1], c[2]])).collect();
        Self { width, height, data }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width as usize + x]
    }

    /// Bilinear sample at continuous image coordinates (pixel centers at +0.5).
    /// `None` unless all four neighbors are inside the image.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        let (fx, fy) = (u - 0.5, v - 0.5);
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (self.width - 1) as f64 && fy <= (self.height - 1) as f64) {
            return None;
        }
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width as usize - 1), (y0 + 1).min(self.height as usize - 1));
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let top = (1.0 - ax) * self.at(x0, y0) + ax * self.at(x1, y0);
        let bottom = (1.0 - ax) * self.at(x0, y1) + ax * self.at(x1, y1);
        Some((1.0 - ay) * top + ay * bottom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    /// Odd patch side in pixels.
    pub size: u32,
    pub stride: u32,
    pub alpha_floor: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            size: 11,
            stride: 8,
            alpha_floor: 0.5,
        }
    }
}

/// A patch of the reference view with the local plane `n . x = -distance`
/// in reference camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchPlane {
    pub x: u32,
    pub y: u32,
    pub normal: Vector3<f64>,
    pub distance: f64,
}

/// Patch centers on a stride grid, kept where the rendered coverage exceeds
/// the floor and plane geometry is defined.
pub fn patch_planes(render: &RenderOutput, config: &PatchConfig) -> Vec<PatchPlane> {
    let half = config.size / 2;
    let mut out = Vec::new();
    if render.width < config.size || render.height < config.size {
        return out;
    }
    let mut y = half;
    while y + half < render.height {
        let mut x = half;
        while x + half < render.width {
            let i = (y * render.width + x) as usize;
            let normal = render.normal_at(x, y);
            let distance = render.plane_distance[i];
            if render.alpha[i] > config.alpha_floor && normal.norm() > 0.0 && distance > 0.0 {
                out.push(PatchPlane { x, y, normal, distance });
            }
            x += config.stride;
        }
        y += config.stride;
    }
    out
}

/// `K_nb (R_rel - t_rel n^T / d) K_ref^-1`, mapping reference pixels on the
/// plane to neighbor pixels.
pub fn plane_homography(reference: &CameraModel, neighbor: &CameraModel, normal: &Vector3<f64>, distance: f64) -> Matrix3<f64> {
    let r_rel = neighbor.pose.rotation * reference.pose.rotation.transpose();
    let t_rel = neighbor.pose.translation - r_rel * reference.pose.translation;
    neighbor.intrinsics.matrix() * (r_rel - t_rel * normal.transpose() / distance) * reference.intrinsics.inverse_matrix()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NccReport {
    /// Mean of `1 - NCC` over used patches, 0 when none were used.
    pub loss: f64,
    pub used: usize,
    pub low_variance: usize,
    pub out_of_bounds: usize,
}

/// Warps each reference patch into the neighbor through its plane and
/// averages `1 - NCC`. Patches that leave either image or have no intensity
/// variation are skipped and counted.
pub fn ncc_loss(
    reference: &GrayImage,
    neighbor: &GrayImage,
    reference_camera: &CameraModel,
    neighbor_camera: &CameraModel,
    patches: &[PatchPlane],
    size: u32,
) -> NccReport {
    let half = (size / 2) as i64;
    let n = (2 * half + 1) as usize;
    let mut report = NccReport::default();
    let mut total = 0.0;
    let mut a = Vec::with_capacity(n * n);
    let mut b = Vec::with_capacity(n * n);
    'patch: for p in patches {
        let h = plane_homography(reference_camera, neighbor_camera, &p.normal, p.distance);
        a.clear();
        b.clear();
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
                if x < 0 || y < 0 || x >= reference.width as i64 || y >= reference.height as i64 {
                    report.out_of_bounds += 1;
                    continue 'patch;
                }
                let q = h * Vector3::new(x as f64 + 0.5, y as f64 + 0.5, 1.0);
                if !(q.z > 0.0) {
                    report.out_of_bounds += 1;
                    continue 'patch;
                }
                let Some(value) = neighbor.sample(q.x / q.z, q.y / q.z) else {
                    report.out_of_bounds += 1;
                    continue 'patch;
                };
                a.push(reference.at(x as usize, y as usize));
                b.push(value);
            }
        }
        match ncc(&a, &b) {
            Some(c) => {
                total += 1.0 - c;
                report.used += 1;
            }
            None => report.low_variance += 1,
        }
    }
    if report.used > 0 {
        report.loss = total / report.used as f64;
    }
    report
}

/// Normalized cross-correlation, `None` when either side is flat.
pub fn ncc(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va / n <= MIN_VARIANCE || vb / n <= MIN_VARIANCE {
        return None;
    }
    Some((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}
