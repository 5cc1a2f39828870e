//! CPU splat rasterizer.
//!
//! Splats are projected with the EWA first-order approximation, sorted once
//! per frame by camera-space depth (ties broken by storage index), binned
//! into 16x16 pixel tiles and composited front to back. Tiles are rendered
//! in parallel; every output pixel is written by exactly one tile.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraModel;
use crate::splat::sh::eval_sh_unchecked;
use crate::splat::{GaussianScene, SplatRecord};

pub const TILE_SIZE: u32 = 16;
/// Added to the diagonal of every projected covariance, in px^2.
pub const COV2D_BLUR: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
/// Depth value written where no geometry is defined.
pub const DEPTH_SENTINEL: f64 = 0.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("render option `{name}` must lie in (0, 1), got {value}")]
    Threshold { name: &'static str, value: f64 },
    #[error("render option `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Per-splat alpha below which a pixel contribution is skipped.
    pub alpha_cutoff: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_stop: f64,
    /// Treat the shortest axis as zero when projecting, so every splat is a disk.
    pub flatten_for_depth: bool,
    /// Geometry maps are only defined where accumulated alpha exceeds this.
    pub alpha_floor: f64,
    /// Splats with camera-space depth at or below this are culled.
    pub near: f64,
    /// Rays with `|n . K^-1 p|` below this get the depth sentinel.
    pub ray_epsilon: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            alpha_cutoff: 1.0 / 255.0,
            transmittance_stop: 1e-4,
            flatten_for_depth: false,
            alpha_floor: 0.5,
            near: 0.01,
            ray_epsilon: 1e-4,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<(), RenderError> {
        for (name, value) in [
            ("alpha_cutoff", self.alpha_cutoff),
            ("transmittance_stop", self.transmittance_stop),
            ("alpha_floor", self.alpha_floor),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(RenderError::Threshold { name, value });
            }
        }
        for (name, value) in [("near", self.near), ("ray_epsilon", self.ray_epsilon)] {
            if !(value > 0.0) {
                return Err(RenderError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

/// A splat projected onto the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub view_depth: f64,
}

/// Projects `splat` with default options. `None` means the splat is culled
/// (behind the near plane).
pub fn project_splat(splat: &SplatRecord, camera: &CameraModel) -> Option<ProjectedSplat> {
    project_with(splat, camera, RenderOptions::default().near, false)
}

fn splat_covariance(splat: &SplatRecord, flatten: bool) -> Matrix3<f64> {
    let r = splat.rotation_matrix();
    let mut s2 = splat.scales().map(|s| s * s);
    if flatten {
        s2[splat.shortest_axis()] = 0.0;
    }
    r * Matrix3::from_diagonal(&s2) * r.transpose()
}

fn project_with(splat: &SplatRecord, camera: &CameraModel, near: f64, flatten: bool) -> Option<ProjectedSplat> {
    let t = camera.world_to_camera(&splat.mean);
    if !(t.z > near) {
        return None;
    }
    let k = &camera.intrinsics;
    let mean2d = Vector2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy);

    // the Jacobian is evaluated with the direction clamped slightly outside
    // the frustum, which keeps far off-screen splats from blowing up
    let lim_x = 1.3 * (k.width as f64 / (2.0 * k.fx));
    let lim_y = 1.3 * (k.height as f64 / (2.0 * k.fy));
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let j = nalgebra::Matrix2x3::new(
        k.fx / t.z,
        0.0,
        -k.fx * tx / (t.z * t.z),
        0.0,
        k.fy / t.z,
        -k.fy * ty / (t.z * t.z),
    );
    let w = camera.pose.rotation;
    let m = j * w;
    let mut cov2d = m * splat_covariance(splat, flatten) * m.transpose();
    cov2d[(0, 0)] += COV2D_BLUR;
    cov2d[(1, 1)] += COV2D_BLUR;
    // exact symmetry regardless of rounding in the products above
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    Some(ProjectedSplat {
        mean2d,
        cov2d,
        view_depth: t.z,
    })
}

#[derive(Debug, Clone)]
struct Prepared {
    depth: f64,
    index: u32,
    mean2d: [f64; 2],
    /// Upper triangle of the inverse 2D covariance.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    normal: Vector3<f64>,
    plane_distance: f64,
    range: f64,
    tiles: [u32; 4],
}

fn prepare(scene: &GaussianScene, camera: &CameraModel, options: &RenderOptions) -> Vec<Prepared> {
    let k = camera.intrinsics;
    let tiles_x = k.width.div_ceil(TILE_SIZE);
    let tiles_y = k.height.div_ceil(TILE_SIZE);
    let center = camera.center();
    let degree = scene.sh_degree();
    let mut out: Vec<Prepared> = scene
        .splats()
        .par_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let opacity = s.opacity();
            if opacity < options.alpha_cutoff {
                return None;
            }
            let p = project_with(s, camera, options.near, options.flatten_for_depth)?;
            let c = p.cov2d;
            let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(0, 1)];
            if !(det > 0.0) {
                return None;
            }
            let conic = [c[(1, 1)] / det, -c[(0, 1)] / det, c[(0, 0)] / det];
            // beyond this radius o * G < alpha_cutoff along the major axis
            let mid = 0.5 * (c[(0, 0)] + c[(1, 1)]);
            let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
            let radius = (2.0 * lambda_max * (opacity / options.alpha_cutoff).ln()).sqrt();
            let (mx, my) = (p.mean2d.x, p.mean2d.y);
            let x0 = (mx - radius - 0.5).ceil().max(0.0);
            let y0 = (my - radius - 0.5).ceil().max(0.0);
            let x1 = (mx + radius - 0.5).floor().min(k.width as f64 - 1.0);
            let y1 = (my + radius - 0.5).floor().min(k.height as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            let tiles = [
                x0 as u32 / TILE_SIZE,
                y0 as u32 / TILE_SIZE,
                (x1 as u32 / TILE_SIZE + 1).min(tiles_x),
                (y1 as u32 / TILE_SIZE + 1).min(tiles_y),
            ];

            let offset = s.mean - center;
            let dist = offset.norm();
            let dir = if dist > 0.0 { offset / dist } else { Vector3::z() };
            let color = eval_sh_unchecked(degree, &s.sh, &dir).map(|v| v.max(0.0));

            let mu_c = camera.world_to_camera(&s.mean);
            let axis = s.rotation_matrix().column(s.shortest_axis()).into_owned();
            let mut normal = camera.pose.rotation * axis;
            if normal.dot(&mu_c) > 0.0 {
                normal = -normal;
            }
            Some(Prepared {
                depth: p.view_depth,
                index: i as u32,
                mean2d: [mx, my],
                conic,
                opacity,
                color,
                normal,
                plane_distance: -normal.dot(&mu_c),
                range: mu_c.norm(),
                tiles,
            })
        })
        .collect();
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

fn bin_tiles(prepared: &[Prepared], tiles_x: u32, tiles_y: u32) -> Vec<Vec<u32>> {
    let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (k, p) in prepared.iter().enumerate() {
        let [tx0, ty0, tx1, ty1] = p.tiles;
        for ty in ty0..ty1 {
            for tx in tx0..tx1 {
                bins[(ty * tiles_x + tx) as usize].push(k as u32);
            }
        }
    }
    bins
}

/// Composites one pixel front to back, calling `visit` with each contributing
/// splat and its blend weight `T_i * alpha_i`. Returns the final transmittance.
#[inline]
fn composite_pixel(
    prepared: &[Prepared],
    list: &[u32],
    px: f64,
    py: f64,
    options: &RenderOptions,
    mut visit: impl FnMut(&Prepared, f64),
) -> f64 {
    let mut t = 1.0;
    for &k in list {
        let p = &prepared[k as usize];
        let dx = px - p.mean2d[0];
        let dy = py - p.mean2d[1];
        let power = -0.5 * (p.conic[0] * dx * dx + 2.0 * p.conic[1] * dx * dy + p.conic[2] * dy * dy);
        if power > 0.0 {
            continue;
        }
        let alpha = (p.opacity * power.exp()).min(MAX_ALPHA);
        if alpha < options.alpha_cutoff {
            continue;
        }
        visit(p, t * alpha);
        t *= 1.0 - alpha;
        if t < options.transmittance_stop {
            break;
        }
    }
    t
}

/// Rendered maps, row-major with `width * height` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// Interleaved RGB in `[0, 1]`.
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Ray-plane depth (camera z), [`DEPTH_SENTINEL`] where undefined.
    pub depth: Vec<f64>,
    pub plane_distance: Vec<f64>,
    /// Interleaved camera-space unit normals, zero where undefined.
    pub normal: Vec<f64>,
    pub gray: Vec<f64>,
    /// Blended distance to splat centers projected on the pixel ray. This is
    /// the naive depth estimate, kept for comparison.
    pub mean_depth: Vec<f64>,
}

impl RenderOutput {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn rgb_at(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn normal_at(&self, x: u32, y: u32) -> Vector3<f64> {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        Vector3::new(self.normal[i], self.normal[i + 1], self.normal[i + 2])
    }

    /// Quantized RGB8, row-major.
    pub fn rgb8(&self) -> Vec<u8> {
        self.rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

struct TileResult {
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
    // per pixel: rgb(3) alpha depth plane normal(3) gray mean_depth
    data: Vec<f64>,
}

const PIXEL_STRIDE: usize = 11;

pub fn render(scene: &GaussianScene, camera: &CameraModel, options: &RenderOptions) -> RenderOutput {
    let k = camera.intrinsics;
    let (width, height) = (k.width, k.height);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let prepared = prepare(scene, camera, options);
    let bins = bin_tiles(&prepared, tiles_x, tiles_y);

    let tiles: Vec<TileResult> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let x0 = (tile % tiles_x) * TILE_SIZE;
            let y0 = (tile / tiles_x) * TILE_SIZE;
            let w = TILE_SIZE.min(width - x0);
            let h = TILE_SIZE.min(height - y0);
            let list = &bins[tile as usize];
            let mut data = vec![0.0; (w * h) as usize * PIXEL_STRIDE];
            for y in 0..h {
                for x in 0..w {
                    let (gx, gy) = (x0 + x, y0 + y);
                    let out = &mut data[((y * w + x) as usize) * PIXEL_STRIDE..][..PIXEL_STRIDE];
                    shade_pixel(&prepared, list, gx, gy, camera, options, out);
                }
            }
            TileResult { x0, y0, w, h, data }
        })
        .collect();

    let n = k.pixel_count();
    let mut out = RenderOutput {
        width,
        height,
        rgb: vec![0.0; 3 * n],
        alpha: vec![0.0; n],
        depth: vec![DEPTH_SENTINEL; n],
        plane_distance: vec![0.0; n],
        normal: vec![0.0; 3 * n],
        gray: vec![0.0; n],
        mean_depth: vec![DEPTH_SENTINEL; n],
    };
    for t in &tiles {
        for y in 0..t.h {
            for x in 0..t.w {
                let src = &t.data[((y * t.w + x) as usize) * PIXEL_STRIDE..][..PIXEL_STRIDE];
                let i = (t.y0 + y) as usize * width as usize + (t.x0 + x) as usize;
                out.rgb[3 * i..3 * i + 3].copy_from_slice(&src[0..3]);
                out.alpha[i] = src[3];
                out.depth[i] = src[4];
                out.plane_distance[i] = src[5];
                out.normal[3 * i..3 * i + 3].copy_from_slice(&src[6..9]);
                out.gray[i] = src[9];
                out.mean_depth[i] = src[10];
            }
        }
    }
    out
}

fn shade_pixel(
    prepared: &[Prepared],
    list: &[u32],
    x: u32,
    y: u32,
    camera: &CameraModel,
    options: &RenderOptions,
    out: &mut [f64],
) {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut color = [0.0; 3];
    let mut plane = 0.0;
    let mut normal = Vector3::zeros();
    let mut range = 0.0;
    let t = composite_pixel(prepared, list, px, py, options, |p, w| {
        for c in 0..3 {
            color[c] += w * p.color[c];
        }
        plane += w * p.plane_distance;
        normal += w * p.normal;
        range += w * p.range;
    });
    let bg = options.background;
    let rgb = [0, 1, 2].map(|c| (color[c] + t * bg[c]).clamp(0.0, 1.0));
    let alpha = 1.0 - t;
    out[0..3].copy_from_slice(&rgb);
    out[3] = alpha;
    out[9] = luminance(rgb);
    out[4] = DEPTH_SENTINEL;
    out[10] = DEPTH_SENTINEL;
    if alpha <= options.alpha_floor {
        return;
    }
    let nn = normal.norm();
    if nn == 0.0 {
        return;
    }
    let n = normal / nn;
    // geometry is normalized by coverage so partially covered pixels are unbiased
    let plane = plane / alpha;
    out[5] = plane;
    out[6..9].copy_from_slice(n.as_slice());
    let ray = camera.intrinsics.unproject(px, py);
    out[10] = range / alpha / ray.norm();
    let denom = -n.dot(&ray);
    if denom.abs() < options.ray_epsilon {
        return;
    }
    let depth = plane / denom;
    if depth > 0.0 && depth.is_finite() {
        out[4] = depth;
    }
}

/// Geometry maps for depth supervision and meshing.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMaps {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f64>,
    pub plane_distance: Vec<f64>,
    pub normal: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl DepthMaps {
    /// Depth with unreliable samples replaced by the sentinel: pixels next to
    /// an undefined pixel (silhouettes) and pixels whose ray meets the surface
    /// at a cosine below `min_cos`. Suited for TSDF fusion, where a silhouette
    /// sample would carve free space it does not represent.
    pub fn fusion_depth(&self, camera: &CameraModel, min_cos: f64) -> Vec<f64> {
        let (w, h) = (self.width as usize, self.height as usize);
        let defined = |x: usize, y: usize| self.depth[y * w + x] != DEPTH_SENTINEL;
        let mut out = vec![DEPTH_SENTINEL; w * h];
        for y in 0..h {
            for x in 0..w {
                if !defined(x, y) {
                    continue;
                }
                let edge = x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !defined(x - 1, y)
                    || !defined(x + 1, y)
                    || !defined(x, y - 1)
                    || !defined(x, y + 1);
                if edge {
                    continue;
                }
                let i = y * w + x;
                let n = Vector3::new(self.normal[3 * i], self.normal[3 * i + 1], self.normal[3 * i + 2]);
                let ray = camera.intrinsics.pixel_ray(x as u32, y as u32).normalize();
                if n.dot(&ray).abs() >= min_cos {
                    out[i] = self.depth[i];
                }
            }
        }
        out
    }
}

/// Ray-plane depth, plane distance and normal maps.
pub fn render_depth_unbiased(scene: &GaussianScene, camera: &CameraModel, options: &RenderOptions) -> DepthMaps {
    let out = render(scene, camera, options);
    DepthMaps {
        width: out.width,
        height: out.height,
        depth: out.depth,
        plane_distance: out.plane_distance,
        normal: out.normal,
        alpha: out.alpha,
    }
}

/// Per-pixel total blend weight of the splats flagged in `selected`.
pub fn contribution_map(
    scene: &GaussianScene,
    camera: &CameraModel,
    options: &RenderOptions,
    selected: &[bool],
) -> Vec<f64> {
    assert_eq!(selected.len(), scene.len(), "selection mask length");
    let k = camera.intrinsics;
    let tiles_x = k.width.div_ceil(TILE_SIZE);
    let tiles_y = k.height.div_ceil(TILE_SIZE);
    let prepared = prepare(scene, camera, options);
    let bins = bin_tiles(&prepared, tiles_x, tiles_y);
    (0..k.pixel_count())
        .into_par_iter()
        .map(|i| {
            let x = (i % k.width as usize) as u32;
            let y = (i / k.width as usize) as u32;
            let list = &bins[((y / TILE_SIZE) * tiles_x + x / TILE_SIZE) as usize];
            let mut acc = 0.0;
            composite_pixel(&prepared, list, x as f64 + 0.5, y as f64 + 0.5, options, |p, w| {
                if selected[p.index as usize] {
                    acc += w;
                }
            });
            acc
        })
        .collect()
}
