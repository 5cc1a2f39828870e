//! Gradient descent on the composite reconstruction objective with
//! finite-difference gradients. Sized for a handful of splats and small
//! images.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ncc::{ncc_loss, patch_planes, GrayImage, PatchConfig};
use super::{depth_prior_loss, l1, normal_prior_loss, scale_loss, MetricsError};
use crate::camera::{CameraModel, CameraSpec};
use crate::image_io::{read_png_rgb, FloatRaster};
use crate::raster::{render, RenderOptions, RenderOutput};
use crate::splat::{GaussianScene, SplatRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub photometric: f64,
    pub scale: f64,
    pub depth: f64,
    pub normal: f64,
    pub ncc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            photometric: 1.0,
            scale: 100.0,
            depth: 0.1,
            normal: 0.05,
            ncc: 0.2,
        }
    }
}

impl LossWeights {
    pub fn photometric_only() -> Self {
        Self {
            photometric: 1.0,
            scale: 0.0,
            depth: 0.0,
            normal: 0.0,
            ncc: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let all = [self.photometric, self.scale, self.depth, self.normal, self.ncc];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|w| *w == 0.0) {
            return Err(MetricsError::InvalidWeights);
        }
        Ok(())
    }

    fn needs_render(&self) -> bool {
        self.photometric > 0.0 || self.depth > 0.0 || self.normal > 0.0 || self.ncc > 0.0
    }
}

/// A supervision view. Depth is an already aligned prior; normals are
/// interleaved camera-space vectors, zero where unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetView {
    pub camera: CameraModel,
    pub rgb: Vec<f64>,
    pub depth: Option<Vec<f64>>,
    pub normal: Option<Vec<f64>>,
}

/// How the gradient is turned into a step direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Descent {
    /// The raw gradient.
    Gradient,
    /// The gradient divided per component by a running RMS of past
    /// gradients, which evens out parameters with very different
    /// sensitivities (positions, logits, colors).
    Rms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub weights: LossWeights,
    pub iterations: usize,
    pub descent: Descent,
    /// Largest step length; backtracking shrinks it.
    pub step_size: f64,
    pub fd_relative: f64,
    pub fd_floor: f64,
    pub backtracks: u32,
    pub max_splats: usize,
    pub max_image_side: u32,
    pub render: RenderOptions,
    pub patches: PatchConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            iterations: 300,
            descent: Descent::Rms,
            step_size: 0.01,
            fd_relative: 1e-4,
            fd_floor: 1e-6,
            backtracks: 5,
            max_splats: 200,
            max_image_side: 64,
            // the usual cutoffs make the loss jump by a quantum of alpha,
            // which swamps finite differences
            render: RenderOptions {
                alpha_cutoff: 1e-9,
                transmittance_stop: 1e-12,
                ..RenderOptions::default()
            },
            patches: PatchConfig::default(),
        }
    }
}

/// Weighted terms; `total` already includes the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub photometric: f64,
    pub scale: f64,
    pub depth: f64,
    pub normal: f64,
    pub ncc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub terms: LossTerms,
    /// Step length used, 0 when every backtracking trial was rejected.
    pub step: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: GaussianScene,
    pub trace: Vec<TraceRow>,
}

/// Loss terms of `scene` against the views. Terms with zero weight are not
/// computed.
pub fn evaluate(scene: &GaussianScene, views: &[TargetView], config: &FitConfig) -> LossTerms {
    let w = &config.weights;
    let mut terms = LossTerms::default();
    if w.scale > 0.0 {
        terms.scale = scale_loss(scene).unwrap_or(0.0);
    }
    if w.needs_render() && !views.is_empty() {
        let renders: Vec<RenderOutput> = views.iter().map(|v| render(scene, &v.camera, &config.render)).collect();
        let n = views.len() as f64;
        for (v, r) in views.iter().zip(&renders) {
            if w.photometric > 0.0 {
                terms.photometric += l1(&r.rgb, &v.rgb).unwrap_or(0.0) / n;
            }
            if w.depth > 0.0 {
                if let Some(d) = &v.depth {
                    terms.depth += depth_prior_loss(&r.depth, d).unwrap_or(0.0) / n;
                }
            }
            if w.normal > 0.0 {
                if let Some(nm) = &v.normal {
                    terms.normal += normal_prior_loss(&r.normal, nm).unwrap_or(0.0) / n;
                }
            }
        }
        if w.ncc > 0.0 && views.len() > 1 {
            let grays: Vec<GrayImage> = views
                .iter()
                .map(|v| GrayImage::from_rgb(v.camera.intrinsics.width, v.camera.intrinsics.height, &v.rgb))
                .collect();
            for i in 0..views.len() {
                let j = (i + 1) % views.len();
                let patches = patch_planes(&renders[i], &config.patches);
                let report = ncc_loss(&grays[i], &grays[j], &views[i].camera, &views[j].camera, &patches, config.patches.size);
                terms.ncc += report.loss / n;
            }
        }
    }
    terms.total = w.photometric * terms.photometric
        + w.scale * terms.scale
        + w.depth * terms.depth
        + w.normal * terms.normal
        + w.ncc * terms.ncc;
    terms
}

/// Continuous parameters of one splat, in a fixed order: mean, rotation,
/// log scale, opacity logit, SH coefficients.
fn push_params(s: &SplatRecord, out: &mut Vec<f64>) {
    out.extend(s.mean.iter());
    out.extend(s.rotation);
    out.extend(s.log_scale.iter());
    out.push(s.opacity_logit);
    out.extend(s.sh.iter().flatten());
}

pub fn scene_parameters(scene: &GaussianScene) -> Vec<f64> {
    let mut out = Vec::new();
    for s in scene.splats() {
        push_params(s, &mut out);
    }
    out
}

/// Rebuilds a scene shaped like `template` from a parameter vector.
pub fn with_parameters(template: &GaussianScene, params: &[f64]) -> GaussianScene {
    let mut it = params.iter().copied();
    let mut next = || it.next().expect("parameter vector too short");
    let splats = template
        .splats()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for k in 0..3 {
                s.mean[k] = next();
            }
            for q in &mut s.rotation {
                *q = next();
            }
            for k in 0..3 {
                s.log_scale[k] = next();
            }
            s.opacity_logit = next();
            for c in s.sh.iter_mut().flatten() {
                *c = next();
            }
            s
        })
        .collect();
    GaussianScene::from_parts_unchecked(splats, template.sh_degree(), template.labels().map(|l| l.to_vec()))
}

fn normalize_rotations(template: &GaussianScene, params: &mut [f64]) {
    let mut offset = 0;
    for s in template.splats() {
        let q = &mut params[offset + 3..offset + 7];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            q.iter_mut().for_each(|v| *v /= n);
        }
        offset += 11 + 3 * s.sh.len();
    }
}

/// Central finite-difference gradient of the total loss. Each component uses
/// a step of `fd_relative * |theta|`, at least `fd_floor`.
pub fn fd_gradient(scene: &GaussianScene, views: &[TargetView], config: &FitConfig) -> Vec<f64> {
    fd_gradient_scaled(scene, views, config, 1.0)
}

/// Same as [`fd_gradient`] with every step multiplied by `factor`.
pub fn fd_gradient_scaled(scene: &GaussianScene, views: &[TargetView], config: &FitConfig, factor: f64) -> Vec<f64> {
    let params = scene_parameters(scene);
    (0..params.len())
        .into_par_iter()
        .map(|i| {
            let h = factor * (config.fd_relative * params[i].abs()).max(config.fd_floor);
            let mut p = params.clone();
            p[i] = params[i] + h;
            let up = evaluate(&with_parameters(scene, &p), views, config).total;
            p[i] = params[i] - h;
            let down = evaluate(&with_parameters(scene, &p), views, config).total;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn check_inputs(scene: &GaussianScene, views: &[TargetView], config: &FitConfig) -> Result<(), MetricsError> {
    config.weights.validate()?;
    if scene.is_empty() {
        return Err(MetricsError::EmptyScene);
    }
    if scene.len() > config.max_splats {
        return Err(MetricsError::Budget(format!("{} splats, limit {}", scene.len(), config.max_splats)));
    }
    for v in views {
        let k = &v.camera.intrinsics;
        if k.width > config.max_image_side || k.height > config.max_image_side {
            return Err(MetricsError::Budget(format!(
                "{}x{} target, limit {}",
                k.width, k.height, config.max_image_side
            )));
        }
        let n = k.pixel_count();
        if v.rgb.len() != 3 * n {
            return Err(MetricsError::DimensionMismatch(3 * n, v.rgb.len()));
        }
        if let Some(d) = &v.depth {
            if d.len() != n {
                return Err(MetricsError::DimensionMismatch(n, d.len()));
            }
        }
        if let Some(nm) = &v.normal {
            if nm.len() != 3 * n {
                return Err(MetricsError::DimensionMismatch(3 * n, nm.len()));
            }
        }
    }
    Ok(())
}

/// Fits `initial` to the views. A step is taken only when it lowers the total
/// loss: the current step length is tried and halved up to `backtracks - 1`
/// times. An accepted step doubles the length for the next iteration, up to
/// `step_size`.
pub fn fit_scene(initial: &GaussianScene, views: &[TargetView], config: &FitConfig) -> Result<FitResult, MetricsError> {
    check_inputs(initial, views, config)?;
    let mut scene = initial.clone();
    let mut terms = evaluate(&scene, views, config);
    if !terms.total.is_finite() {
        return Err(MetricsError::NonFiniteLoss);
    }
    let mut trace = vec![TraceRow {
        iteration: 0,
        terms,
        step: 0.0,
        gradient_norm: 0.0,
    }];
    let mut step = config.step_size;
    let mut mean_square: Vec<f64> = Vec::new();
    for iteration in 1..=config.iterations {
        let grad = fd_gradient(&scene, views, config);
        let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(gradient_norm > 0.0 && gradient_norm.is_finite()) {
            trace.push(TraceRow {
                iteration,
                terms,
                step: 0.0,
                gradient_norm,
            });
            break;
        }
        let direction: Vec<f64> = match config.descent {
            Descent::Gradient => grad,
            Descent::Rms => {
                const DECAY: f64 = 0.9;
                if mean_square.is_empty() {
                    mean_square = grad.iter().map(|g| g * g).collect();
                } else {
                    for (m, g) in mean_square.iter_mut().zip(&grad) {
                        *m = DECAY * *m + (1.0 - DECAY) * g * g;
                    }
                }
                let floor = 1e-12 * gradient_norm;
                grad.iter().zip(&mean_square).map(|(g, m)| g / (m.sqrt() + floor)).collect()
            }
        };
        let params = scene_parameters(&scene);
        let mut accepted = 0.0;
        let mut trial = step;
        for _ in 0..config.backtracks {
            let mut p: Vec<f64> = params.iter().zip(&direction).map(|(x, d)| x - trial * d).collect();
            normalize_rotations(&scene, &mut p);
            let candidate = with_parameters(&scene, &p);
            let t = evaluate(&candidate, views, config);
            if t.total < terms.total {
                scene = candidate;
                terms = t;
                accepted = trial;
                break;
            }
            trial *= 0.5;
        }
        step = if accepted > 0.0 { (2.0 * accepted).min(config.step_size) } else { trial };
        log::debug!("fit iteration {iteration}: loss {:.6e} step {accepted:.3e}", terms.total);
        trace.push(TraceRow {
            iteration,
            terms,
            step: accepted,
            gradient_norm,
        });
    }
    Ok(FitResult { scene, trace })
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,total,photometric,scale,depth,normal,ncc,step,gradient_norm")?;
    for r in trace {
        let t = &r.terms;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration, t.total, t.photometric, t.scale, t.depth, t.normal, t.ncc, r.step, r.gradient_norm
        )?;
    }
    Ok(())
}

/// One entry of a target views manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetEntry {
    pub camera: CameraSpec,
    pub rgb_path: PathBuf,
    #[serde(default)]
    pub depth_path: Option<PathBuf>,
    #[serde(default)]
    pub normal_path: Option<PathBuf>,
}

pub fn load_targets(manifest: &Path) -> Result<Vec<TargetView>, MetricsError> {
    let err = |e: &dyn std::fmt::Display| MetricsError::Targets(e.to_string());
    let text = std::fs::read_to_string(manifest).map_err(|e| err(&e))?;
    let entries: Vec<TargetEntry> = serde_json::from_str(&text).map_err(|e| err(&e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .map(|e| {
            let camera = e.camera.to_camera().map_err(|x| err(&x))?;
            let (w, h, rgb) = read_png_rgb(&base.join(&e.rgb_path)).map_err(|x| err(&x))?;
            let k = &camera.intrinsics;
            if (w, h) != (k.width, k.height) {
                return Err(MetricsError::Targets(format!(
                    "{} is {w}x{h}, camera expects {}x{}",
                    e.rgb_path.display(),
                    k.width,
                    k.height
                )));
            }
            let raster = |p: &Option<PathBuf>| -> Result<Option<Vec<f64>>, MetricsError> {
                match p {
                    None => Ok(None),
                    Some(p) => Ok(Some(FloatRaster::read(&base.join(p)).map_err(|x| err(&x))?.to_f64())),
                }
            };
            Ok(TargetView {
                camera,
                rgb,
                depth: raster(&e.depth_path)?,
                normal: raster(&e.normal_path)?,
            })
        })
        .collect()
}
