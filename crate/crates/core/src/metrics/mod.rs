//! Reconstruction losses, depth and normal priors, and a small scene fitter.

pub mod fit;
pub mod ncc;

use thiserror::Error;

use crate::splat::GaussianScene;

pub use fit::{fit_scene, load_targets, write_trace_csv, Descent, FitConfig, FitResult, LossTerms, LossWeights, TargetView};
pub use ncc::{ncc_loss, patch_planes, GrayImage, NccReport, PatchConfig, PatchPlane};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scene has no splats")]
    EmptyScene,
    #[error("length mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least two valid pixels, found {0}")]
    TooFewSamples(usize),
    #[error("monocular depth is constant over the mask")]
    RankDeficient,
    #[error("maps have no valid pixel in common")]
    NoOverlap,
    #[error("loss weights must be finite and nonnegative with at least one positive")]
    InvalidWeights,
    #[error("initial loss is not finite")]
    NonFiniteLoss,
    #[error("fit budget exceeded: {0}")]
    Budget(String),
    #[error("target views: {0}")]
    Targets(String),
}

/// Mean over splats of the smallest activated scale.
pub fn scale_loss(scene: &GaussianScene) -> Result<f64, MetricsError> {
    if scene.is_empty() {
        return Err(MetricsError::EmptyScene);
    }
    let sum: f64 = scene.splats().iter().map(|s| s.scales().min().abs()).sum();
    Ok(sum / scene.len() as f64)
}

/// Monocular depth and sparse SfM depth over the same pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPriorPair {
    pub mono: Vec<f64>,
    pub sfm: Vec<f64>,
    /// Pixels where `sfm` holds a measurement.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthAlignment {
    pub scale: f64,
    pub shift: f64,
    /// `scale * mono + shift` at every pixel.
    pub aligned: Vec<f64>,
}

/// Least-squares scale and shift taking `mono` to `sfm` over the mask.
pub fn align_mono_depth(pair: &DepthPriorPair) -> Result<DepthAlignment, MetricsError> {
    let n = pair.mono.len();
    if pair.sfm.len() != n {
        return Err(MetricsError::DimensionMismatch(n, pair.sfm.len()));
    }
    if pair.mask.len() != n {
        return Err(MetricsError::DimensionMismatch(n, pair.mask.len()));
    }
    let samples: Vec<(f64, f64)> = (0..n)
        .filter(|&i| pair.mask[i] && pair.mono[i].is_finite() && pair.sfm[i].is_finite())
        .map(|i| (pair.mono[i], pair.sfm[i]))
        .collect();
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples(samples.len()));
    }
    let count = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / count;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / count;
    let (mut sxx, mut sxy, mut sq) = (0.0, 0.0, 0.0);
    for (x, y) in &samples {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        sq += x * x;
    }
    if sxx <= 1e-12 * sq || sxx == 0.0 {
        return Err(MetricsError::RankDeficient);
    }
    let scale = sxy / sxx;
    let shift = my - scale * mx;
    let aligned = pair.mono.iter().map(|m| scale * m + shift).collect();
    Ok(DepthAlignment { scale, shift, aligned })
}

fn valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Mean absolute difference over pixels where both depths are positive.
pub fn depth_prior_loss(rendered: &[f64], prior: &[f64]) -> Result<f64, MetricsError> {
    if rendered.len() != prior.len() {
        return Err(MetricsError::DimensionMismatch(rendered.len(), prior.len()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (r, p) in rendered.iter().zip(prior) {
        if valid_depth(*r) && valid_depth(*p) {
            sum += (r - p).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::NoOverlap);
    }
    Ok(sum / count as f64)
}

/// Mean of `1 - cos` between interleaved normal maps, over pixels where both
/// normals are nonzero and finite.
pub fn normal_prior_loss(rendered: &[f64], prior: &[f64]) -> Result<f64, MetricsError> {
    if rendered.len() != prior.len() || rendered.len() % 3 != 0 {
        return Err(MetricsError::DimensionMismatch(rendered.len(), prior.len()));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (a, b) in rendered.chunks_exact(3).zip(prior.chunks_exact(3)) {
        let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
        if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
            continue;
        }
        let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
        sum += 1.0 - cos.clamp(-1.0, 1.0);
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::NoOverlap);
    }
    Ok(sum / count as f64)
}

/// Peak signal-to-noise ratio in dB for values in `[0, 1]`. Identical inputs
/// give `f64::INFINITY`.
pub fn psnr(image: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if image.len() != reference.len() {
        return Err(MetricsError::DimensionMismatch(image.len(), reference.len()));
    }
    if image.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let mse = image.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / image.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Mean absolute difference, the photometric term.
pub fn l1(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::DimensionMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}
