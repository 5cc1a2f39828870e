//! Photometric augmentation of ego observations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Jitter ranges are symmetric around the identity: a factor is drawn from
/// `[1 - r, 1 + r]`, the hue shift (in turns) from `[-r, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    /// Odd Gaussian blur kernel side; 1 disables blurring.
    pub blur_kernel: u32,
    /// Blur sigma is drawn from `[0, blur_sigma]`.
    pub blur_sigma: f64,
    pub noise_probability: f64,
    pub noise_sigma: f64,
    /// Uniform camera pose noise bounds per axis, meters and radians.
    pub pose_translation: [f64; 3],
    pub pose_rotation: [f64; 3],
    /// Probability that an observation is delayed by one step.
    pub delay_probability: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.02,
            blur_kernel: 5,
            blur_sigma: 1.0,
            noise_probability: 0.05,
            noise_sigma: 0.02,
            pose_translation: [0.02, 0.02, 0.02],
            pose_rotation: [0.02, 0.02, 0.02],
            delay_probability: 0.5,
        }
    }
}

impl AugmentationConfig {
    /// No randomization at all.
    pub fn disabled() -> Self {
        Self {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            blur_kernel: 1,
            blur_sigma: 0.0,
            noise_probability: 0.0,
            noise_sigma: 0.0,
            pose_translation: [0.0; 3],
            pose_rotation: [0.0; 3],
            delay_probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} jitter must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(format!("hue jitter must be in [0, 0.5], got {}", self.hue));
        }
        if self.blur_kernel == 0 || self.blur_kernel % 2 == 0 {
            return Err(format!("blur kernel must be odd, got {}", self.blur_kernel));
        }
        for (name, p) in [
            ("noise_probability", self.noise_probability),
            ("delay_probability", self.delay_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        let bounds = self.pose_translation.iter().chain(&self.pose_rotation);
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) || bounds.clone().any(|b| !(*b >= 0.0)) {
            return Err("sigmas and pose noise bounds must be nonnegative".into());
        }
        Ok(())
    }
}

/// Color jitter parameters for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation in turns.
    pub hue: f64,
}

impl ColorJitter {
    pub const IDENTITY: Self = Self {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };

    /// Applies brightness, contrast, saturation and hue in that order to an
    /// interleaved RGB image, clamping to `[0, 1]` after each.
    pub fn apply(&self, rgb: &mut [f64]) {
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        if self.brightness != 1.0 {
            rgb.iter_mut().for_each(|v| *v = clamp(*v * self.brightness));
        }
        if self.contrast != 1.0 {
            let n = (rgb.len() / 3).max(1) as f64;
            let mean = rgb.chunks_exact(3).map(gray).sum::<f64>() / n;
            rgb.iter_mut().for_each(|v| *v = clamp(mean + self.contrast * (*v - mean)));
        }
        if self.saturation != 1.0 {
            for px in rgb.chunks_exact_mut(3) {
                let g = gray(px);
                px.iter_mut().for_each(|v| *v = clamp(g + self.saturation * (*v - g)));
            }
        }
        if self.hue != 0.0 {
            for px in rgb.chunks_exact_mut(3) {
                let (h, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
                let out = hsv_to_rgb((h + self.hue).rem_euclid(1.0), s, v);
                px.copy_from_slice(&out);
            }
        }
    }
}

fn gray(px: &[f64]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Hue in turns `[0, 1)`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6.floor() as i64 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(rgb: &mut [f64], width: usize, height: usize, kernel: u32, sigma: f64) {
    if kernel <= 1 || sigma <= 1e-3 || width == 0 || height == 0 {
        return;
    }
    let half = (kernel / 2) as i64;
    let mut weights: Vec<f64> = (-half..=half).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    let mut tmp = vec![0.0; rgb.len()];
    let idx = |x: usize, y: usize| 3 * (y * width + x);
    for y in 0..height {
        for x in 0..width {
            let mut acc = [0.0; 3];
            for (k, w) in weights.iter().enumerate() {
                let sx = (x as i64 + k as i64 - half).clamp(0, width as i64 - 1) as usize;
                for c in 0..3 {
                    acc[c] += w * rgb[idx(sx, y) + c];
                }
            }
            tmp[idx(x, y)..idx(x, y) + 3].copy_from_slice(&acc);
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = [0.0; 3];
            for (k, w) in weights.iter().enumerate() {
                let sy = (y as i64 + k as i64 - half).clamp(0, height as i64 - 1) as usize;
                for c in 0..3 {
                    acc[c] += w * tmp[idx(x, sy) + c];
                }
            }
            rgb[idx(x, y)..idx(x, y) + 3].copy_from_slice(&acc);
        }
    }
}

/// Parameters drawn for one frame. Every draw happens regardless of whether
/// the corresponding augmentation is enabled, so the random stream does not
/// depend on the configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAugmentation {
    pub jitter: ColorJitter,
    pub blur_sigma: f64,
    /// Seed for the additive noise field, when noise is applied.
    pub noise_seed: Option<u64>,
}

impl FrameAugmentation {
    pub fn sample(config: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        let mut sym = |r: f64| r * (2.0 * rng.random::<f64>() - 1.0);
        let jitter = ColorJitter {
            brightness: 1.0 + sym(config.brightness),
            contrast: 1.0 + sym(config.contrast),
            saturation: 1.0 + sym(config.saturation),
            hue: sym(config.hue),
        };
        let blur_sigma = config.blur_sigma * rng.random::<f64>();
        let noisy = rng.random::<f64>() < config.noise_probability;
        let seed = rng.random::<u64>();
        Self {
            jitter,
            blur_sigma,
            noise_seed: noisy.then_some(seed),
        }
    }

    /// Color jitter, then blur, then additive noise.
    pub fn apply(&self, config: &AugmentationConfig, rgb: &mut [f64], width: usize, height: usize) {
        self.jitter.apply(rgb);
        gaussian_blur(rgb, width, height, config.blur_kernel, self.blur_sigma);
        if let (Some(seed), true) = (self.noise_seed, config.noise_sigma > 0.0) {
            use rand::SeedableRng;
            let mut noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
            rgb.iter_mut().for_each(|v| *v = (*v + normal.sample(&mut noise_rng)).clamp(0.0, 1.0));
        }
    }
}
