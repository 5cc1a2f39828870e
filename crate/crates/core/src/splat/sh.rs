//! Real spherical-harmonic color evaluation, degree 0 through 3.
//!
//! The basis and its sign convention are the ones used by the reference
//! Gaussian-splatting CUDA rasterizer: coefficient `k` of band `l` is stored
//! at index `l*l + (m + l)` with `m` running from `-l` to `l`, and the band-1
//! functions are `(-y, z, -x)` up to a common constant.

use nalgebra::Vector3;

use super::SplatError;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH sum so that a zero DC coefficient maps to mid-gray.
pub const DC_OFFSET: f64 = 0.5;

pub const MAX_SH_DEGREE: u8 = 3;

/// Number of coefficients per color channel for a given degree.
pub const fn coeff_count(degree: u8) -> usize {
    let n = degree as usize + 1;
    n * n
}

/// Inverse of [`coeff_count`]; `None` when `count` is not a perfect square of
/// a supported degree.
pub fn degree_for_count(count: usize) -> Option<u8> {
    (0..=MAX_SH_DEGREE).find(|&d| coeff_count(d) == count)
}

/// Basis values at `dir` for all bands up to `degree`, written to the front of
/// the returned array.
pub fn sh_basis(degree: u8, dir: &Vector3<f64>) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree < 1 {
        return b;
    }
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree < 2 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree < 3 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Evaluates view-dependent RGB for `coeffs` (one `[r, g, b]` triple per basis
/// function) in direction `dir`, including the DC offset. No clamping.
pub fn eval_sh(coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> Result<[f64; 3], SplatError> {
    let degree = degree_for_count(coeffs.len()).ok_or(SplatError::ShDegree {
        count: coeffs.len(),
    })?;
    let norm = dir.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(SplatError::NotUnit { norm });
    }
    Ok(eval_sh_unchecked(degree, coeffs, dir))
}

pub(crate) fn eval_sh_unchecked(degree: u8, coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(degree, dir);
    let mut rgb = [DC_OFFSET; 3];
    for (k, c) in coeffs.iter().enumerate() {
        for ch in 0..3 {
            rgb[ch] += basis[k] * c[ch];
        }
    }
    rgb
}

/// Converts a linear RGB color to the DC coefficient that reproduces it.
pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - DC_OFFSET) / SH_C0)
}
