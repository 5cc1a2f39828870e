//! Rotation of real spherical-harmonic coefficients.
//!
//! Band matrices are built with the Ivanic–Ruedenberg recursion: band 1 is a
//! permutation of the rotation matrix and each higher band is assembled from
//! band 1 and the band below it. No Euler angles are involved.

use nalgebra::{DMatrix, Matrix3};

use crate::splat::sh;

/// Per-band rotation matrices, band `l` being `(2l+1) x (2l+1)`.
#[derive(Debug, Clone)]
pub struct ShRotation {
    bands: Vec<DMatrix<f64>>,
}

fn centered(m: &DMatrix<f64>, i: i32, j: i32) -> f64 {
    let off = (m.nrows() as i32 - 1) / 2;
    m[((i + off) as usize, (j + off) as usize)]
}

fn delta(a: i32, b: i32) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn p(i: i32, a: i32, b: i32, l: i32, r1: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    if b == l {
        centered(r1, i, 1) * centered(prev, a, l - 1) - centered(r1, i, -1) * centered(prev, a, -l + 1)
    } else if b == -l {
        centered(r1, i, 1) * centered(prev, a, -l + 1) + centered(r1, i, -1) * centered(prev, a, l - 1)
    } else {
        centered(r1, i, 0) * centered(prev, a, b)
    }
}

fn u_term(m: i32, n: i32, l: i32, r1: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    p(0, m, n, l, r1, prev)
}

fn v_term(m: i32, n: i32, l: i32, r1: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    if m == 0 {
        p(1, 1, n, l, r1, prev) + p(-1, -1, n, l, r1, prev)
    } else if m > 0 {
        p(1, m - 1, n, l, r1, prev) * (1.0 + delta(m, 1)).sqrt()
            - p(-1, -m + 1, n, l, r1, prev) * (1.0 - delta(m, 1))
    } else {
        p(1, m + 1, n, l, r1, prev) * (1.0 - delta(m, -1))
            + p(-1, -m - 1, n, l, r1, prev) * (1.0 + delta(m, -1)).sqrt()
    }
}

fn w_term(m: i32, n: i32, l: i32, r1: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    debug_assert!(m != 0);
    if m > 0 {
        p(1, m + 1, n, l, r1, prev) + p(-1, -m - 1, n, l, r1, prev)
    } else {
        p(1, m - 1, n, l, r1, prev) - p(-1, -m + 1, n, l, r1, prev)
    }
}

fn next_band(l: i32, r1: &DMatrix<f64>, prev: &DMatrix<f64>) -> DMatrix<f64> {
    let size = (2 * l + 1) as usize;
    let mut out = DMatrix::zeros(size, size);
    for m in -l..=l {
        for n in -l..=l {
            let denom = if n.abs() == l {
                (2 * l * (2 * l - 1)) as f64
            } else {
                ((l + n) * (l - n)) as f64
            };
            let am = m.abs();
            let u = (((l + m) * (l - m)) as f64 / denom).sqrt();
            let v = 0.5
                * ((1.0 + delta(m, 0)) * ((l + am - 1) * (l + am)) as f64 / denom).sqrt()
                * (1.0 - 2.0 * delta(m, 0));
            let w = -0.5 * (((l - am - 1) * (l - am)) as f64 / denom).sqrt() * (1.0 - delta(m, 0));
            let mut value = 0.0;
            if u != 0.0 {
                value += u * u_term(m, n, l, r1, prev);
            }
            if v != 0.0 {
                value += v * v_term(m, n, l, r1, prev);
            }
            if w != 0.0 {
                value += w * w_term(m, n, l, r1, prev);
            }
            out[((m + l) as usize, (n + l) as usize)] = value;
        }
    }
    out
}

/// `(-1)^m` sign of the splatting basis relative to the phase-free real basis.
fn phase(m: i32) -> f64 {
    if m.rem_euclid(2) == 1 {
        -1.0
    } else {
        1.0
    }
}

impl ShRotation {
    /// Band matrices for rotation `r` up to `degree`.
    ///
    /// The returned matrices act on coefficient vectors: if `c` describes
    /// `f(d)`, then `D c` describes `f(R^T d)`, i.e. the function rotated by `R`.
    pub fn new(r: &Matrix3<f64>, degree: u8) -> Self {
        let mut bands = vec![DMatrix::from_element(1, 1, 1.0)];
        if degree == 0 {
            return Self { bands };
        }
        // band 1 of the phase-free basis is ordered (y, z, x)
        let perm = [1usize, 2, 0];
        let mut r1 = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                r1[(i, j)] = r[(perm[i], perm[j])];
            }
        }
        bands.push(r1.clone());
        for l in 2..=degree as i32 {
            let prev = bands.last().expect("band l-1");
            let next = next_band(l, &r1, prev);
            bands.push(next);
        }
        // switch to the sign convention of the stored coefficients
        for (l, band) in bands.iter_mut().enumerate() {
            let l = l as i32;
            for m in -l..=l {
                for n in -l..=l {
                    band[((m + l) as usize, (n + l) as usize)] *= phase(m) * phase(n);
                }
            }
        }
        Self { bands }
    }

    pub fn band(&self, l: usize) -> &DMatrix<f64> {
        &self.bands[l]
    }

    pub fn degree(&self) -> u8 {
        (self.bands.len() - 1) as u8
    }

    /// Rotates coefficients in place; their degree must not exceed this rotation's.
    pub fn apply(&self, coeffs: &mut [[f64; 3]]) {
        let degree = sh::degree_for_count(coeffs.len()).expect("valid SH coefficient count");
        assert!(degree <= self.degree(), "rotation built for a lower degree");
        for l in 1..=degree as usize {
            let start = l * l;
            let size = 2 * l + 1;
            let band = &self.bands[l];
            for ch in 0..3 {
                let src: Vec<f64> = (0..size).map(|i| coeffs[start + i][ch]).collect();
                for (i, row) in band.row_iter().enumerate() {
                    coeffs[start + i][ch] = row.iter().zip(&src).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

/// Rotates SH coefficients so that `eval_sh(rotate_sh(c, R), R d) == eval_sh(c, d)`.
pub fn rotate_sh(coeffs: &[[f64; 3]], r: &Matrix3<f64>) -> Vec<[f64; 3]> {
    let degree = sh::degree_for_count(coeffs.len()).expect("valid SH coefficient count");
    let mut out = coeffs.to_vec();
    ShRotation::new(r, degree).apply(&mut out);
    out
}
