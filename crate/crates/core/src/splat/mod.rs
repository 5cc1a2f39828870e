//! Gaussian scene data model.
//!
//! Opacity and scales are kept in their pre-activation form (logit and log)
//! exactly as stored on disk; activations are applied where they are used.

pub mod ply;
pub mod sh;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ply::{load_ply, save_ply};
pub use sh::{eval_sh, rgb_to_dc};

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("malformed PLY header: {0}")]
    Header(String),
    #[error("missing required PLY property `{0}`")]
    MissingProperty(String),
    #[error("PLY property `{name}` has unsupported type `{ty}` (expected float)")]
    PropertyType { name: String, ty: String },
    #[error("PLY body holds {actual} bytes but {expected} are required for {count} vertices")]
    ElementCount {
        count: usize,
        expected: usize,
        actual: usize,
    },
    #[error("unsupported number of f_rest properties: {0}")]
    RestCount(usize),
    #[error("SH coefficient count {count} does not match a degree in 0..=3")]
    ShDegree { count: usize },
    #[error("splat {index}: SH degree {found} differs from scene degree {expected}")]
    DegreeMismatch {
        index: usize,
        expected: u8,
        found: u8,
    },
    #[error("splat {index}: quaternion norm {norm} is too far from 1")]
    Quaternion { index: usize, norm: f64 },
    #[error("splat {index}: non-finite field `{field}`")]
    NonFinite { index: usize, field: &'static str },
    #[error("label count {labels} does not match splat count {splats}")]
    LabelCount { labels: usize, splats: usize },
    #[error("direction is not unit length (norm {norm})")]
    NotUnit { norm: f64 },
}

/// Where a splat came from after scenes are merged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceLabel {
    Environment,
    Object(String),
}

/// Quaternion norms within this distance of 1 are accepted untouched.
pub const QUAT_EXACT_TOL: f64 = 1e-6;
/// Quaternion norms within this distance of 1 are renormalized on load.
pub const QUAT_NORMALIZE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SplatRecord {
    pub mean: Vector3<f64>,
    /// Unit quaternion, `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// One `[r, g, b]` triple per SH basis function.
    pub sh: Vec<[f64; 3]>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl SplatRecord {
    /// An isotropic splat with a flat color at the given opacity.
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3], degree: u8) -> Self {
        let mut sh = vec![[0.0; 3]; sh::coeff_count(degree)];
        sh[0] = rgb_to_dc(rgb);
        Self {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vector3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh,
        }
    }

    pub fn sh_degree(&self) -> Option<u8> {
        sh::degree_for_count(self.sh.len())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z))
    }

    pub fn set_unit_quaternion(&mut self, q: &UnitQuaternion<f64>) {
        let q = q.quaternion();
        self.rotation = [q.w, q.i, q.j, q.k];
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.unit_quaternion().to_rotation_matrix().into_inner()
    }

    /// `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = self.scales().map(|s| s * s);
        r * Matrix3::from_diagonal(&s2) * r.transpose()
    }

    /// Index of the axis with the smallest scale.
    pub fn shortest_axis(&self) -> usize {
        self.log_scale.imin()
    }

    /// Checks field invariants and, when the quaternion norm is slightly off,
    /// renormalizes it in place.
    pub(crate) fn validate(&mut self, index: usize) -> Result<(), SplatError> {
        let finite = |v: f64| v.is_finite();
        if !self.mean.iter().all(|v| finite(*v)) {
            return Err(SplatError::NonFinite { index, field: "mean" });
        }
        if !self.log_scale.iter().all(|v| finite(*v)) {
            return Err(SplatError::NonFinite { index, field: "log_scale" });
        }
        if !self.rotation.iter().all(|v| finite(*v)) {
            return Err(SplatError::NonFinite { index, field: "rotation" });
        }
        if !finite(self.opacity_logit) {
            return Err(SplatError::NonFinite { index, field: "opacity" });
        }
        if !self.sh.iter().flatten().all(|v| finite(*v)) {
            return Err(SplatError::NonFinite { index, field: "sh" });
        }
        let norm = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dev = (norm - 1.0).abs();
        if dev > QUAT_NORMALIZE_TOL {
            return Err(SplatError::Quaternion { index, norm });
        }
        if dev > QUAT_EXACT_TOL {
            for v in &mut self.rotation {
                *v /= norm;
            }
        }
        Ok(())
    }
}

/// An ordered, immutable set of splats sharing one SH degree.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    splats: Vec<SplatRecord>,
    sh_degree: u8,
    labels: Option<Vec<SourceLabel>>,
}

impl GaussianScene {
    pub fn new(
        mut splats: Vec<SplatRecord>,
        sh_degree: u8,
        labels: Option<Vec<SourceLabel>>,
    ) -> Result<Self, SplatError> {
        if sh_degree > sh::MAX_SH_DEGREE {
            return Err(SplatError::ShDegree {
                count: sh::coeff_count(sh_degree),
            });
        }
        for (i, s) in splats.iter_mut().enumerate() {
            let found = s.sh_degree().ok_or(SplatError::ShDegree { count: s.sh.len() })?;
            if found != sh_degree {
                return Err(SplatError::DegreeMismatch {
                    index: i,
                    expected: sh_degree,
                    found,
                });
            }
            s.validate(i)?;
        }
        if let Some(l) = &labels {
            if l.len() != splats.len() {
                return Err(SplatError::LabelCount {
                    labels: l.len(),
                    splats: splats.len(),
                });
            }
        }
        Ok(Self {
            splats,
            sh_degree,
            labels,
        })
    }

    pub fn empty(sh_degree: u8) -> Self {
        Self {
            splats: Vec::new(),
            sh_degree,
            labels: None,
        }
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(
        splats: Vec<SplatRecord>,
        sh_degree: u8,
        labels: Option<Vec<SourceLabel>>,
    ) -> Self {
        debug_assert!(labels.as_ref().is_none_or(|l| l.len() == splats.len()));
        Self {
            splats,
            sh_degree,
            labels,
        }
    }

    pub fn splats(&self) -> &[SplatRecord] {
        &self.splats
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn labels(&self) -> Option<&[SourceLabel]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Same splats, every one tagged with `label`.
    pub fn with_label(self, label: SourceLabel) -> Self {
        let labels = vec![label; self.splats.len()];
        Self {
            labels: Some(labels),
            ..self
        }
    }

    pub fn into_parts(self) -> (Vec<SplatRecord>, u8, Option<Vec<SourceLabel>>) {
        (self.splats, self.sh_degree, self.labels)
    }

    /// Mean of all splat centers.
    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.splats.is_empty() {
            return None;
        }
        let sum: Vector3<f64> = self.splats.iter().map(|s| s.mean).sum();
        Some(sum / self.splats.len() as f64)
    }
}
