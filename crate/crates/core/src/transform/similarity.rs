//! Uniform-scale rigid transforms `x -> s R x + t`, least-squares
//! registration, and homogeneous-matrix decomposition.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::TransformError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Validating constructor.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self, TransformError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TransformError::Scale(scale));
        }
        check_rotation(&rotation, 1e-9)?;
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn from_scale(s: f64) -> Self {
        Self {
            scale: s,
            ..Self::identity()
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
            scale,
        }
    }

    /// Rotation about +z by `yaw` followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner(),
            translation,
            scale: 1.0,
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * v)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Self {
            rotation: rt,
            translation: -inv_s * (rt * self.translation),
            scale: inv_s,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(self.scale * self.rotation));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

pub(crate) fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<(), TransformError> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > tol || !r.iter().all(|v| v.is_finite()) {
        return Err(TransformError::NotOrthonormal(err));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol.max(1e-12) * 10.0 {
        return Err(TransformError::Reflection(det));
    }
    Ok(())
}

/// Splits a 4x4 similarity matrix into rotation, translation and scale.
///
/// The upper-left block must be `s R` with `R` a proper rotation: equal column
/// norms and mutually orthogonal columns, each within 1e-6 relative.
pub fn decompose_homogeneous(m: &Matrix4<f64>) -> Result<SimilarityTransform, TransformError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(TransformError::NotSimilarity("non-finite entries".into()));
    }
    let bottom = m.fixed_view::<1, 4>(3, 0);
    if (bottom[(0, 0)].abs() + bottom[(0, 1)].abs() + bottom[(0, 2)].abs()) > 1e-12
        || (bottom[(0, 3)] - 1.0).abs() > 1e-12
    {
        return Err(TransformError::NotSimilarity("bottom row is not [0 0 0 1]".into()));
    }
    let block: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let det = block.determinant();
    if det <= 0.0 {
        return Err(TransformError::NotSimilarity(format!(
            "block determinant {det} is not positive"
        )));
    }
    let scale = det.cbrt();
    let norms: Vec<f64> = (0..3).map(|c| block.column(c).norm()).collect();
    for (c, n) in norms.iter().enumerate() {
        if ((n - scale) / scale).abs() > 1e-6 {
            return Err(TransformError::NotSimilarity(format!(
                "column {c} has norm {n}, expected {scale} (non-uniform scale)"
            )));
        }
    }
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let cos = block.column(a).dot(&block.column(b)) / (norms[a] * norms[b]);
        if cos.abs() > 1e-6 {
            return Err(TransformError::NotSimilarity(format!(
                "columns {a} and {b} are not orthogonal (cos {cos}, shear)"
            )));
        }
    }
    Ok(SimilarityTransform {
        rotation: block / scale,
        translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        scale,
    })
}

/// Result of [`fit_similarity`].
#[derive(Debug, Clone, Copy)]
pub struct Registration {
    pub transform: SimilarityTransform,
    /// Root-mean-square of `|T src_i - dst_i|`.
    pub rms: f64,
}

/// Sum of squared residuals `Σ |T src_i - dst_i|²`.
pub fn registration_cost(t: &SimilarityTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(s, d)| (t.apply(s) - d).norm_squared())
        .sum()
}

/// Closed-form least-squares similarity mapping `src` onto `dst` (Umeyama).
///
/// Needs at least four correspondences with non-coplanar sources. A reflection
/// in the cross-covariance is corrected by flipping the weakest singular
/// direction.
pub fn fit_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Registration, TransformError> {
    if src.len() != dst.len() {
        return Err(TransformError::Correspondence(format!(
            "{} source points but {} targets",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 4 {
        return Err(TransformError::Correspondence(format!(
            "need at least 4 correspondences, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let mu_s: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut cov_s = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let cs = s - mu_s;
        let cd = d - mu_d;
        cov_s += cs * cs.transpose();
        cross += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov_s /= n;
    cross /= n;
    var_s /= n;

    // coplanar sources leave the centered covariance rank-deficient
    let eig = cov_s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if hi <= 0.0 || lo <= hi * 1e-12 {
        return Err(TransformError::Degenerate(format!(
            "source covariance eigenvalues {lo:e}..{hi:e}"
        )));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut sv = svd.singular_values;
    let mut signs = Vector3::repeat(1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        let k = sv.imin();
        signs[k] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    sv.component_mul_assign(&signs);
    let scale = sv.sum() / var_s;
    let translation = mu_d - scale * (rotation * mu_s);
    let transform = SimilarityTransform {
        rotation,
        translation,
        scale,
    };
    let rms = (registration_cost(&transform, src, dst) / n).sqrt();
    Ok(Registration { transform, rms })
}

/// Places an object relative to a registered reference block: keeps the
/// block's rotation and scale and moves the origin to `block(delta)`.
pub fn compose_relative(block: &SimilarityTransform, delta: &Vector3<f64>) -> SimilarityTransform {
    SimilarityTransform {
        translation: block.apply(delta),
        ..*block
    }
}

/// Chains three transforms into one: `env_from_sim ∘ sim_from_object ∘ bbox`.
/// The rightmost factor is applied first.
pub fn chain_object_transform(
    env_from_sim: &SimilarityTransform,
    sim_from_object: &SimilarityTransform,
    bbox: &SimilarityTransform,
) -> SimilarityTransform {
    env_from_sim.compose(sim_from_object).compose(bbox)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::Rng;

    pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
        // uniform via normalized 4D Gaussian-ish sampling
        loop {
            let q = nalgebra::Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = q.norm();
            if n > 0.1 && n <= 1.0 {
                let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
                return q.to_rotation_matrix().into_inner();
            }
        }
    }

    pub fn random_similarity(rng: &mut impl Rng) -> SimilarityTransform {
        SimilarityTransform {
            rotation: random_rotation(rng),
            translation: Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
            scale: rng.random_range(0.2..5.0),
        }
    }

    pub fn random_point(rng: &mut impl Rng, r: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
    }
}
