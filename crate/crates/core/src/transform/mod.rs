//! Coordinate alignment, Gaussian attribute transforms, cropping, composition
//! and episode randomization.

pub mod episode;
pub mod placement;
pub mod similarity;
pub mod wigner;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::splat::{GaussianScene, SourceLabel, SplatRecord};

pub use episode::{instantiate_episode, AlignmentChain, EpisodeScene, ObjectAsset};
pub use placement::{sample_placement, ConeColor, ConePlacement, PlacementSample, Region, RegionSpecs, RobotSpec};
pub use similarity::{
    chain_object_transform, compose_relative, decompose_homogeneous, fit_similarity, registration_cost,
    Registration, SimilarityTransform,
};
pub use wigner::{rotate_sh, ShRotation};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("scale must be positive and finite, got {0}")]
    Scale(f64),
    #[error("matrix is not orthonormal (error {0:e})")]
    NotOrthonormal(f64),
    #[error("matrix is a reflection (determinant {0})")]
    Reflection(f64),
    #[error("not a similarity transform: {0}")]
    NotSimilarity(String),
    #[error("bad correspondences: {0}")]
    Correspondence(String),
    #[error("degenerate source points: {0}")]
    Degenerate(String),
    #[error("cannot merge scenes with SH degrees {0} and {1}")]
    DegreeMismatch(u8, u8),
    #[error("region `{0}` has no vertices")]
    EmptyRegion(String),
    #[error("invalid region `{0}`: {1}")]
    InvalidRegion(String, String),
    #[error("no alignment for object `{0}`")]
    MissingAlignment(String),
    #[error("half extents must be positive")]
    HalfExtents,
}

/// Applies `T` to every splat: `μ' = sRμ + t`, log-scales shifted by `ln s`,
/// orientation pre-multiplied by `R`, SH coefficients rotated by `R`.
/// Opacity is untouched.
pub fn transform_scene(scene: &GaussianScene, t: &SimilarityTransform) -> GaussianScene {
    let rot = ShRotation::new(&t.rotation, scene.sh_degree());
    let q_r = t.quaternion();
    let log_s = t.scale.ln();
    let splats = scene
        .splats()
        .iter()
        .map(|s| {
            let mut out = s.clone();
            out.mean = t.apply(&s.mean);
            out.log_scale = s.log_scale.add_scalar(log_s);
            out.set_unit_quaternion(&(q_r * s.unit_quaternion()));
            rot.apply(&mut out.sh);
            out
        })
        .collect();
    GaussianScene::from_parts_unchecked(splats, scene.sh_degree(), scene.labels().map(<[_]>::to_vec))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBoundingBox {
    pub center: Vector3<f64>,
    /// Box-to-world rotation.
    pub rotation: Matrix3<f64>,
    pub half_extents: Vector3<f64>,
}

impl OrientedBoundingBox {
    pub fn new(center: Vector3<f64>, rotation: Matrix3<f64>, half_extents: Vector3<f64>) -> Result<Self, TransformError> {
        if !half_extents.iter().all(|h| *h > 0.0) {
            return Err(TransformError::HalfExtents);
        }
        similarity::check_rotation(&rotation, 1e-9)?;
        Ok(Self {
            center,
            rotation,
            half_extents,
        })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.rotation.transpose() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }

    /// Transform taking box-local coordinates to world coordinates.
    pub fn to_similarity(&self) -> SimilarityTransform {
        SimilarityTransform {
            rotation: self.rotation,
            translation: self.center,
            scale: 1.0,
        }
    }
}

/// On-disk form of an oriented box: `{center, rotation_quaternion, half_extents}`
/// with the quaternion as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObbFile {
    pub center: [f64; 3],
    pub rotation_quaternion: [f64; 4],
    pub half_extents: [f64; 3],
}

impl ObbFile {
    pub fn to_obb(&self) -> Result<OrientedBoundingBox, TransformError> {
        let [w, x, y, z] = self.rotation_quaternion;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) {
            return Err(TransformError::NotOrthonormal(f64::NAN));
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        OrientedBoundingBox::new(Vector3::from(self.center), r, Vector3::from(self.half_extents))
    }
}

/// On-disk form of a similarity transform with the rotation given as rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityFile {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub scale: f64,
}

impl SimilarityFile {
    pub fn to_transform(&self) -> Result<SimilarityTransform, TransformError> {
        let r = self.rotation;
        let rotation = Matrix3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]);
        SimilarityTransform::new(rotation, Vector3::from(self.translation), self.scale)
    }

    pub fn from_transform(t: &SimilarityTransform) -> Self {
        let r = &t.rotation;
        Self {
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            translation: [t.translation.x, t.translation.y, t.translation.z],
            scale: t.scale,
        }
    }
}

/// Partitions splats by whether their mean lies inside `obb`.
pub fn crop_by_obb(scene: &GaussianScene, obb: &OrientedBoundingBox) -> (GaussianScene, GaussianScene) {
    let mut inside = (Vec::new(), Vec::new());
    let mut outside = (Vec::new(), Vec::new());
    let labels = scene.labels();
    for (i, s) in scene.splats().iter().enumerate() {
        let bucket = if obb.contains(&s.mean) { &mut inside } else { &mut outside };
        bucket.0.push(s.clone());
        if let Some(l) = labels {
            bucket.1.push(l[i].clone());
        }
    }
    let build = |(splats, l): (Vec<SplatRecord>, Vec<SourceLabel>)| {
        let labels = labels.map(|_| l);
        GaussianScene::from_parts_unchecked(splats, scene.sh_degree(), labels)
    };
    (build(inside), build(outside))
}

/// Concatenates scenes in order. Splats from an unlabeled input are tagged
/// with the label given alongside it. Visibility between sources is resolved
/// at render time by the global depth sort.
pub fn merge_scenes(parts: &[(&GaussianScene, SourceLabel)]) -> Result<GaussianScene, TransformError> {
    let Some((first, _)) = parts.first() else {
        return Ok(GaussianScene::empty(0));
    };
    let degree = first.sh_degree();
    let mut splats = Vec::new();
    let mut labels = Vec::new();
    for (scene, label) in parts {
        if scene.sh_degree() != degree && !scene.is_empty() {
            return Err(TransformError::DegreeMismatch(degree, scene.sh_degree()));
        }
        splats.extend_from_slice(scene.splats());
        match scene.labels() {
            Some(l) => labels.extend_from_slice(l),
            None => labels.extend(std::iter::repeat_n(label.clone(), scene.len())),
        }
    }
    Ok(GaussianScene::from_parts_unchecked(splats, degree, Some(labels)))
}

#[cfg(test)]
mod tests {
    use super::similarity::test_support::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_scene(rng: &mut impl Rng, n: usize, degree: u8) -> GaussianScene {
        let splats = (0..n)
            .map(|_| {
                let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
                    random_rotation(rng),
                ));
                let mut s = SplatRecord::isotropic(random_point(rng, 2.0), 0.1, rng.random_range(0.1..0.9), [0.5; 3], degree);
                s.set_unit_quaternion(&q);
                s.log_scale = Vector3::new(rng.random_range(-4.0..-1.0), rng.random_range(-4.0..-1.0), rng.random_range(-4.0..-1.0));
                for c in &mut s.sh {
                    *c = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
                }
                s
            })
            .collect();
        GaussianScene::new(splats, degree, None).unwrap()
    }

    #[test]
    fn identity_transform_keeps_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = random_scene(&mut rng, 20, 3);
        let out = transform_scene(&scene, &SimilarityTransform::identity());
        for (a, b) in scene.splats().iter().zip(out.splats()) {
            assert!((a.mean - b.mean).norm() < 1e-15);
            assert!((a.log_scale - b.log_scale).norm() < 1e-15);
            assert!((a.unit_quaternion().angle_to(&b.unit_quaternion())).abs() < 1e-7);
            assert_eq!(a.opacity_logit, b.opacity_logit);
            for (x, y) in a.sh.iter().zip(&b.sh) {
                for ch in 0..3 {
                    assert!((x[ch] - y[ch]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn pure_scale_doubles_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scene = random_scene(&mut rng, 10, 2);
        let out = transform_scene(&scene, &SimilarityTransform::from_scale(2.0));
        for (a, b) in scene.splats().iter().zip(out.splats()) {
            assert!((b.mean - 2.0 * a.mean).norm() < 1e-15);
            assert!((b.log_scale - a.log_scale.add_scalar(2f64.ln())).norm() < 1e-15);
            assert!((a.unit_quaternion().angle_to(&b.unit_quaternion())).abs() < 1e-7);
            assert_eq!(a.sh, b.sh);
        }
    }

    #[test]
    fn covariance_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scene = random_scene(&mut rng, 30, 1);
        for _ in 0..10 {
            let mut t = random_similarity(&mut rng);
            for rigid in [true, false] {
                if rigid {
                    t.scale = 1.0;
                }
                let out = transform_scene(&scene, &t);
                for (a, b) in scene.splats().iter().zip(out.splats()) {
                    let want = t.scale * t.scale * t.rotation * a.covariance() * t.rotation.transpose();
                    let got = b.covariance();
                    assert!((want - got).abs().max() < 1e-9 * want.abs().max().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn crop_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scene = random_scene(&mut rng, 200, 0);
        let big = OrientedBoundingBox::new(Vector3::zeros(), Matrix3::identity(), Vector3::repeat(10.0)).unwrap();
        let (inside, outside) = crop_by_obb(&scene, &big);
        assert_eq!(inside.len(), 200);
        assert!(outside.is_empty());
        let far = OrientedBoundingBox::new(Vector3::repeat(50.0), Matrix3::identity(), Vector3::repeat(1.0)).unwrap();
        assert!(crop_by_obb(&scene, &far).0.is_empty());

        let unit = OrientedBoundingBox::new(Vector3::zeros(), Matrix3::identity(), Vector3::repeat(0.5)).unwrap();
        let mut grid = Vec::new();
        for i in -4..=4 {
            for j in -4..=4 {
                for k in -4..=4 {
                    let p = Vector3::new(i as f64 * 0.3, j as f64 * 0.3, k as f64 * 0.3);
                    grid.push(SplatRecord::isotropic(p, 0.05, 0.5, [0.5; 3], 0));
                }
            }
        }
        let gs = GaussianScene::new(grid, 0, None).unwrap();
        let (inside, outside) = crop_by_obb(&gs, &unit);
        let oracle = gs.splats().iter().filter(|s| s.mean.iter().all(|v| v.abs() <= 0.5)).count();
        assert_eq!(inside.len(), oracle);
        assert_eq!(inside.len() + outside.len(), gs.len());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = random_scene(&mut rng, 5, 1);
        let empty = GaussianScene::empty(1);
        let merged = merge_scenes(&[(&scene, SourceLabel::Environment), (&empty, SourceLabel::Object("x".into()))]).unwrap();
        assert_eq!(merged.splats(), scene.splats());
        assert!(merged.labels().unwrap().iter().all(|l| *l == SourceLabel::Environment));
    }

    #[test]
    fn merge_degree_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_scene(&mut rng, 2, 1);
        let b = random_scene(&mut rng, 2, 0);
        assert!(matches!(
            merge_scenes(&[(&a, SourceLabel::Environment), (&b, SourceLabel::Environment)]),
            Err(TransformError::DegreeMismatch(1, 0))
        ));
    }
}
