//! Builds the composed Gaussian scene for one episode.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::placement::{ConeColor, PlacementSample};
use super::similarity::{chain_object_transform, SimilarityTransform};
use super::{merge_scenes, transform_scene, TransformError};
use crate::splat::{GaussianScene, SourceLabel};

/// Transforms that carry an object's reconstruction into the environment.
///
/// `bbox` takes cropped object splats to their canonical local frame,
/// `sim_from_object` takes that frame into simulator coordinates, and
/// `env_from_sim` takes simulator coordinates into the environment
/// reconstruction's frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentChain {
    pub env_from_sim: SimilarityTransform,
    pub sim_from_object: SimilarityTransform,
    pub bbox: SimilarityTransform,
}

impl AlignmentChain {
    /// Full object-to-environment transform with the object additionally
    /// posed in the simulator frame.
    pub fn with_pose(&self, pose: &SimilarityTransform) -> SimilarityTransform {
        chain_object_transform(&self.env_from_sim, &pose.compose(&self.sim_from_object), &self.bbox)
    }

    pub fn resting(&self) -> SimilarityTransform {
        chain_object_transform(&self.env_from_sim, &self.sim_from_object, &self.bbox)
    }
}

#[derive(Debug, Clone)]
pub struct ObjectAsset {
    pub id: String,
    /// Cones are posed by the placement sample; other objects stay at rest.
    pub color: Option<ConeColor>,
    pub scene: GaussianScene,
}

#[derive(Debug, Clone)]
pub struct EpisodeScene {
    pub scene: GaussianScene,
    /// Object id and the transform applied to its splats, for moving the
    /// matching collision mesh identically.
    pub object_transforms: Vec<(String, SimilarityTransform)>,
}

/// Poses every object, transforms its splats and merges them into the
/// environment scene.
pub fn instantiate_episode(
    env_scene: &GaussianScene,
    objects: &[ObjectAsset],
    placement: &PlacementSample,
    alignments: &HashMap<String, AlignmentChain>,
) -> Result<EpisodeScene, TransformError> {
    let mut posed = Vec::with_capacity(objects.len());
    let mut object_transforms = Vec::with_capacity(objects.len());
    for obj in objects {
        let chain = alignments
            .get(&obj.id)
            .ok_or_else(|| TransformError::MissingAlignment(obj.id.clone()))?;
        let t = match obj.color {
            Some(color) => {
                let p = placement.cone(color).position;
                chain.with_pose(&SimilarityTransform::from_translation(Vector3::new(p.x, p.y, p.z)))
            }
            None => chain.resting(),
        };
        posed.push((transform_scene(&obj.scene, &t), SourceLabel::Object(obj.id.clone())));
        object_transforms.push((obj.id.clone(), t));
    }
    if posed.is_empty() {
        return Ok(EpisodeScene {
            scene: env_scene.clone(),
            object_transforms,
        });
    }
    let mut parts: Vec<(&GaussianScene, SourceLabel)> = vec![(env_scene, SourceLabel::Environment)];
    parts.extend(posed.iter().map(|(s, l)| (s, l.clone())));
    Ok(EpisodeScene {
        scene: merge_scenes(&parts)?,
        object_transforms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::SplatRecord;
    use crate::transform::placement::{ConePlacement, RegionName};

    fn cone_scene() -> GaussianScene {
        // symmetric cluster centered on the origin
        let pts = [
            Vector3::new(0.05, 0.0, 0.1),
            Vector3::new(-0.05, 0.0, 0.1),
            Vector3::new(0.0, 0.05, 0.2),
            Vector3::new(0.0, -0.05, 0.2),
            Vector3::new(0.0, 0.0, -0.6),
        ];
        GaussianScene::new(
            pts.iter().map(|p| SplatRecord::isotropic(*p, 0.02, 0.9, [1.0, 0.2, 0.1], 1)).collect(),
            1,
            None,
        )
        .unwrap()
    }

    fn placement() -> PlacementSample {
        PlacementSample {
            robot_position: Vector3::zeros(),
            robot_yaw: 0.0,
            cones: [
                ConePlacement {
                    color: ConeColor::Green,
                    region: RegionName::Left,
                    position: Vector3::new(-1.0, 2.0, 0.0),
                },
                ConePlacement {
                    color: ConeColor::Red,
                    region: RegionName::Middle,
                    position: Vector3::new(0.5, 3.0, 0.3),
                },
                ConePlacement {
                    color: ConeColor::Blue,
                    region: RegionName::Right,
                    position: Vector3::new(2.0, 2.0, 0.0),
                },
            ],
        }
    }

    #[test]
    fn no_objects_returns_env() {
        let env = cone_scene();
        let ep = instantiate_episode(&env, &[], &placement(), &HashMap::new()).unwrap();
        assert_eq!(ep.scene, env);
    }

    #[test]
    fn cone_centroid_lands_on_placement() {
        let env = GaussianScene::empty(1);
        let cone = cone_scene();
        let objects = vec![ObjectAsset {
            id: "red_cone".into(),
            color: Some(ConeColor::Red),
            scene: cone.clone(),
        }];
        let mut alignments = HashMap::new();
        alignments.insert("red_cone".to_string(), AlignmentChain::default());
        let ep = instantiate_episode(&env, &objects, &placement(), &alignments).unwrap();
        let c = ep.scene.centroid().unwrap();
        assert!((c - Vector3::new(0.5, 3.0, 0.3)).norm() < 1e-6);
        assert_eq!(ep.object_transforms.len(), 1);
    }

    #[test]
    fn missing_alignment_is_error() {
        let objects = vec![ObjectAsset {
            id: "x".into(),
            color: None,
            scene: cone_scene(),
        }];
        assert!(matches!(
            instantiate_episode(&cone_scene(), &objects, &placement(), &HashMap::new()),
            Err(TransformError::MissingAlignment(_))
        ));
    }

    #[test]
    fn matches_hand_merge() {
        let env = cone_scene();
        let cone = cone_scene();
        let chain = AlignmentChain {
            env_from_sim: SimilarityTransform::from_yaw(0.3, Vector3::new(0.1, 0.0, 0.0)),
            sim_from_object: SimilarityTransform::from_scale(0.5),
            bbox: SimilarityTransform::from_translation(Vector3::new(0.0, 0.0, 0.6)),
        };
        let objects = vec![ObjectAsset {
            id: "blue".into(),
            color: Some(ConeColor::Blue),
            scene: cone.clone(),
        }];
        let alignments = HashMap::from([("blue".to_string(), chain)]);
        let ep = instantiate_episode(&env, &objects, &placement(), &alignments).unwrap();

        let pose = SimilarityTransform::from_translation(Vector3::new(2.0, 2.0, 0.0));
        let t = chain.env_from_sim.compose(&pose).compose(&chain.sim_from_object).compose(&chain.bbox);
        let by_hand = merge_scenes(&[
            (&env, SourceLabel::Environment),
            (&transform_scene(&cone, &t), SourceLabel::Object("blue".into())),
        ])
        .unwrap();
        for (a, b) in ep.scene.splats().iter().zip(by_hand.splats()) {
            assert!((a.mean - b.mean).norm() < 1e-12);
        }
        assert_eq!(ep.scene.labels(), by_hand.labels());
    }
}
