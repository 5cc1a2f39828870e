//! TOML rollout files: environment settings plus assets resolved relative
//! to the file.
//!
//! ```toml
//! [env]
//! horizon_s = 15.0
//!
//! [assets]
//! arena = 5.0            # synthetic arena; or give `scene` and `regions`
//! # terrain = "floor.obj"
//!
//! [[assets.objects]]
//! id = "cone_red"
//! color = "red"
//! scene = "cone_red.ply"
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::arena::flat_arena;
use super::{EnvAssets, EnvConfig, Terrain};
use crate::mesh::{HeightIndex, TriangleMesh};
use crate::splat::ply::load_ply;
use crate::transform::episode::{AlignmentChain, ObjectAsset};
use crate::transform::placement::{ConeColor, RegionSpecs};
use crate::transform::{SimilarityFile, SimilarityTransform};

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("asset manifest: {0}")]
    Manifest(String),
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> AssetError {
    AssetError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub env_from_sim: Option<SimilarityFile>,
    pub sim_from_object: Option<SimilarityFile>,
    pub bbox: Option<SimilarityFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub id: String,
    pub color: Option<ConeColor>,
    pub scene: PathBuf,
    #[serde(default)]
    pub alignment: ChainFile,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetManifest {
    pub arena: Option<f64>,
    pub scene: Option<PathBuf>,
    /// Walkable surface as OBJ; a flat floor at `floor_height` otherwise.
    pub terrain: Option<PathBuf>,
    #[serde(default)]
    pub floor_height: f64,
    pub env_from_sim: Option<SimilarityFile>,
    #[serde(default)]
    pub objects: Vec<ObjectEntry>,
    pub regions: Option<RegionSpecs>,
}

/// A rollout config file: `[env]` settings plus `[assets]`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutFile {
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub assets: AssetManifest,
}

impl RolloutFile {
    pub fn load(path: &Path) -> Result<(EnvConfig, EnvAssets), AssetError> {
        let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        let file: RolloutFile = toml::from_str(&text).map_err(|e| file_error(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let assets = file.assets.resolve(base)?;
        Ok((file.env, assets))
    }
}

fn transform(f: &Option<SimilarityFile>, what: &str) -> Result<SimilarityTransform, AssetError> {
    match f {
        None => Ok(SimilarityTransform::identity()),
        Some(f) => f.to_transform().map_err(|e| AssetError::Manifest(format!("{what}: {e}"))),
    }
}

fn load_scene(path: &Path) -> Result<crate::splat::GaussianScene, AssetError> {
    let bytes = std::fs::read(path).map_err(|e| file_error(path, e))?;
    load_ply(&bytes).map_err(|e| file_error(path, e))
}

impl AssetManifest {
    pub fn resolve(&self, base: &Path) -> Result<EnvAssets, AssetError> {
        let mut assets = match (&self.scene, self.arena) {
            (Some(_), Some(_)) => return Err(AssetError::Manifest("give either `scene` or `arena`, not both".into())),
            (None, None) => flat_arena(5.0),
            (None, Some(size)) => {
                if !(size > 1.0 && size.is_finite()) {
                    return Err(AssetError::Manifest(format!("arena size {size} must exceed 1 m")));
                }
                flat_arena(size)
            }
            (Some(scene), None) => {
                let regions = self
                    .regions
                    .clone()
                    .ok_or_else(|| AssetError::Manifest("a captured scene needs `regions`".into()))?;
                EnvAssets {
                    scene: load_scene(&base.join(scene))?,
                    objects: Vec::new(),
                    alignments: HashMap::new(),
                    env_from_sim: SimilarityTransform::identity(),
                    terrain: Terrain::Flat(self.floor_height),
                    regions,
                }
            }
        };
        if let Some(r) = &self.regions {
            assets.regions = r.clone();
        }
        if let Some(path) = &self.terrain {
            let path = base.join(path);
            let text = std::fs::read_to_string(&path).map_err(|e| file_error(&path, e))?;
            let mesh = TriangleMesh::read_obj(&text).map_err(|e| file_error(&path, e))?;
            assets.terrain = Terrain::Mesh(HeightIndex::new(mesh));
        } else if self.scene.is_some() || self.floor_height != 0.0 {
            assets.terrain = Terrain::Flat(self.floor_height);
        }
        if self.env_from_sim.is_some() {
            assets.env_from_sim = transform(&self.env_from_sim, "env_from_sim")?;
        }
        if !self.objects.is_empty() {
            assets.objects.clear();
            assets.alignments.clear();
        }
        for entry in &self.objects {
            let chain = AlignmentChain {
                env_from_sim: match entry.alignment.env_from_sim {
                    Some(_) => transform(&entry.alignment.env_from_sim, "env_from_sim")?,
                    None => assets.env_from_sim,
                },
                sim_from_object: transform(&entry.alignment.sim_from_object, "sim_from_object")?,
                bbox: transform(&entry.alignment.bbox, "bbox")?,
            };
            if assets.alignments.insert(entry.id.clone(), chain).is_some() {
                return Err(AssetError::Manifest(format!("duplicate object id `{}`", entry.id)));
            }
            assets.objects.push(ObjectAsset {
                id: entry.id.clone(),
                color: entry.color,
                scene: load_scene(&base.join(&entry.scene))?,
            });
        }
        Ok(assets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_arena() {
        let file: RolloutFile = toml::from_str("").unwrap();
        let assets = file.assets.resolve(Path::new(".")).unwrap();
        assert_eq!(assets.objects.len(), 3);
        assert_eq!(file.env, EnvConfig::default());
    }

    #[test]
    fn env_settings_parse() {
        let text = "[assets]\narena = 3.0\n[env]\nhorizon_s = 10.0\nrender_observations = false\n";
        let file: RolloutFile = toml::from_str(text).unwrap();
        assert_eq!(file.assets.arena, Some(3.0));
        assert!(toml::from_str::<RolloutFile>("arena = 3.0").is_err());
        assert_eq!(file.env.horizon_s, 10.0);
        assert!(!file.env.render_observations);
    }

    #[test]
    fn scene_and_arena_conflict() {
        let m = AssetManifest {
            arena: Some(5.0),
            scene: Some("x.ply".into()),
            ..AssetManifest::default()
        };
        assert!(m.resolve(Path::new(".")).is_err());
    }
}
