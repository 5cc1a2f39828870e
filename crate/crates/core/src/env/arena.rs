//! A synthetic flat arena with three colored cones, for rollouts without
//! captured assets.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::{EnvAssets, Terrain};
use crate::splat::{GaussianScene, SplatRecord};
use crate::transform::episode::{AlignmentChain, ObjectAsset};
use crate::transform::placement::{ConeColor, Region, RegionSpecs, RobotSpec};
use crate::transform::similarity::SimilarityTransform;

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Region {
    Region {
        polygon: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        z: 0.0,
    }
}

/// Floor of flat disks over `[-size/2, size/2]^2` in a two-tone checker.
fn floor(size: f64, spacing: f64) -> Vec<SplatRecord> {
    let n = (size / spacing).round() as i64;
    let mut splats = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let x = -size / 2.0 + (i as f64 + 0.5) * spacing;
            let y = -size / 2.0 + (j as f64 + 0.5) * spacing;
            let tone = if (i + j) % 2 == 0 { [0.55, 0.52, 0.48] } else { [0.35, 0.33, 0.3] };
            let mut s = SplatRecord::isotropic(Vector3::new(x, y, 0.0), 0.6 * spacing, 0.95, tone, 0);
            s.log_scale.z = (1e-3 * spacing).ln();
            splats.push(s);
        }
    }
    splats
}

/// A cone as a stack of shrinking rings, base on `z = 0` at the origin.
pub fn cone_scene(color: ConeColor, height: f64, radius: f64) -> GaussianScene {
    let rgb = color.command().map(|c| 0.1 + 0.8 * c);
    let mut splats = Vec::new();
    let layers = 6;
    for l in 0..layers {
        let f = l as f64 / layers as f64;
        let r = radius * (1.0 - f);
        let z = height * (f + 0.5 / layers as f64);
        let count = ((8.0 * (1.0 - f)).ceil() as usize).max(1);
        for k in 0..count {
            let a = k as f64 * std::f64::consts::TAU / count as f64;
            let mean = Vector3::new(r * a.cos(), r * a.sin(), z);
            splats.push(SplatRecord::isotropic(mean, 0.5 * height / layers as f64, 0.9, rgb, 0));
        }
    }
    GaussianScene::new(splats, 0, None).expect("valid cone")
}

/// Square arena of side `size` meters: robot starts in the south band, the
/// three cone regions sit side by side in the north band.
pub fn flat_arena(size: f64) -> EnvAssets {
    let h = size / 2.0;
    let scene = GaussianScene::new(floor(size, 0.25), 0, None).expect("valid floor");
    let mut objects = Vec::new();
    let mut alignments = HashMap::new();
    for color in ConeColor::ALL {
        let id = format!("cone_{}", color.name());
        objects.push(ObjectAsset {
            id: id.clone(),
            color: Some(color),
            scene: cone_scene(color, 0.3, 0.1),
        });
        alignments.insert(id, AlignmentChain::default());
    }
    let margin = 0.3;
    let band = 0.4 * h;
    let third = (size - 2.0 * margin) / 3.0;
    let x = |k: f64| -h + margin + k * third;
    EnvAssets {
        scene,
        objects,
        alignments,
        env_from_sim: SimilarityTransform::identity(),
        terrain: Terrain::Flat(0.0),
        regions: RegionSpecs {
            robot: RobotSpec {
                region: rect(-h + margin, -h + margin, h - margin, -h + margin + band),
                yaw_range: [-std::f64::consts::PI, std::f64::consts::PI],
            },
            left: rect(x(0.0), h - margin - band, x(1.0) - 0.1, h - margin),
            middle: rect(x(1.0) + 0.1, h - margin - band, x(2.0) - 0.1, h - margin),
            right: rect(x(2.0) + 0.1, h - margin - band, x(3.0), h - margin),
        },
    }
}
