//! Random robot and cone placement over convex floor regions.

use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TransformError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeColor {
    Red,
    Green,
    Blue,
}

impl ConeColor {
    pub const ALL: [ConeColor; 3] = [ConeColor::Red, ConeColor::Green, ConeColor::Blue];

    /// The RGB command vector naming this color.
    pub fn command(self) -> [f64; 3] {
        match self {
            ConeColor::Red => [1.0, 0.0, 0.0],
            ConeColor::Green => [0.0, 1.0, 0.0],
            ConeColor::Blue => [0.0, 0.0, 1.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConeColor::Red => "red",
            ConeColor::Green => "green",
            ConeColor::Blue => "blue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionName {
    Left,
    Middle,
    Right,
}

impl RegionName {
    pub const ALL: [RegionName; 3] = [RegionName::Left, RegionName::Middle, RegionName::Right];
}

/// A convex polygon on a horizontal plane at height `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub polygon: Vec<[f64; 2]>,
    #[serde(default)]
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    #[serde(flatten)]
    pub region: Region,
    /// Inclusive yaw bounds in radians.
    pub yaw_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpecs {
    pub robot: RobotSpec,
    pub left: Region,
    pub middle: Region,
    pub right: Region,
}

impl RegionSpecs {
    pub fn region(&self, name: RegionName) -> &Region {
        match name {
            RegionName::Left => &self.left,
            RegionName::Middle => &self.middle,
            RegionName::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConePlacement {
    pub color: ConeColor,
    pub region: RegionName,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementSample {
    pub robot_position: Vector3<f64>,
    pub robot_yaw: f64,
    /// Ordered left, middle, right.
    pub cones: [ConePlacement; 3],
}

impl PlacementSample {
    pub fn cone(&self, color: ConeColor) -> &ConePlacement {
        self.cones
            .iter()
            .find(|c| c.color == color)
            .expect("every color is placed exactly once")
    }
}

fn cross(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a - o).perp(&(b - o))
}

impl Region {
    fn points(&self) -> Vec<Vector2<f64>> {
        self.polygon.iter().map(|p| Vector2::new(p[0], p[1])).collect()
    }

    /// Rejects empty, non-finite, or non-convex polygons.
    pub fn validate(&self, name: &str) -> Result<(), TransformError> {
        if self.polygon.is_empty() {
            return Err(TransformError::EmptyRegion(name.into()));
        }
        let pts = self.points();
        if !pts.iter().all(|p| p.iter().all(|v| v.is_finite())) || !self.z.is_finite() {
            return Err(TransformError::InvalidRegion(name.into(), "non-finite coordinate".into()));
        }
        let n = pts.len();
        if n >= 3 {
            let mut sign = 0.0f64;
            for i in 0..n {
                let c = cross(pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
                if c.abs() < 1e-15 {
                    continue;
                }
                if sign == 0.0 {
                    sign = c.signum();
                } else if c.signum() != sign {
                    return Err(TransformError::InvalidRegion(name.into(), "polygon is not convex".into()));
                }
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        let pts = self.points();
        (1..pts.len().saturating_sub(1))
            .map(|i| 0.5 * cross(pts[0], pts[i], pts[i + 1]).abs())
            .sum()
    }

    pub fn centroid(&self) -> Vector2<f64> {
        let pts = self.points();
        let area = self.area();
        if area <= 1e-15 {
            return pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
        }
        let mut c = Vector2::zeros();
        for i in 1..pts.len() - 1 {
            let a = 0.5 * cross(pts[0], pts[i], pts[i + 1]).abs();
            c += a * (pts[0] + pts[i] + pts[i + 1]) / 3.0;
        }
        c / area
    }

    pub fn contains(&self, p: &Vector2<f64>, tol: f64) -> bool {
        let pts = self.points();
        if pts.len() < 3 || self.area() <= 1e-15 {
            return pts.iter().any(|q| (q - p).norm() <= tol) || (self.centroid() - p).norm() <= tol;
        }
        let n = pts.len();
        let orient = cross(pts[0], pts[1], pts[2]).signum();
        (0..n).all(|i| cross(pts[i], pts[(i + 1) % n], *p) * orient >= -tol)
    }

    /// Uniform sample over the polygon area; zero-area polygons yield their
    /// vertex centroid.
    pub fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        let pts = self.points();
        let area = self.area();
        let xy = if area <= 1e-15 {
            pts.iter().sum::<Vector2<f64>>() / pts.len() as f64
        } else {
            let mut pick = rng.random::<f64>() * area;
            let mut tri = pts.len() - 2;
            for i in 1..pts.len() - 1 {
                let a = 0.5 * cross(pts[0], pts[i], pts[i + 1]).abs();
                if pick < a {
                    tri = i;
                    break;
                }
                pick -= a;
            }
            let (a, b, c) = (pts[0], pts[tri], pts[tri + 1]);
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        };
        Vector3::new(xy.x, xy.y, self.z)
    }
}

/// Samples a robot pose and a one-cone-per-region assignment with a uniformly
/// random color permutation.
pub fn sample_placement(rng: &mut impl Rng, regions: &RegionSpecs) -> Result<PlacementSample, TransformError> {
    regions.robot.region.validate("robot")?;
    for name in RegionName::ALL {
        regions.region(name).validate(&format!("{name:?}").to_lowercase())?;
    }
    let robot_position = regions.robot.region.sample(rng);
    let [lo, hi] = regions.robot.yaw_range;
    let robot_yaw = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut colors = ConeColor::ALL;
    colors.shuffle(rng);
    let cones = std::array::from_fn(|i| {
        let region = RegionName::ALL[i];
        ConePlacement {
            color: colors[i],
            region,
            position: regions.region(region).sample(rng),
        }
    });
    Ok(PlacementSample {
        robot_position,
        robot_yaw,
        cones,
    })
}
