//! Goal-reaching navigation environment over a composed Gaussian scene.
//!
//! The agent is a kinematic base driven by planar velocity commands at a
//! fixed control rate. Heights come from a terrain mesh; steps that would
//! change the base height by more than a threshold are refused. The ego
//! camera renders the episode scene through the environment alignment.

pub mod arena;
pub mod assets;
pub mod augment;
pub mod policy;
pub mod reward;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraModel, Intrinsics};
use crate::mesh::HeightIndex;
use crate::raster::{render, RenderOptions};
use crate::splat::GaussianScene;
use crate::transform::episode::{instantiate_episode, AlignmentChain, ObjectAsset};
use crate::transform::placement::{sample_placement, ConeColor, RegionSpecs};
use crate::transform::similarity::SimilarityTransform;
use crate::transform::TransformError;

pub use augment::{AugmentationConfig, ColorJitter, FrameAugmentation};
pub use policy::{run_episode, summarize, EpisodeSummary, Policy, RolloutSummary, ScriptedPolicy};
pub use reward::{reward_heading, wrap_angle, RewardBreakdown, RewardWeights};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode ended")]
    EpisodeDone,
    #[error("action has non-finite components")]
    NonFiniteAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Ego camera placement relative to the base. Positive pitch tilts the view
/// down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    pub position: [f64; 3],
    pub pitch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub control_hz: f64,
    pub horizon_s: f64,
    pub success_radius: f64,
    pub reach_reward: f64,
    pub velocity_limits: VelocityLimits,
    pub mount: CameraMount,
    /// Largest base height change accepted in one step.
    pub step_threshold: f64,
    pub weights: RewardWeights,
    pub augmentation: AugmentationConfig,
    pub image_width: u32,
    pub image_height: u32,
    pub fov_x: f64,
    pub fov_y: f64,
    /// Target cone color; drawn uniformly per episode when absent.
    pub target_color: Option<ConeColor>,
    /// Skip rendering; observations then carry no image.
    pub render_observations: bool,
    pub render: RenderOptions,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_hz: 5.0,
            horizon_s: 15.0,
            success_radius: 0.25,
            reach_reward: 10.0,
            velocity_limits: VelocityLimits {
                x: 1.0,
                y: 0.5,
                yaw: 1.0,
            },
            mount: CameraMount {
                position: [0.0, 0.0, 0.3],
                pitch: 0.0,
            },
            step_threshold: 0.15,
            weights: RewardWeights::default(),
            augmentation: AugmentationConfig::default(),
            image_width: 320,
            image_height: 180,
            fov_x: 1.5701,
            fov_y: 1.0260,
            target_color: None,
            render_observations: true,
            render: RenderOptions::default(),
        }
    }
}

impl EnvConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn max_steps(&self) -> u32 {
        (self.horizon_s * self.control_hz).round() as u32
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        let v = &self.velocity_limits;
        for (name, x) in [
            ("control_hz", self.control_hz),
            ("horizon_s", self.horizon_s),
            ("success_radius", self.success_radius),
            ("velocity_limits.x", v.x),
            ("velocity_limits.y", v.y),
            ("velocity_limits.yaw", v.yaw),
            ("step_threshold", self.step_threshold),
            ("fov_x", self.fov_x),
            ("fov_y", self.fov_y),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("{name} must be positive, got {x}"));
            }
        }
        let steps = self.horizon_s * self.control_hz;
        if (steps - steps.round()).abs() > 1e-9 {
            return bad(format!("horizon {} s is not a whole number of control steps", self.horizon_s));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be nonzero".into());
        }
        self.augmentation.validate().map_err(EnvError::Config)?;
        self.render.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.image_width, self.image_height, self.fov_x, self.fov_y)
    }
}

/// Ground heights in the simulator frame.
#[derive(Debug, Clone)]
pub enum Terrain {
    Flat(f64),
    Mesh(HeightIndex),
}

impl Terrain {
    pub fn height(&self, x: f64, y: f64) -> Option<f64> {
        match self {
            Terrain::Flat(z) => Some(*z),
            Terrain::Mesh(index) => index.height(x, y),
        }
    }
}

/// Read-only inputs shared by environment instances.
#[derive(Debug, Clone)]
pub struct EnvAssets {
    /// Environment reconstruction, in its own frame.
    pub scene: GaussianScene,
    pub objects: Vec<ObjectAsset>,
    pub alignments: HashMap<String, AlignmentChain>,
    /// Simulator frame to reconstruction frame.
    pub env_from_sim: SimilarityTransform,
    pub terrain: Terrain,
    pub regions: RegionSpecs,
}

/// Simulator-frame state of the current episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub goal: Vector3<f64>,
    pub goal_color: ConeColor,
    pub distance: f64,
    pub distance_z: f64,
    pub steps: u32,
    pub last_action: [f64; 3],
    pub last_command: [f64; 3],
    pub reached: bool,
    pub done: bool,
}

impl EnvState {
    /// Bearing from the robot to the goal.
    pub fn goal_yaw(&self) -> f64 {
        let d = self.goal - self.position;
        d.y.atan2(d.x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// RGB8, row-major; absent when rendering is disabled.
    pub rgb: Option<Vec<u8>>,
    pub width: u32,
    pub height: u32,
    pub command: [f64; 3],
    pub last_action: [f64; 3],
    /// Base angular velocity (3), projected gravity (3), then 24 zeros in
    /// place of joint positions and velocities.
    pub proprio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub terminated: bool,
    pub truncated: bool,
}

/// `V_max * tanh(raw)`, componentwise.
pub fn scale_action(raw: &[f64; 3], limits: &VelocityLimits) -> [f64; 3] {
    [limits.x * raw[0].tanh(), limits.y * raw[1].tanh(), limits.yaw * raw[2].tanh()]
}

/// Simulator-frame ego camera for a base pose.
pub fn mount_camera(intrinsics: Intrinsics, position: &Vector3<f64>, yaw: f64, mount: &CameraMount) -> CameraModel {
    let base = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let pitch = Rotation3::from_axis_angle(&Vector3::y_axis(), mount.pitch);
    // camera axes (right, down, forward) in base coordinates
    let cam_in_base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let r_wc = base.into_inner() * pitch.into_inner() * cam_in_base;
    let center = position + base * Vector3::from(mount.position);
    let r_cw = r_wc.transpose();
    CameraModel {
        intrinsics,
        pose: crate::camera::RigidPose {
            rotation: r_cw,
            translation: -(r_cw * center),
        },
    }
}

/// Renders one augmented frame: pose noise in the simulator frame, the
/// environment alignment, rasterization, then photometric augmentation.
pub fn observe(
    scene: &GaussianScene,
    camera_sim: &CameraModel,
    env_from_sim: &SimilarityTransform,
    config: &AugmentationConfig,
    render_options: &RenderOptions,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut sym = |r: f64| r * (2.0 * rng.random::<f64>() - 1.0);
    let t = config.pose_translation;
    let r = config.pose_rotation;
    let d_center = Vector3::new(sym(t[0]), sym(t[1]), sym(t[2]));
    let d_rot = Vector3::new(sym(r[0]), sym(r[1]), sym(r[2]));
    let noisy = if d_center == Vector3::zeros() && d_rot == Vector3::zeros() {
        *camera_sim
    } else {
        camera_sim.perturbed(&d_center, &d_rot)
    };
    let camera = noisy.transformed(env_from_sim);
    let frame = FrameAugmentation::sample(config, rng);
    let mut rgb = render(scene, &camera, render_options).rgb;
    let k = camera.intrinsics;
    frame.apply(config, &mut rgb, k.width as usize, k.height as usize);
    rgb
}

fn quantize(rgb: &[f64]) -> Vec<u8> {
    rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// One environment instance. Instances share assets and own their state and
/// random stream.
pub struct NavEnv {
    config: EnvConfig,
    assets: Arc<EnvAssets>,
    rng: ChaCha8Rng,
    state: Option<EnvState>,
    scene: GaussianScene,
    previous_frame: Option<Vec<u8>>,
}

impl NavEnv {
    pub fn new(config: EnvConfig, assets: Arc<EnvAssets>, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            scene: assets.scene.clone(),
            assets,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: None,
            previous_frame: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// The composed scene of the current episode.
    pub fn episode_scene(&self) -> &GaussianScene {
        &self.scene
    }

    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        let placement = sample_placement(&mut self.rng, &self.assets.regions)?;
        let drawn = ConeColor::ALL[self.rng.random_range(0..3)];
        let goal_color = self.config.target_color.unwrap_or(drawn);
        let goal = placement
            .cones
            .iter()
            .find(|c| c.color == goal_color)
            .expect("every color is placed")
            .position;
        let episode = instantiate_episode(&self.assets.scene, &self.assets.objects, &placement, &self.assets.alignments)?;
        self.scene = episode.scene;
        let mut position = placement.robot_position;
        if let Some(z) = self.assets.terrain.height(position.x, position.y) {
            position.z = z;
        }
        let state = EnvState {
            position,
            yaw: wrap_angle(placement.robot_yaw),
            goal,
            goal_color,
            distance: (goal - position).norm(),
            distance_z: (goal.z - position.z).abs(),
            steps: 0,
            last_action: [0.0; 3],
            last_command: [0.0; 3],
            reached: false,
            done: false,
        };
        self.state = Some(state);
        self.previous_frame = None;
        Ok(self.observation([0.0; 3]))
    }

    fn observation(&mut self, angular_velocity: [f64; 3]) -> Observation {
        let state = self.state.as_ref().expect("state set before observing");
        let k = self.config.intrinsics();
        let rgb = if self.config.render_observations {
            let camera = mount_camera(k, &state.position, state.yaw, &self.config.mount);
            let frame = quantize(&observe(
                &self.scene,
                &camera,
                &self.assets.env_from_sim,
                &self.config.augmentation,
                &self.config.render,
                &mut self.rng,
            ));
            let delayed = self.rng.random::<f64>() < self.config.augmentation.delay_probability;
            let previous = self.previous_frame.replace(frame.clone());
            Some(match (delayed, previous) {
                (true, Some(p)) => p,
                _ => frame,
            })
        } else {
            None
        };
        let mut proprio = vec![0.0; 30];
        proprio[..3].copy_from_slice(&angular_velocity);
        proprio[5] = -1.0;
        Observation {
            rgb,
            width: k.width,
            height: k.height,
            command: state.goal_color.command(),
            last_action: state.last_action,
            proprio,
        }
    }

    pub fn step(&mut self, raw: [f64; 3]) -> Result<StepOutcome, EnvError> {
        let cfg = &self.config;
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if state.done {
            return Err(EnvError::EpisodeDone);
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        let dt = cfg.dt();
        let v = scale_action(&raw, &cfg.velocity_limits);
        state.yaw = wrap_angle(state.yaw + v[2] * dt);
        let (s, c) = state.yaw.sin_cos();
        let candidate = Vector3::new(
            state.position.x + (c * v[0] - s * v[1]) * dt,
            state.position.y + (s * v[0] + c * v[1]) * dt,
            0.0,
        );
        let moved = match self.assets.terrain.height(candidate.x, candidate.y) {
            Some(z) if (z - state.position.z).abs() <= cfg.step_threshold => {
                state.position = Vector3::new(candidate.x, candidate.y, z);
                true
            }
            _ => false,
        };
        let achieved = if moved { [v[0], v[1]] } else { [0.0, 0.0] };

        let distance = (state.goal - state.position).norm();
        let distance_z = (state.goal.z - state.position.z).abs();
        let reach = !state.reached && distance <= cfg.success_radius;
        let mut r = RewardBreakdown {
            reach_goal: if reach { cfg.reach_reward } else { 0.0 },
            goal_dis: reward::reward_progress(state.distance, distance),
            goal_dis_z: reward::reward_progress(state.distance_z, distance_z),
            goal_heading: reward_heading(state.yaw, state.goal_yaw()),
            stop_at_goal: reward::reward_stop_at_goal(distance, cfg.success_radius, &v),
            track_lin_vel: -((achieved[0] - v[0]).powi(2) + (achieved[1] - v[1]).powi(2)).sqrt(),
            track_ang_vel: 0.0,
            action_l2: reward::reward_action_l2(&raw),
            total: 0.0,
        };
        r = r.weighted(&cfg.weights);
        state.distance = distance;
        state.distance_z = distance_z;
        state.steps += 1;
        state.last_action = raw;
        state.last_command = v;
        state.reached |= reach;
        let terminated = reach;
        let truncated = !terminated && state.steps >= cfg.max_steps();
        state.done = terminated || truncated;
        let observation = self.observation([0.0, 0.0, v[2]]);
        Ok(StepOutcome {
            observation,
            reward: r,
            terminated,
            truncated,
        })
    }
}
