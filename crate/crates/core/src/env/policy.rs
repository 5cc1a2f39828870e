//! Policies, episode rollouts and success statistics.

use std::io::Write;

use serde::Serialize;

use super::reward::wrap_angle;
use super::{EnvError, EnvState, NavEnv, Observation, RewardBreakdown, VelocityLimits};

pub trait Policy {
    /// Raw (pre-tanh) action. `state` is the privileged simulator state.
    fn act(&mut self, observation: &Observation, state: &EnvState) -> [f64; 3];
}

/// Proportional heading controller with access to true poses: turn toward
/// the goal bearing and drive forward once roughly aligned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedPolicy {
    pub limits: VelocityLimits,
    /// Yaw rate per radian of heading error.
    pub yaw_gain: f64,
    /// Drive forward only below this heading error.
    pub align_tolerance: f64,
    /// Commands are kept below this fraction of the limits so that the
    /// inverse tanh stays finite.
    pub saturation: f64,
}

impl ScriptedPolicy {
    pub fn new(limits: VelocityLimits) -> Self {
        Self {
            limits,
            yaw_gain: 2.0,
            align_tolerance: 0.5,
            saturation: 0.99,
        }
    }

    /// Post-tanh command for a heading error and goal distance.
    pub fn command(&self, heading_error: f64, distance: f64) -> [f64; 3] {
        let cap = |v: f64, limit: f64| v.clamp(-self.saturation * limit, self.saturation * limit);
        let yaw = cap(self.yaw_gain * heading_error, self.limits.yaw);
        let forward = if heading_error.abs() < self.align_tolerance {
            cap(distance.min(self.limits.x) * heading_error.cos(), self.limits.x)
        } else {
            0.0
        };
        [forward, 0.0, yaw]
    }

    pub fn raw_for(&self, command: &[f64; 3]) -> [f64; 3] {
        let l = [self.limits.x, self.limits.y, self.limits.yaw];
        std::array::from_fn(|i| (command[i] / l[i]).atanh())
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _observation: &Observation, state: &EnvState) -> [f64; 3] {
        let error = wrap_angle(state.goal_yaw() - state.yaw);
        let planar = (state.goal - state.position).xy().norm();
        self.raw_for(&self.command(error, planar))
    }
}

/// One line of the JSON-lines episode log.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub t: f64,
    /// `[x, y, z, yaw]` after the step.
    pub pose: [f64; 4],
    pub action: [f64; 3],
    pub v_cmd: [f64; 3],
    pub reward: RewardBreakdown,
    pub terminated: bool,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub success: bool,
    /// Time at success, or the horizon for failures.
    pub time: f64,
    pub steps: u32,
    pub total_reward: f64,
}

/// Resets `env` and runs `policy` until the episode ends. Each step is
/// written to `log` as one JSON line when given.
pub fn run_episode(env: &mut NavEnv, policy: &mut dyn Policy, mut log: Option<&mut dyn Write>) -> Result<EpisodeSummary, EnvError> {
    let mut obs = env.reset()?;
    let dt = env.config().dt();
    let horizon = env.config().horizon_s;
    let mut total_reward = 0.0;
    loop {
        let state = env.state().expect("reset sets state").clone();
        let action = policy.act(&obs, &state);
        let out = env.step(action)?;
        total_reward += out.reward.total;
        let s = env.state().expect("state persists");
        if let Some(w) = log.as_deref_mut() {
            let record = StepRecord {
                t: s.steps as f64 * dt,
                pose: [s.position.x, s.position.y, s.position.z, s.yaw],
                action,
                v_cmd: s.last_command,
                reward: out.reward,
                terminated: out.terminated,
                truncated: out.truncated,
            };
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| EnvError::Config(format!("episode log: {e}")))?;
        }
        if out.terminated || out.truncated {
            return Ok(EpisodeSummary {
                success: out.terminated,
                time: if out.terminated { s.steps as f64 * dt } else { horizon },
                steps: s.steps,
                total_reward,
            });
        }
        obs = out.observation;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutSummary {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean reaching time with failures counted at the horizon.
    pub average_reaching_time: f64,
}

pub fn summarize(episodes: &[EpisodeSummary], horizon: f64) -> RolloutSummary {
    let n = episodes.len();
    let successes = episodes.iter().filter(|e| e.success).count();
    let time: f64 = episodes.iter().map(|e| if e.success { e.time } else { horizon }).sum();
    RolloutSummary {
        episodes: n,
        successes,
        success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
        average_reaching_time: if n == 0 { 0.0 } else { time / n as f64 },
    }
}
