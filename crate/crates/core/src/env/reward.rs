//! Task and regularization rewards for goal reaching.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub reach_goal: f64,
    pub goal_dis: f64,
    pub goal_dis_z: f64,
    pub goal_heading: f64,
    pub stop_at_goal: f64,
    pub track_lin_vel: f64,
    pub track_ang_vel: f64,
    pub action_l2: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            reach_goal: 1.0,
            goal_dis: 1.0,
            goal_dis_z: 1.0,
            goal_heading: 1.0,
            stop_at_goal: 0.01,
            track_lin_vel: 0.01,
            track_ang_vel: 0.01,
            action_l2: 0.01,
        }
    }
}

/// Unweighted terms of one step plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reach_goal: f64,
    pub goal_dis: f64,
    pub goal_dis_z: f64,
    pub goal_heading: f64,
    pub stop_at_goal: f64,
    pub track_lin_vel: f64,
    pub track_ang_vel: f64,
    pub action_l2: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn weighted(mut self, w: &RewardWeights) -> Self {
        self.total = w.reach_goal * self.reach_goal
            + w.goal_dis * self.goal_dis
            + w.goal_dis_z * self.goal_dis_z
            + w.goal_heading * self.goal_heading
            + w.stop_at_goal * self.stop_at_goal
            + w.track_lin_vel * self.track_lin_vel
            + w.track_ang_vel * self.track_ang_vel
            + w.action_l2 * self.action_l2;
        self
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// `-|wrap(psi_robot - psi_goal)|`.
pub fn reward_heading(psi_robot: f64, psi_goal: f64) -> f64 {
    -wrap_angle(psi_robot - psi_goal).abs()
}

/// Decrease of a cached distance since the previous step.
pub fn reward_progress(previous: f64, current: f64) -> f64 {
    previous - current
}

/// `r_max` when inside the success radius.
pub fn reward_reach(distance: f64, radius: f64, r_max: f64) -> f64 {
    if distance <= radius {
        r_max
    } else {
        0.0
    }
}

/// Penalizes commanded speed near the goal (within twice the radius).
pub fn reward_stop_at_goal(distance: f64, radius: f64, v_cmd: &[f64; 3]) -> f64 {
    if distance <= 2.0 * radius {
        -(v_cmd[0] * v_cmd[0] + v_cmd[1] * v_cmd[1] + v_cmd[2] * v_cmd[2]).sqrt()
    } else {
        0.0
    }
}

pub fn reward_action_l2(raw: &[f64; 3]) -> f64 {
    -(raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heading_examples() {
        assert_eq!(reward_heading(0.7, 0.7), 0.0);
        assert!((reward_heading(PI / 2.0, 0.0) + PI / 2.0).abs() < 1e-15);
        let r = reward_heading(3.0, -3.0);
        assert!((r + (2.0 * PI - 6.0)).abs() < 1e-12);
        assert!((r + 0.2832).abs() < 1e-4);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        for k in -20..20 {
            let w = wrap_angle(0.37 * k as f64);
            assert!(w > -PI && w <= PI);
        }
    }

    #[test]
    fn total_is_weighted_sum() {
        let b = RewardBreakdown {
            reach_goal: 10.0,
            goal_dis: 0.1,
            goal_dis_z: -0.05,
            goal_heading: -0.3,
            stop_at_goal: -1.0,
            track_lin_vel: -0.2,
            track_ang_vel: 0.0,
            action_l2: -2.0,
            total: 0.0,
        }
        .weighted(&RewardWeights::default());
        let expected = 10.0 + 0.1 - 0.05 - 0.3 + 0.01 * (-1.0 - 0.2 - 2.0);
        assert!((b.total - expected).abs() < 1e-12);
    }

    #[test]
    fn reach_and_stop_thresholds() {
        assert_eq!(reward_reach(0.25, 0.25, 10.0), 10.0);
        assert_eq!(reward_reach(0.2500001, 0.25, 10.0), 0.0);
        assert_eq!(reward_stop_at_goal(0.6, 0.25, &[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(reward_stop_at_goal(0.5, 0.25, &[0.6, 0.8, 0.0]), -1.0);
        assert_eq!(reward_action_l2(&[1.0, -2.0, 0.5]), -5.25);
    }
}
