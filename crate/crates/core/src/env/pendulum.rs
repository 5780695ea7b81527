use std::f64::consts::PI;

use rand::Rng;

use super::{check_state, Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Torque-limited inverted pendulum.
///
/// The angle is measured from upright (θ = 0 is the inverted equilibrium).
/// The state vector is the observation `[cos θ, sin θ, θ̇]`; θ is recovered
/// with `atan2`, which also wraps it into `[-π, π]`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    spec: EnvSpec,
}

impl Pendulum {
    pub fn with_horizon(horizon: usize) -> Self {
        let max_torque = 2.0;
        let max_speed = 8.0;
        let worst = PI * PI + 0.1 * max_speed * max_speed + 0.001 * max_torque * max_torque;
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_torque,
            max_speed,
            spec: EnvSpec {
                state_dim: 3,
                action_space: ActionSpace::Continuous { lower: vec![-max_torque], upper: vec![max_torque] },
                horizon,
                reward_bounds: (-worst, 0.0),
            },
        }
    }

    pub fn observe(theta: f64, theta_dot: f64) -> Vec<f64> {
        let (sin, cos) = theta.sin_cos();
        vec![cos, sin, theta_dot]
    }

    /// Angle in `[-π, π]` and angular velocity.
    pub fn angle_and_velocity(state: &[f64]) -> (f64, f64) {
        (state[1].atan2(state[0]), state[2])
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::with_horizon(200)
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        let theta = rng.random_range(-PI..=PI);
        let theta_dot = rng.random_range(-1.0..=1.0);
        Self::observe(theta, theta_dot)
    }

    fn step(&self, state: &[f64], action: &Action, _rng: &mut RngStream) -> Result<StepResult> {
        check_state(state, 3)?;
        let torque = match action {
            Action::Continuous(u) if u.len() == 1 && u[0].is_finite() => {
                u[0].clamp(-self.max_torque, self.max_torque)
            }
            other => return Err(Error::InvalidAction(format!("pendulum expects one finite torque, got {other:?}"))),
        };
        let (theta, theta_dot) = Self::angle_and_velocity(state);
        let cost = theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque;

        let accel = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * torque;
        let new_theta_dot = (theta_dot + accel * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_theta = theta + new_theta_dot * self.dt;

        Ok(StepResult {
            next_state: Self::observe(new_theta, new_theta_dot),
            reward: -cost,
            terminal: false,
        })
    }
}
