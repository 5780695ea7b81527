use rand::Rng;

use super::{check_state, Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Classic cart-pole balancing with explicit Euler integration.
///
/// State is `[x, ẋ, θ, θ̇]`. Action 0 pushes left, action 1 pushes right.
/// Every step, including the terminating one, pays reward 1.
#[derive(Clone, Debug)]
pub struct CartPole {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    spec: EnvSpec,
}

impl CartPole {
    pub fn with_horizon(horizon: usize) -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            spec: EnvSpec {
                state_dim: 4,
                action_space: ActionSpace::Discrete(2),
                horizon,
                reward_bounds: (1.0, 1.0),
            },
        }
    }

    /// One Euler step under a signed horizontal force.
    pub fn integrate(&self, state: &[f64], force: f64) -> [f64; 4] {
        let (x, x_dot, theta, theta_dot) = (state[0], state[1], state[2], state[3]);
        let total_mass = self.cart_mass + self.pole_mass;
        let polemass_length = self.pole_mass * self.half_length;
        let (sin, cos) = theta.sin_cos();

        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        [
            x + self.tau * x_dot,
            x_dot + self.tau * x_acc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * theta_acc,
        ]
    }

    pub fn is_terminal(&self, state: &[f64]) -> bool {
        state[0].abs() > self.x_threshold || state[2].abs() > self.theta_threshold
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::with_horizon(500)
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-0.05..=0.05)).collect()
    }

    fn step(&self, state: &[f64], action: &Action, _rng: &mut RngStream) -> Result<StepResult> {
        check_state(state, 4)?;
        let force = match action {
            Action::Discrete(0) => -self.force_mag,
            Action::Discrete(1) => self.force_mag,
            other => return Err(Error::InvalidAction(format!("cartpole expects Discrete(0|1), got {other:?}"))),
        };
        let next = self.integrate(state, force);
        Ok(StepResult {
            terminal: self.is_terminal(&next),
            next_state: next.to_vec(),
            reward: 1.0,
        })
    }
}
