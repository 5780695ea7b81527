//! Environments: a functional interface over (state, action) plus the
//! built-in CartPole, Pendulum and tabular chain.
//!
//! Environments hold no mutable episode state. `reset` and `step` are pure
//! functions of their inputs and the random stream, so an instance can be
//! shared by any number of agents.

mod cartpole;
mod chain;
mod pendulum;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cartpole::CartPole;
pub use chain::ChainMdp;
pub use pendulum::Pendulum;

use crate::error::{Error, Result};
use crate::oracle::TabularMdp;
use crate::policy::PolicyArch;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { lower: Vec<f64>, upper: Vec<f64> },
}

impl ActionSpace {
    fn validate(&self) -> Result<()> {
        match self {
            ActionSpace::Discrete(n) if *n < 2 => {
                Err(Error::InvalidAction(format!("discrete space needs n >= 2, got {n}")))
            }
            ActionSpace::Continuous { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidAction("continuous bounds must be nonempty and equal length".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return Err(Error::InvalidAction("continuous bounds need lower < upper".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub reward_bounds: (f64, f64),
}

impl EnvSpec {
    pub fn new(
        state_dim: usize,
        action_space: ActionSpace,
        horizon: usize,
        reward_bounds: (f64, f64),
    ) -> Result<Self> {
        action_space.validate()?;
        if state_dim == 0 {
            return Err(Error::InvalidConfig("state_dim must be positive".into()));
        }
        Ok(Self { state_dim, action_space, horizon, reward_bounds })
    }
}

/// An action as produced by a policy.
///
/// For continuous heads the stored vector is the pre-squash Gaussian sample;
/// [`to_env_action`] maps it into the environment's box.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Maps a policy action into the environment's action space: `tanh` followed
/// by an affine map onto `[lower, upper]`. Discrete actions pass through.
pub fn to_env_action(space: &ActionSpace, action: &Action) -> Action {
    match (space, action) {
        (ActionSpace::Continuous { lower, upper }, Action::Continuous(latent)) => Action::Continuous(
            latent
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(u, (lo, hi))| lo + 0.5 * (u.tanh() + 1.0) * (hi - lo))
                .collect(),
        ),
        _ => action.clone(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Draws an initial state from the environment's initial distribution.
    fn reset(&self, rng: &mut RngStream) -> Vec<f64>;

    /// Advances one step. Continuous actions are physical (already squashed)
    /// and are clipped to the action bounds.
    fn step(&self, state: &[f64], action: &Action, rng: &mut RngStream) -> Result<StepResult>;

    /// Exact tables, when the environment is a small tabular MDP.
    fn tabular(&self) -> Option<&TabularMdp> {
        None
    }
}

/// Sampled episode. All per-step vectors have the same length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// `log π(a_h | s_h)` under the parameters that generated the episode.
    pub behavior_logps: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, state: Vec<f64>, action: Action, reward: f64, logp: f64) {
        self.states.push(state);
        self.actions.push(action);
        self.rewards.push(reward);
        self.behavior_logps.push(logp);
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Rolls out the policy for at most `horizon` steps, stopping early on a
/// terminal transition.
pub fn rollout<E: Environment + ?Sized>(
    env: &E,
    arch: &PolicyArch,
    params: &[f64],
    horizon: usize,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    if horizon == 0 {
        return Ok(traj);
    }
    let space = &env.spec().action_space;
    let mut state = env.reset(rng);
    for _ in 0..horizon {
        let (action, logp) = arch.sample_action(params, &state, rng)?;
        let result = env.step(&state, &to_env_action(space, &action), rng)?;
        let terminal = result.terminal;
        traj.push(state, action, result.reward, logp);
        state = result.next_state;
        if terminal {
            break;
        }
    }
    Ok(traj)
}

/// Names accepted in run configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    CartPole,
    Pendulum,
    Chain,
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(EnvName::CartPole),
            "pendulum" => Ok(EnvName::Pendulum),
            "chain" => Ok(EnvName::Chain),
            other => Err(Error::InvalidConfig(format!("unknown environment `{other}`"))),
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvName::CartPole => "cartpole",
            EnvName::Pendulum => "pendulum",
            EnvName::Chain => "chain",
        })
    }
}

/// One of the built-in environments.
#[derive(Clone, Debug)]
pub enum BuiltinEnv {
    CartPole(CartPole),
    Pendulum(Pendulum),
    Chain(ChainMdp),
}

impl BuiltinEnv {
    /// Builds the default instance for `name`. `seed` only matters for the
    /// chain, whose tables are generated from it.
    pub fn from_name(name: EnvName, seed: u64) -> Self {
        match name {
            EnvName::CartPole => BuiltinEnv::CartPole(CartPole::default()),
            EnvName::Pendulum => BuiltinEnv::Pendulum(Pendulum::default()),
            EnvName::Chain => BuiltinEnv::Chain(ChainMdp::seeded(seed)),
        }
    }

    pub fn as_chain(&self) -> Option<&ChainMdp> {
        match self {
            BuiltinEnv::Chain(c) => Some(c),
            _ => None,
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            BuiltinEnv::CartPole(e) => e,
            BuiltinEnv::Pendulum(e) => e,
            BuiltinEnv::Chain(e) => e,
        }
    }
}

impl Environment for BuiltinEnv {
    fn spec(&self) -> &EnvSpec {
        self.inner().spec()
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        self.inner().reset(rng)
    }

    fn step(&self, state: &[f64], action: &Action, rng: &mut RngStream) -> Result<StepResult> {
        self.inner().step(state, action, rng)
    }

    fn tabular(&self) -> Option<&TabularMdp> {
        self.inner().tabular()
    }
}

pub(crate) fn check_state(state: &[f64], dim: usize) -> Result<()> {
    crate::error::ensure_dim(dim, state.len())?;
    if state.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteOutput("environment state".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Activation, Head};
    use crate::rng;

    fn arch_for(env: &BuiltinEnv) -> PolicyArch {
        let spec = env.spec();
        let head = match &spec.action_space {
            ActionSpace::Discrete(n) => Head::Categorical(*n),
            ActionSpace::Continuous { lower, .. } => Head::TanhGaussian(lower.len()),
        };
        PolicyArch::new(spec.state_dim, 16, head, Activation::Relu).unwrap()
    }

    #[test]
    fn random_steps_stay_in_bounds() {
        for name in [EnvName::CartPole, EnvName::Pendulum, EnvName::Chain] {
            let env = BuiltinEnv::from_name(name, 3);
            let arch = arch_for(&env);
            let mut rng = rng::stream(11, &[name as u64]);
            let params = arch.init_params(&mut rng);
            let (lo, hi) = env.spec().reward_bounds;
            let mut steps = 0;
            while steps < 10_000 {
                let traj = rollout(&env, &arch, &params, env.spec().horizon, &mut rng).unwrap();
                assert!(traj.len() <= env.spec().horizon);
                for (s, r) in traj.states.iter().zip(&traj.rewards) {
                    assert!(s.iter().all(|v| v.is_finite()));
                    assert!(*r >= lo && *r <= hi, "{name}: reward {r} outside [{lo}, {hi}]");
                }
                if name == EnvName::CartPole {
                    assert_eq!(traj.total_reward(), traj.len() as f64);
                }
                steps += traj.len().max(1);
            }
        }
    }

    #[test]
    fn zero_horizon_rollout_is_empty() {
        let env = BuiltinEnv::from_name(EnvName::CartPole, 0);
        let arch = arch_for(&env);
        let params = vec![0.0; arch.param_count()];
        let traj = rollout(&env, &arch, &params, 0, &mut rng::stream(0, &[])).unwrap();
        assert!(traj.is_empty());
    }

    #[test]
    fn rollouts_replay_from_seed() {
        let env = BuiltinEnv::from_name(EnvName::Pendulum, 0);
        let arch = arch_for(&env);
        let params = arch.init_params(&mut rng::stream(5, &[]));
        let a = rollout(&env, &arch, &params, 200, &mut rng::stream(9, &[])).unwrap();
        let b = rollout(&env, &arch, &params, 200, &mut rng::stream(9, &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn squash_maps_into_box() {
        let space = ActionSpace::Continuous { lower: vec![-2.0], upper: vec![2.0] };
        let Action::Continuous(a) = to_env_action(&space, &Action::Continuous(vec![0.0])) else {
            unreachable!()
        };
        assert_eq!(a, vec![0.0]);
        let Action::Continuous(a) = to_env_action(&space, &Action::Continuous(vec![40.0])) else {
            unreachable!()
        };
        assert!(a[0] <= 2.0 && a[0] > 1.999);
    }

    #[test]
    fn env_names_round_trip() {
        for name in [EnvName::CartPole, EnvName::Pendulum, EnvName::Chain] {
            assert_eq!(name.to_string().parse::<EnvName>().unwrap(), name);
        }
        assert!("pong".parse::<EnvName>().is_err());
    }
}
