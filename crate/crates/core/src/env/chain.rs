use rand::Rng;

use super::{Action, ActionSpace, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::oracle::TabularMdp;
use crate::rng::RngStream;

/// A small tabular MDP exposed through the environment interface.
///
/// States are one-hot vectors of length `n_states`; episodes never terminate
/// early and run for exactly the MDP's horizon.
#[derive(Clone, Debug)]
pub struct ChainMdp {
    mdp: TabularMdp,
    spec: EnvSpec,
}

impl ChainMdp {
    pub fn new(mdp: TabularMdp) -> Self {
        let lo = mdp.reward.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mdp.reward.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spec = EnvSpec {
            state_dim: mdp.n_states,
            action_space: ActionSpace::Discrete(mdp.n_actions),
            horizon: mdp.horizon,
            reward_bounds: (lo, hi),
        };
        Self { mdp, spec }
    }

    /// The default 3-state, 2-action, horizon-3 chain with seed-fixed tables.
    pub fn seeded(seed: u64) -> Self {
        Self::new(TabularMdp::random(3, 2, 3, 0.99, seed))
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state_index(&self, state: &[f64]) -> Result<usize> {
        if state.len() != self.mdp.n_states {
            return Err(Error::DimensionMismatch { expected: self.mdp.n_states, found: state.len() });
        }
        state
            .iter()
            .position(|&v| v == 1.0)
            .filter(|_| state.iter().filter(|&&v| v != 0.0).count() == 1)
            .ok_or_else(|| Error::InvalidConfig(format!("chain state is not one-hot: {state:?}")))
    }
}

fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair below 1; fall back to the last
    // outcome with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut RngStream) -> Vec<f64> {
        self.mdp.one_hot(sample_categorical(&self.mdp.mu, rng))
    }

    fn step(&self, state: &[f64], action: &Action, rng: &mut RngStream) -> Result<StepResult> {
        let s = self.state_index(state)?;
        let a = match action {
            Action::Discrete(a) if *a < self.mdp.n_actions => *a,
            other => return Err(Error::InvalidAction(format!("chain expects Discrete(< {}), got {other:?}", self.mdp.n_actions))),
        };
        let next = sample_categorical(self.mdp.transition_row(s, a), rng);
        Ok(StepResult {
            next_state: self.mdp.one_hot(next),
            reward: self.mdp.reward_at(s, a),
            terminal: false,
        })
    }

    fn tabular(&self) -> Option<&TabularMdp> {
        Some(&self.mdp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn point_mass_chain() -> ChainMdp {
        // 0 -a0-> 1 -a0-> 2, action 1 stays put; deterministic everywhere.
        let mut t = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            t[(s * 2) * 3 + (s + 1).min(2)] = 1.0;
            t[(s * 2 + 1) * 3 + s] = 1.0;
        }
        let mdp = TabularMdp::new(3, 2, t, vec![0.0, 1.0, 0.5, 0.0, 2.0, 0.0], vec![1.0, 0.0, 0.0], 0.99, 3).unwrap();
        ChainMdp::new(mdp)
    }

    #[test]
    fn point_mass_reset() {
        let env = point_mass_chain();
        for seed in 0..20 {
            let s = env.reset(&mut rng::stream(seed, &[]));
            assert_eq!(env.state_index(&s).unwrap(), 0);
        }
    }

    #[test]
    fn deterministic_row_is_followed() {
        let env = point_mass_chain();
        for seed in 0..20 {
            let mut rng = rng::stream(seed, &[]);
            let r = env.step(&env.mdp().one_hot(1), &Action::Discrete(0), &mut rng).unwrap();
            assert_eq!(env.state_index(&r.next_state).unwrap(), 2);
            assert_eq!(r.reward, 0.5);
            assert!(!r.terminal);
        }
    }

    #[test]
    fn rejects_out_of_range_actions() {
        let env = point_mass_chain();
        let mut rng = rng::stream(0, &[]);
        assert!(matches!(
            env.step(&env.mdp().one_hot(0), &Action::Discrete(2), &mut rng),
            Err(Error::InvalidAction(_))
        ));
    }

    #[test]
    fn seeded_chain_is_reproducible() {
        assert_eq!(ChainMdp::seeded(4).mdp(), ChainMdp::seeded(4).mdp());
        assert_ne!(ChainMdp::seeded(4).mdp(), ChainMdp::seeded(5).mdp());
    }
}
