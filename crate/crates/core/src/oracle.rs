//! Exact quantities on small tabular MDPs by exhaustive trajectory
//! enumeration. These are the ground truth for estimator tests.

use rand::Rng;

use crate::env::{Action, Trajectory};
use crate::error::{ensure_dim, Error, Result};
use crate::estimators::{accumulate_estimate, trajectory_return, weight_from_log_ratio, Baseline, EstimatorConfig};
use crate::params::ParamVector;
use crate::policy::{Head, PolicyArch};
use crate::rng;

/// Maximum number of candidate trajectories `(|S|·|A|)^H` we will enumerate.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// Finite-horizon MDP `(S, A, T, r, μ, γ, H)` with explicit tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[(s·|A| + a)·|S| + s']`
    pub transition: Vec<f64>,
    /// `reward[s·|A| + a]`
    pub reward: Vec<f64>,
    pub mu: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&x| x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        mu: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::InvalidMdp("sizes and horizon must be positive".into()));
        }
        ensure_dim(n_states * n_actions * n_states, transition.len())?;
        ensure_dim(n_states * n_actions, reward.len())?;
        ensure_dim(n_states, mu.len())?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1]")));
        }
        if !transition.chunks(n_states).all(is_distribution) {
            return Err(Error::InvalidMdp("transition rows must be distributions".into()));
        }
        if !is_distribution(&mu) {
            return Err(Error::InvalidMdp("initial distribution must sum to 1".into()));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("rewards must be finite".into()));
        }
        Ok(Self { n_states, n_actions, transition, reward, mu, gamma, horizon })
    }

    /// Random dense MDP: transition rows and `μ` are normalized uniforms,
    /// rewards are uniform on `[0, 1)`.
    pub fn random(n_states: usize, n_actions: usize, horizon: usize, gamma: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[rng::MDP]);
        let mut draw_distribution = |n: usize| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect::<Vec<_>>()
        };
        let transition = (0..n_states * n_actions).flat_map(|_| draw_distribution(n_states)).collect();
        let mu = draw_distribution(n_states);
        let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        Self::new(n_states, n_actions, transition, reward, mu, gamma, horizon).expect("generated MDP is valid")
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward_at(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    /// Upper bound on the number of trajectories, `(|S|·|A|)^H`.
    pub fn enumeration_size(&self) -> u128 {
        (self.n_states as u128 * self.n_actions as u128)
            .checked_pow(self.horizon as u32)
            .unwrap_or(u128::MAX)
    }
}

/// Every trajectory with positive probability under `params`, with
/// `p(τ|θ) = μ(s₁) ∏_h π_θ(a_h|s_h) ∏_{h<H} T(s_{h+1}|s_h,a_h)`.
pub fn enumerate_trajectories(mdp: &TabularMdp, arch: &PolicyArch, params: &[f64]) -> Result<Vec<(Trajectory, f64)>> {
    let count = mdp.enumeration_size();
    if count > ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge { count, cap: ENUMERATION_CAP });
    }
    if arch.head() != Head::Categorical(mdp.n_actions) || arch.input_dim() != mdp.n_states {
        return Err(Error::InvalidArch(format!(
            "oracle needs a categorical policy over {} actions with {} inputs",
            mdp.n_actions, mdp.n_states
        )));
    }
    ensure_dim(arch.param_count(), params.len())?;

    // Action log-probabilities per state, computed once.
    let logps: Vec<Vec<f64>> = (0..mdp.n_states)
        .map(|s| {
            let state = mdp.one_hot(s);
            (0..mdp.n_actions).map(|a| arch.log_prob(params, &state, &Action::Discrete(a))).collect()
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    let mut prefix = Trajectory::default();
    for s in 0..mdp.n_states {
        if mdp.mu[s] > 0.0 {
            extend(mdp, &logps, s, mdp.mu[s], &mut prefix, &mut out);
        }
    }
    Ok(out)
}

fn extend(
    mdp: &TabularMdp,
    logps: &[Vec<f64>],
    s: usize,
    prob: f64,
    prefix: &mut Trajectory,
    out: &mut Vec<(Trajectory, f64)>,
) {
    for a in 0..mdp.n_actions {
        let lp = logps[s][a];
        let p = prob * lp.exp();
        if p == 0.0 {
            continue;
        }
        prefix.push(mdp.one_hot(s), Action::Discrete(a), mdp.reward_at(s, a), lp);
        if prefix.len() == mdp.horizon {
            out.push((prefix.clone(), p));
        } else {
            for (next, &t) in mdp.transition_row(s, a).iter().enumerate() {
                if t > 0.0 {
                    extend(mdp, logps, next, p * t, prefix, out);
                }
            }
        }
        prefix.states.pop();
        prefix.actions.pop();
        prefix.rewards.pop();
        prefix.behavior_logps.pop();
    }
}

/// `J(θ) = -E_{τ∼p(·|θ)}[r(τ)]`.
pub fn exact_j(mdp: &TabularMdp, arch: &PolicyArch, params: &[f64]) -> Result<f64> {
    Ok(-enumerate_trajectories(mdp, arch, params)?
        .iter()
        .map(|(t, p)| p * trajectory_return(t, mdp.gamma))
        .sum::<f64>())
}

/// `∇J(θ) = -E[(Σ_h ∇log π(a_h|s_h)) · r(τ)]`, summed exactly.
pub fn exact_grad_j(mdp: &TabularMdp, arch: &PolicyArch, params: &[f64]) -> Result<ParamVector> {
    let mut grad = ParamVector::zeros(arch.param_count());
    for (t, p) in enumerate_trajectories(mdp, arch, params)? {
        let coeff = -p * trajectory_return(&t, mdp.gamma);
        for (s, a) in t.states.iter().zip(&t.actions) {
            arch.accumulate_grad_log_prob(params, s, a, coeff, &mut grad)?;
        }
    }
    Ok(grad)
}

/// `Σ_τ p(τ|θ_sample) · [w(θ_sample, θ_eval; τ)] · g(θ_eval; τ)`.
///
/// Unweighted with `θ_eval = θ_sample` this is the estimator's mean; weighted
/// with any pair it reproduces `∇J(θ_eval)` for an unbiased estimator.
pub fn exact_estimator_mean(
    mdp: &TabularMdp,
    arch: &PolicyArch,
    params_sample: &[f64],
    params_eval: &[f64],
    cfg: &EstimatorConfig,
    baseline: &Baseline,
    weighted: bool,
) -> Result<ParamVector> {
    let mut mean = ParamVector::zeros(arch.param_count());
    let mut g = ParamVector::zeros(arch.param_count());
    for (t, p) in enumerate_trajectories(mdp, arch, params_sample)? {
        g.iter_mut().for_each(|v| *v = 0.0);
        let log_eval = accumulate_estimate(arch, params_eval, &t, cfg, baseline, 1.0, &mut g)?;
        let w = if weighted {
            let log_sample = arch.traj_log_prob(params_sample, &t)?;
            weight_from_log_ratio(log_eval - log_sample, cfg.weight_clip)?
        } else {
            1.0
        };
        mean.axpy(p * w, &g);
    }
    Ok(mean)
}
