//! Two-layer MLP policies over flat parameter vectors.
//!
//! Parameter layout, in order:
//!
//! | block  | shape                | meaning                          |
//! |--------|----------------------|----------------------------------|
//! | `W1`   | hidden × input       | row-major, row `j` feeds unit `j`|
//! | `b1`   | hidden               |                                  |
//! | `W2`   | out × hidden         | row-major                        |
//! | `b2`   | out                  |                                  |
//! | `logσ` | dim (Gaussian only)  | state-independent log-std        |
//!
//! `out` is the number of actions for a categorical head and the action
//! dimension for a tanh-Gaussian head, whose outputs are the pre-squash means.
//! The Gaussian log-density is evaluated at the pre-squash sample `u` and
//! includes the `tanh` change of variables, so it is the density of the
//! squashed action `tanh(u)`.
//!
//! Gradients are hand-written reverse mode over this fixed topology.

use std::f64::consts::{LN_2, PI};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Trajectory};
use crate::error::{ensure_dim, Error, Result};
use crate::params::ParamVector;
use crate::rng::RngStream;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidArch(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Categorical(usize),
    TanhGaussian(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyArch {
    input_dim: usize,
    hidden_units: usize,
    head: Head,
    activation: Activation,
}

struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 - tanh²(x))` without cancellation near saturation.
pub fn log_one_minus_tanh_sq(x: f64) -> f64 {
    2.0 * (LN_2 - x - softplus(-2.0 * x))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl PolicyArch {
    pub fn new(input_dim: usize, hidden_units: usize, head: Head, activation: Activation) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArch("input_dim must be positive".into()));
        }
        if hidden_units == 0 {
            return Err(Error::InvalidArch("hidden_units must be positive".into()));
        }
        match head {
            Head::Categorical(n) if n < 2 => {
                return Err(Error::InvalidArch(format!("categorical head needs at least 2 actions, got {n}")))
            }
            Head::TanhGaussian(0) => return Err(Error::InvalidArch("gaussian head needs dim >= 1".into())),
            _ => {}
        }
        Ok(Self { input_dim, hidden_units, head, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_units
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn out_dim(&self) -> usize {
        match self.head {
            Head::Categorical(n) => n,
            Head::TanhGaussian(d) => d,
        }
    }

    // Offsets of b1, W2, b2 and log-std.
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let b1 = self.hidden_units * self.input_dim;
        let w2 = b1 + self.hidden_units;
        let b2 = w2 + self.out_dim() * self.hidden_units;
        let log_std = b2 + self.out_dim();
        (b1, w2, b2, log_std)
    }

    pub fn param_count(&self) -> usize {
        let (_, _, _, log_std) = self.offsets();
        match self.head {
            Head::Categorical(_) => log_std,
            Head::TanhGaussian(d) => log_std + d,
        }
    }

    /// Weights uniform in `±1/√fan_in`, biases and log-std zero.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        let (b1, w2, b2, _) = self.offsets();
        let mut p = ParamVector::zeros(self.param_count());
        let bound1 = 1.0 / (self.input_dim as f64).sqrt();
        for w in &mut p[..b1] {
            *w = rng.random_range(-bound1..bound1);
        }
        let bound2 = 1.0 / (self.hidden_units as f64).sqrt();
        for w in &mut p[w2..b2] {
            *w = rng.random_range(-bound2..bound2);
        }
        p
    }

    fn check(&self, params: &[f64], state: &[f64]) -> Result<()> {
        ensure_dim(self.param_count(), params.len())?;
        ensure_dim(self.input_dim, state.len())
    }

    fn log_std(&self, params: &[f64], k: usize) -> f64 {
        params[self.offsets().3 + k].clamp(LOG_STD_MIN, LOG_STD_MAX)
    }

    fn forward(&self, params: &[f64], state: &[f64]) -> Result<Forward> {
        let (b1, w2, b2, _) = self.offsets();
        let (ni, nh, no) = (self.input_dim, self.hidden_units, self.out_dim());
        let mut pre = Vec::with_capacity(nh);
        let mut hidden = Vec::with_capacity(nh);
        for j in 0..nh {
            let row = &params[j * ni..(j + 1) * ni];
            let z = params[b1 + j] + row.iter().zip(state).map(|(w, x)| w * x).sum::<f64>();
            pre.push(z);
            hidden.push(match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::Tanh => z.tanh(),
            });
        }
        let mut out = Vec::with_capacity(no);
        for k in 0..no {
            let row = &params[w2 + k * nh..w2 + (k + 1) * nh];
            out.push(params[b2 + k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>());
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput(format!("policy outputs {out:?}")));
        }
        Ok(Forward { pre, hidden, out })
    }

    fn check_action(&self, action: &Action) -> Result<()> {
        match (self.head, action) {
            (Head::Categorical(n), Action::Discrete(a)) if *a < n => Ok(()),
            (Head::TanhGaussian(d), Action::Continuous(u)) if u.len() == d && u.iter().all(|v| v.is_finite()) => Ok(()),
            _ => Err(Error::InvalidAction(format!("{action:?} does not match head {:?}", self.head))),
        }
    }

    fn log_prob_from(&self, params: &[f64], fwd: &Forward, action: &Action) -> f64 {
        match action {
            Action::Discrete(a) => fwd.out[*a] - log_sum_exp(&fwd.out),
            Action::Continuous(u) => u
                .iter()
                .enumerate()
                .map(|(k, &uk)| {
                    let log_std = self.log_std(params, k);
                    let z = (uk - fwd.out[k]) * (-log_std).exp();
                    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln() - log_one_minus_tanh_sq(uk)
                })
                .sum(),
        }
    }

    /// Draws an action and returns it with its log-probability.
    pub fn sample_action(&self, params: &[f64], state: &[f64], rng: &mut RngStream) -> Result<(Action, f64)> {
        self.check(params, state)?;
        let fwd = self.forward(params, state)?;
        let action = match self.head {
            Head::Categorical(n) => {
                let lse = log_sum_exp(&fwd.out);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = n - 1;
                for (a, o) in fwd.out.iter().enumerate() {
                    acc += (o - lse).exp();
                    if u < acc {
                        chosen = a;
                        break;
                    }
                }
                Action::Discrete(chosen)
            }
            Head::TanhGaussian(d) => Action::Continuous(
                (0..d)
                    .map(|k| {
                        let eps: f64 = rng.sample(StandardNormal);
                        fwd.out[k] + self.log_std(params, k).exp() * eps
                    })
                    .collect(),
            ),
        };
        let logp = self.log_prob_from(params, &fwd, &action);
        Ok((action, logp))
    }

    pub fn log_prob(&self, params: &[f64], state: &[f64], action: &Action) -> Result<f64> {
        self.check(params, state)?;
        self.check_action(action)?;
        let fwd = self.forward(params, state)?;
        finite(self.log_prob_from(params, &fwd, action), "log_prob")
    }

    /// Action probabilities of a categorical head.
    pub fn action_probs(&self, params: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        self.check(params, state)?;
        if !matches!(self.head, Head::Categorical(_)) {
            return Err(Error::InvalidArch("action_probs needs a categorical head".into()));
        }
        let fwd = self.forward(params, state)?;
        let lse = log_sum_exp(&fwd.out);
        Ok(fwd.out.iter().map(|o| (o - lse).exp()).collect())
    }

    /// Adds `scale · ∇_θ log π(action | state)` into `grad` and returns the
    /// log-probability. This is the single backward pass every estimator uses.
    pub fn accumulate_grad_log_prob(
        &self,
        params: &[f64],
        state: &[f64],
        action: &Action,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check(params, state)?;
        self.check_action(action)?;
        ensure_dim(self.param_count(), grad.len())?;
        let fwd = self.forward(params, state)?;
        let logp = finite(self.log_prob_from(params, &fwd, action), "log_prob")?;
        if scale == 0.0 {
            return Ok(logp);
        }

        let (b1, w2, b2, ls) = self.offsets();
        let (ni, nh, no) = (self.input_dim, self.hidden_units, self.out_dim());

        // d logp / d out
        let mut d_out = vec![0.0; no];
        match action {
            Action::Discrete(a) => {
                let lse = log_sum_exp(&fwd.out);
                for (k, o) in fwd.out.iter().enumerate() {
                    d_out[k] = -(o - lse).exp();
                }
                d_out[*a] += 1.0;
            }
            Action::Continuous(u) => {
                for k in 0..no {
                    let raw = params[ls + k];
                    let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let inv_var = (-2.0 * log_std).exp();
                    let diff = u[k] - fwd.out[k];
                    d_out[k] = diff * inv_var;
                    if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                        grad[ls + k] += scale * (diff * diff * inv_var - 1.0);
                    }
                }
            }
        }

        let mut d_hidden = vec![0.0; nh];
        for k in 0..no {
            let g = scale * d_out[k];
            grad[b2 + k] += g;
            let row = w2 + k * nh;
            for j in 0..nh {
                grad[row + j] += g * fwd.hidden[j];
                d_hidden[j] += d_out[k] * params[row + j];
            }
        }
        for j in 0..nh {
            let d_pre = scale
                * d_hidden[j]
                * match self.activation {
                    Activation::Relu => {
                        if fwd.pre[j] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => 1.0 - fwd.hidden[j] * fwd.hidden[j],
                };
            if d_pre == 0.0 {
                continue;
            }
            grad[b1 + j] += d_pre;
            for (g, x) in grad[j * ni..(j + 1) * ni].iter_mut().zip(state) {
                *g += d_pre * x;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteOutput("policy gradient".into()));
        }
        Ok(logp)
    }

    pub fn grad_log_prob(&self, params: &[f64], state: &[f64], action: &Action) -> Result<ParamVector> {
        let mut grad = ParamVector::zeros(self.param_count());
        self.accumulate_grad_log_prob(params, state, action, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Sum of per-step log-probabilities over the trajectory's actual length.
    pub fn traj_log_prob(&self, params: &[f64], traj: &Trajectory) -> Result<f64> {
        traj.states
            .iter()
            .zip(&traj.actions)
            .try_fold(0.0, |acc, (s, a)| Ok(acc + self.log_prob(params, s, a)?))
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteOutput(format!("{what} = {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cartpole_arch() -> PolicyArch {
        PolicyArch::new(4, 16, Head::Categorical(2), Activation::Relu).unwrap()
    }

    fn pendulum_arch() -> PolicyArch {
        PolicyArch::new(3, 16, Head::TanhGaussian(1), Activation::Relu).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(cartpole_arch().param_count(), 114);
        assert_eq!(pendulum_arch().param_count(), 82);
        assert!(matches!(
            PolicyArch::new(4, 0, Head::Categorical(2), Activation::Relu),
            Err(Error::InvalidArch(_))
        ));
        assert!(PolicyArch::new(4, 8, Head::Categorical(1), Activation::Relu).is_err());
    }

    #[test]
    fn zero_params_give_uniform_categorical() {
        let arch = PolicyArch::new(4, 16, Head::Categorical(3), Activation::Relu).unwrap();
        let params = vec![0.0; arch.param_count()];
        let state = [0.3, -1.0, 0.2, 0.5];
        for seed in 0..10 {
            let (a, logp) = arch.sample_action(&params, &state, &mut rng::stream(seed, &[])).unwrap();
            assert!((logp + 3f64.ln()).abs() < 1e-15);
            assert_eq!(arch.log_prob(&params, &state, &a).unwrap(), logp);
        }
        let lp = cartpole_arch().log_prob(&vec![0.0; 114], &state, &Action::Discrete(1)).unwrap();
        assert!((lp + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_param_output_bias_gradient() {
        let arch = cartpole_arch();
        let g = arch.grad_log_prob(&vec![0.0; 114], &[0.1, 0.2, 0.3, 0.4], &Action::Discrete(0)).unwrap();
        let (_, _, b2, _) = arch.offsets();
        assert_eq!(&g[b2..b2 + 2], &[0.5, -0.5]);
    }

    #[test]
    fn raising_a_logit_raises_its_log_prob() {
        let arch = cartpole_arch();
        let mut params = arch.init_params(&mut rng::stream(1, &[]));
        let state = [0.1, 0.0, -0.2, 0.3];
        let before = arch.log_prob(&params, &state, &Action::Discrete(1)).unwrap();
        let (_, _, b2, _) = arch.offsets();
        params[b2 + 1] += 0.5;
        assert!(arch.log_prob(&params, &state, &Action::Discrete(1)).unwrap() > before);
    }

    #[test]
    fn sampling_is_seed_deterministic_and_consistent() {
        let arch = pendulum_arch();
        let params = arch.init_params(&mut rng::stream(2, &[]));
        let state = [1.0, 0.0, 0.5];
        let (a, lp) = arch.sample_action(&params, &state, &mut rng::stream(3, &[])).unwrap();
        let (b, lq) = arch.sample_action(&params, &state, &mut rng::stream(3, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(lp, lq);
        assert!((arch.log_prob(&params, &state, &a).unwrap() - lp).abs() <= 1e-12);
    }

    #[test]
    fn stable_tanh_correction() {
        for x in [-30.0, -3.0, -0.5, 0.0, 0.7, 4.0, 25.0] {
            let stable = log_one_minus_tanh_sq(x);
            if x.abs() < 5.0 {
                let naive = (1.0 - f64::tanh(x).powi(2)).ln();
                assert!((stable - naive).abs() < 1e-12);
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn categorical_score_identity() {
        let arch = PolicyArch::new(4, 8, Head::Categorical(3), Activation::Tanh).unwrap();
        for seed in 0..10 {
            let mut rng = rng::stream(seed, &[]);
            let params = arch.init_params(&mut rng);
            let state: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let probs = arch.action_probs(&params, &state).unwrap();
            let mut total = ParamVector::zeros(arch.param_count());
            for (a, p) in probs.iter().enumerate() {
                arch.accumulate_grad_log_prob(&params, &state, &Action::Discrete(a), *p, &mut total).unwrap();
            }
            assert!(total.iter().all(|g| g.abs() <= 1e-10), "{total:?}");
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let arch = cartpole_arch();
        assert!(matches!(
            arch.log_prob(&[0.0; 10], &[0.0; 4], &Action::Discrete(0)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            arch.log_prob(&[0.0; 114], &[0.0; 4], &Action::Continuous(vec![0.0])),
            Err(Error::InvalidAction(_))
        ));
        let mut params = vec![0.0; 114];
        params[100] = f64::NAN;
        assert!(matches!(
            arch.log_prob(&params, &[1.0; 4], &Action::Discrete(0)),
            Err(Error::NonFiniteOutput(_))
        ));
    }

    #[test]
    fn traj_log_prob_sums_steps() {
        let arch = cartpole_arch();
        let params = arch.init_params(&mut rng::stream(4, &[]));
        assert_eq!(arch.traj_log_prob(&params, &Trajectory::default()).unwrap(), 0.0);
        let mut traj = Trajectory::default();
        let s = vec![0.1, 0.2, -0.1, 0.0];
        let lp = arch.log_prob(&params, &s, &Action::Discrete(1)).unwrap();
        traj.push(s, Action::Discrete(1), 1.0, lp);
        assert_eq!(arch.traj_log_prob(&params, &traj).unwrap(), lp);
    }

    #[test]
    fn sampled_gaussian_log_probs_are_bounded_below() {
        let arch = pendulum_arch();
        let mut rng = rng::stream(6, &[]);
        let mut params = arch.init_params(&mut rng);
        let ls = arch.param_count() - 1;
        for raw in [-9.0, -5.0, 0.0, 2.0, 4.0] {
            params[ls] = raw;
            for _ in 0..200 {
                let state = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-8.0..8.0)];
                let (_, lp) = arch.sample_action(&params, &state, &mut rng).unwrap();
                assert!(lp.is_finite() && lp >= -40.0, "log-std {raw}: {lp}");
            }
        }
    }
}
