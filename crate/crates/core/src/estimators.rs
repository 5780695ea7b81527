//! Score-function gradient estimators of `J(θ) = -E[r(τ)]`.
//!
//! Both estimators return gradients of the *negative* discounted return, so
//! every update rule in this crate is a descent step `θ ← θ - α·u`.
//!
//! Episodes shorter than the horizon are treated as padded with zero reward:
//! the GPOMDP reward-to-go of every real step includes the baseline terms of
//! the padded tail. This keeps a constant per-step baseline unbiased even
//! when the episode length depends on the policy.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Trajectory;
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::policy::PolicyArch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Reinforce,
    Gpomdp,
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinforce" => Ok(EstimatorKind::Reinforce),
            "gpomdp" => Ok(EstimatorKind::Gpomdp),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineMode {
    Zero,
    /// Exponential moving average of batch means: `b ← decay·b + (1-decay)·mean`.
    RunningMean { decay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub baseline: BaselineMode,
    pub gamma: f64,
    pub weight_clip: Option<f64>,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind, baseline: BaselineMode, gamma: f64, weight_clip: Option<f64>) -> Result<Self> {
        let cfg = Self { kind, baseline, gamma, weight_clip };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if let BaselineMode::RunningMean { decay } = self.baseline {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::InvalidConfig(format!("baseline decay must lie in [0, 1), got {decay}")));
            }
        }
        if let Some(clip) = self.weight_clip {
            if !(clip > 0.0) {
                return Err(Error::InvalidConfig(format!("weight_clip must be positive, got {clip}")));
            }
        }
        Ok(())
    }

    /// Estimator with no baseline and no clipping.
    pub fn plain(kind: EstimatorKind, gamma: f64) -> Self {
        Self { kind, baseline: BaselineMode::Zero, gamma, weight_clip: None }
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Gpomdp,
            baseline: BaselineMode::RunningMean { decay: 0.9 },
            gamma: 0.99,
            weight_clip: None,
        }
    }
}

/// Current baseline values: a scalar for REINFORCE and one value per step
/// index for GPOMDP.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Baseline {
    pub value: f64,
    pub per_step: Vec<f64>,
    observed: bool,
}

impl Baseline {
    pub fn zero() -> Self {
        Self::default()
    }

    /// The same constant for the trajectory return and every step `< horizon`.
    pub fn constant(b: f64, horizon: usize) -> Self {
        Self { value: b, per_step: vec![b; horizon], observed: true }
    }

    /// Folds a batch of trajectories into the running means. A no-op for
    /// [`BaselineMode::Zero`]. The first batch initializes the means directly.
    pub fn observe(&mut self, mode: BaselineMode, trajs: &[Trajectory], gamma: f64, horizon: usize) {
        let BaselineMode::RunningMean { decay } = mode else { return };
        if trajs.is_empty() {
            return;
        }
        let n = trajs.len() as f64;
        let mean_return = trajs.iter().map(|t| trajectory_return(t, gamma)).sum::<f64>() / n;
        let mut mean_rewards = vec![0.0; horizon];
        for t in trajs {
            for (m, r) in mean_rewards.iter_mut().zip(&t.rewards) {
                *m += r;
            }
        }
        mean_rewards.iter_mut().for_each(|m| *m /= n);

        if self.observed {
            self.value = decay * self.value + (1.0 - decay) * mean_return;
            self.per_step.resize(horizon, 0.0);
            for (b, m) in self.per_step.iter_mut().zip(mean_rewards) {
                *b = decay * *b + (1.0 - decay) * m;
            }
        } else {
            self.value = mean_return;
            self.per_step = mean_rewards;
            self.observed = true;
        }
    }

    fn step(&self, h: usize) -> f64 {
        self.per_step.get(h).copied().unwrap_or(0.0)
    }
}

/// `Σ_h γ^h r_h` over the trajectory's actual length.
pub fn trajectory_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in &traj.rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

// Per-step multipliers c_h such that g = Σ_h c_h ∇log π(a_h|s_h).
fn step_coefficients(traj: &Trajectory, cfg: &EstimatorConfig, baseline: &Baseline) -> Vec<f64> {
    let len = traj.len();
    match cfg.kind {
        EstimatorKind::Reinforce => vec![baseline.value - trajectory_return(traj, cfg.gamma); len],
        EstimatorKind::Gpomdp => {
            let mut discounts = Vec::with_capacity(len.max(baseline.per_step.len()));
            let mut d = 1.0;
            for _ in 0..len.max(baseline.per_step.len()) {
                discounts.push(d);
                d *= cfg.gamma;
            }
            // Reward-to-go, seeded with the padded tail (zero reward minus baseline).
            let mut to_go: f64 = (len..baseline.per_step.len()).map(|h| -discounts[h] * baseline.step(h)).sum();
            let mut coeffs = vec![0.0; len];
            for h in (0..len).rev() {
                to_go += discounts[h] * (traj.rewards[h] - baseline.step(h));
                coeffs[h] = -to_go;
            }
            coeffs
        }
    }
}

/// Adds `scale · g(θ; τ)` into `out` and returns `log p_θ(actions | states)`.
pub fn accumulate_estimate(
    arch: &PolicyArch,
    params: &[f64],
    traj: &Trajectory,
    cfg: &EstimatorConfig,
    baseline: &Baseline,
    scale: f64,
    out: &mut [f64],
) -> Result<f64> {
    let coeffs = step_coefficients(traj, cfg, baseline);
    let mut logp = 0.0;
    for ((s, a), c) in traj.states.iter().zip(&traj.actions).zip(coeffs) {
        logp += arch.accumulate_grad_log_prob(params, s, a, scale * c, out)?;
    }
    Ok(logp)
}

/// The configured estimator `g(θ; τ)`.
pub fn estimate(
    arch: &PolicyArch,
    params: &[f64],
    traj: &Trajectory,
    cfg: &EstimatorConfig,
    baseline: &Baseline,
) -> Result<ParamVector> {
    let mut out = ParamVector::zeros(arch.param_count());
    accumulate_estimate(arch, params, traj, cfg, baseline, 1.0, &mut out)?;
    Ok(out)
}

/// `(b - r(τ)) · Σ_h ∇log π(a_h|s_h)`.
pub fn reinforce_grad(
    arch: &PolicyArch,
    params: &[f64],
    traj: &Trajectory,
    cfg: &EstimatorConfig,
    baseline: &Baseline,
) -> Result<ParamVector> {
    estimate(arch, params, traj, &EstimatorConfig { kind: EstimatorKind::Reinforce, ..*cfg }, baseline)
}

/// `-Σ_h (Σ_{h'≤h} ∇log π(a_h'|s_h')) · γ^h (r_h - b_h)`.
pub fn gpomdp_grad(
    arch: &PolicyArch,
    params: &[f64],
    traj: &Trajectory,
    cfg: &EstimatorConfig,
    baseline: &Baseline,
) -> Result<ParamVector> {
    estimate(arch, params, traj, &EstimatorConfig { kind: EstimatorKind::Gpomdp, ..*cfg }, baseline)
}

/// Turns a log likelihood ratio into a (possibly clipped) weight.
pub fn weight_from_log_ratio(log_ratio: f64, clip: Option<f64>) -> Result<f64> {
    let w = log_ratio.exp();
    if !w.is_finite() {
        return Err(Error::NonFiniteOutput(format!("importance weight exp({log_ratio})")));
    }
    Ok(match clip {
        Some(c) => w.min(c),
        None => w,
    })
}

/// `p(τ | θ_prev) / p(τ | θ_t)` for a trajectory sampled under `θ_t`,
/// formed in log space and exponentiated once.
pub fn importance_weight(
    arch: &PolicyArch,
    params_t: &[f64],
    params_prev: &[f64],
    traj: &Trajectory,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    let log_prev = arch.traj_log_prob(params_prev, traj)?;
    let log_t = arch.traj_log_prob(params_t, traj)?;
    weight_from_log_ratio(log_prev - log_t, cfg.weight_clip)
}

/// Mean estimator over a batch, plus each trajectory's log-probability at
/// `params`.
pub(crate) fn batch_direction_with_logps(
    arch: &PolicyArch,
    params: &[f64],
    trajs: &[Trajectory],
    cfg: &EstimatorConfig,
    baseline: &Baseline,
) -> Result<(ParamVector, Vec<f64>)> {
    if trajs.is_empty() {
        return Err(Error::InvalidConfig("batch_direction needs at least one trajectory".into()));
    }
    let mut sum = ParamVector::zeros(arch.param_count());
    let logps = trajs
        .iter()
        .map(|t| accumulate_estimate(arch, params, t, cfg, baseline, 1.0, &mut sum))
        .collect::<Result<Vec<_>>>()?;
    sum.scale(1.0 / trajs.len() as f64);
    if !sum.is_finite() {
        return Err(Error::NonFiniteOutput("batch direction".into()));
    }
    Ok((sum, logps))
}

/// `(1/D) Σ_j g(θ; τ_j)`, accumulated in list order.
pub fn batch_direction(
    arch: &PolicyArch,
    params: &[f64],
    trajs: &[Trajectory],
    cfg: &EstimatorConfig,
    baseline: &Baseline,
) -> Result<ParamVector> {
    batch_direction_with_logps(arch, params, trajs, cfg, baseline).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{rollout, Action, ChainMdp, Environment};
    use crate::oracle::{enumerate_trajectories, exact_grad_j};
    use crate::policy::{Activation, Head};
    use crate::rng;

    fn chain_setup(seed: u64) -> (ChainMdp, PolicyArch, ParamVector) {
        let chain = ChainMdp::seeded(17);
        let arch = PolicyArch::new(3, 4, Head::Categorical(2), Activation::Tanh).unwrap();
        let params = arch.init_params(&mut rng::stream(seed, &[]));
        (chain, arch, params)
    }

    fn traj_with_rewards(rewards: &[f64]) -> Trajectory {
        let mut t = Trajectory::default();
        for &r in rewards {
            t.push(vec![1.0, 0.0, 0.0], Action::Discrete(0), r, 0.0);
        }
        t
    }

    #[test]
    fn returns() {
        assert_eq!(trajectory_return(&traj_with_rewards(&[1.0, 1.0, 1.0]), 1.0), 3.0);
        assert_eq!(trajectory_return(&traj_with_rewards(&[1.0, 1.0]), 0.5), 1.5);
        let full = trajectory_return(&traj_with_rewards(&[1.0; 500]), 0.99);
        let closed = (1.0 - 0.99f64.powi(500)) / 0.01;
        assert!((full - closed).abs() < 1e-10);
    }

    #[test]
    fn reinforce_vanishes_when_baseline_equals_return() {
        let (chain, arch, params) = chain_setup(1);
        let traj = rollout(&chain, &arch, &params, 3, &mut rng::stream(2, &[])).unwrap();
        let cfg = EstimatorConfig::plain(EstimatorKind::Reinforce, 0.99);
        let b = Baseline { value: trajectory_return(&traj, 0.99), ..Baseline::zero() };
        let g = reinforce_grad(&arch, &params, &traj, &cfg, &b).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_gpomdp_equals_reinforce() {
        let (chain, arch, params) = chain_setup(3);
        let cfg = EstimatorConfig::plain(EstimatorKind::Gpomdp, 0.99);
        for seed in 0..10 {
            let traj = rollout(&chain, &arch, &params, 1, &mut rng::stream(seed, &[])).unwrap();
            let a = gpomdp_grad(&arch, &params, &traj, &cfg, &Baseline::zero()).unwrap();
            let b = reinforce_grad(&arch, &params, &traj, &cfg, &Baseline::zero()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn identical_params_give_unit_weight() {
        let (chain, arch, params) = chain_setup(4);
        let cfg = EstimatorConfig::plain(EstimatorKind::Reinforce, 0.99);
        let traj = rollout(&chain, &arch, &params, 3, &mut rng::stream(5, &[])).unwrap();
        assert_eq!(importance_weight(&arch, &params, &params, &traj, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn weights_stay_finite_up_to_large_log_ratios() {
        assert!(weight_from_log_ratio(700.0, None).unwrap().is_finite());
        assert!(weight_from_log_ratio(-700.0, None).unwrap() > 0.0);
        assert!(matches!(weight_from_log_ratio(800.0, None), Err(Error::NonFiniteOutput(_))));
        assert_eq!(weight_from_log_ratio(3.0, Some(2.0)).unwrap(), 2.0);
    }

    #[test]
    fn batch_of_copies_equals_single() {
        let (chain, arch, params) = chain_setup(6);
        let cfg = EstimatorConfig::plain(EstimatorKind::Gpomdp, 0.99);
        let traj = rollout(&chain, &arch, &params, 3, &mut rng::stream(7, &[])).unwrap();
        let one = batch_direction(&arch, &params, std::slice::from_ref(&traj), &cfg, &Baseline::zero()).unwrap();
        let single = estimate(&arch, &params, &traj, &cfg, &Baseline::zero()).unwrap();
        assert_eq!(one, single);
        let many = batch_direction(&arch, &params, &vec![traj; 7], &cfg, &Baseline::zero()).unwrap();
        assert!(many.max_abs_diff(&single) <= 1e-14 * (1.0 + single.norm()));
        assert!(batch_direction(&arch, &params, &[], &cfg, &Baseline::zero()).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(EstimatorConfig::new(EstimatorKind::Gpomdp, BaselineMode::Zero, 0.0, None).is_err());
        assert!(EstimatorConfig::new(EstimatorKind::Gpomdp, BaselineMode::RunningMean { decay: 1.0 }, 0.9, None).is_err());
        assert!(EstimatorConfig::new(EstimatorKind::Gpomdp, BaselineMode::Zero, 0.9, Some(0.0)).is_err());
        assert!(EstimatorConfig::new(EstimatorKind::Reinforce, BaselineMode::RunningMean { decay: 0.9 }, 1.0, Some(5.0)).is_ok());
    }

    #[test]
    fn running_mean_baseline() {
        let mut b = Baseline::zero();
        let mode = BaselineMode::RunningMean { decay: 0.5 };
        b.observe(mode, &[traj_with_rewards(&[1.0, 1.0]), traj_with_rewards(&[1.0])], 1.0, 3);
        assert_eq!(b.value, 1.5);
        assert_eq!(b.per_step, vec![1.0, 0.5, 0.0]);
        b.observe(mode, &[traj_with_rewards(&[2.0, 2.0, 2.0])], 1.0, 3);
        assert_eq!(b.value, 0.5 * 1.5 + 0.5 * 6.0);
        assert_eq!(b.per_step, vec![1.5, 1.25, 1.0]);
        let mut z = Baseline::zero();
        z.observe(BaselineMode::Zero, &[traj_with_rewards(&[1.0])], 1.0, 3);
        assert_eq!(z, Baseline::zero());
    }

    // Monte Carlo: GPOMDP's total variance does not exceed REINFORCE's.
    #[test]
    fn gpomdp_has_lower_variance_than_reinforce() {
        let (chain, arch, params) = chain_setup(8);
        let mut rng = rng::stream(9, &[]);
        let trajs: Vec<Trajectory> = (0..10_000)
            .map(|_| rollout(&chain, &arch, &params, chain.spec().horizon, &mut rng).unwrap())
            .collect();
        let total_variance = |kind| {
            let cfg = EstimatorConfig::plain(kind, 0.99);
            let gs: Vec<ParamVector> =
                trajs.iter().map(|t| estimate(&arch, &params, t, &cfg, &Baseline::zero()).unwrap()).collect();
            let mean = ParamVector::mean(&gs);
            gs.iter().map(|g| g.iter().zip(mean.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>()
                / gs.len() as f64
        };
        let (vg, vr) = (total_variance(EstimatorKind::Gpomdp), total_variance(EstimatorKind::Reinforce));
        assert!(vg <= vr, "gpomdp {vg} vs reinforce {vr}");
    }

    // Monte Carlo: batch means concentrate around the exact gradient.
    #[test]
    fn batch_means_concentrate_on_exact_gradient() {
        let (chain, arch, params) = chain_setup(10);
        let cfg = EstimatorConfig::plain(EstimatorKind::Reinforce, chain.mdp().gamma);
        let exact = exact_grad_j(chain.mdp(), &arch, &params).unwrap();
        // Exact per-trajectory second moments for the 3σ band.
        let enumerated = enumerate_trajectories(chain.mdp(), &arch, &params).unwrap();
        let mut second = vec![0.0; arch.param_count()];
        for (t, p) in &enumerated {
            let g = estimate(&arch, &params, t, &cfg, &Baseline::zero()).unwrap();
            for (s, v) in second.iter_mut().zip(g.iter()) {
                *s += p * v * v;
            }
        }
        let (batches, d) = (10_000usize, 4usize);
        let mut rng = rng::stream(11, &[]);
        let mut acc = ParamVector::zeros(arch.param_count());
        for _ in 0..batches {
            let trajs: Vec<Trajectory> = (0..d).map(|_| rollout(&chain, &arch, &params, 3, &mut rng).unwrap()).collect();
            acc.axpy(1.0, &batch_direction(&arch, &params, &trajs, &cfg, &Baseline::zero()).unwrap());
        }
        acc.scale(1.0 / batches as f64);
        let n = (batches * d) as f64;
        for k in 0..arch.param_count() {
            let sd = ((second[k] - exact[k] * exact[k]).max(0.0) / n).sqrt();
            assert!((acc[k] - exact[k]).abs() <= 3.0 * sd + 1e-12, "coord {k}: {} vs {} (sd {sd})", acc[k], exact[k]);
        }
    }
}
