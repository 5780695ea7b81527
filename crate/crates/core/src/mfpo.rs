//! The MFPO training loop and its building blocks.
//!
//! Step `t = 1..=T` for every agent `i`:
//!
//! 1. sample `D` trajectories under `θ_i^{(t)}`;
//! 2. form the momentum direction
//!    `ũ_i^{(t)} = ν_t (ũ_i^{(t-1)} - (1/D) Σ_j w_j g(θ_i^{(t-1)}; τ_j)) + (1/D) Σ_j g(θ_i^{(t)}; τ_j)`
//!    with `w_j = p(τ_j | θ_i^{(t-1)}) / p(τ_j | θ_i^{(t)})`;
//! 3. if `t mod K ≠ 0`, take the local step `θ_i ← θ_i - α_t ũ_i`.
//!
//! When `t mod K = 0` the server averages parameters and directions, applies
//! its own step `θ̄ ← θ̄ - α_t ū` and broadcasts `(θ̄, ū)` to every agent.
//! After a broadcast each agent keeps its own pre-broadcast parameters as
//! `θ^{(t-1)}`, so the next importance weights compare against the policy
//! that actually produced the previous direction.

use std::time::Instant;

use rayon::prelude::*;

use crate::env::{rollout, ActionSpace, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::estimators::{
    accumulate_estimate, batch_direction, batch_direction_with_logps, weight_from_log_ratio, Baseline,
    EstimatorConfig,
};
use crate::harness::metrics::{MetricsRecord, MetricsSink};
use crate::oracle::{exact_grad_j, ENUMERATION_CAP};
use crate::params::ParamVector;
use crate::policy::{Head, PolicyArch};
use crate::rng::{self, RngStream};

/// Stepsize and momentum from the convergence analysis.
///
/// `α_t = c_α / (c_t + σ_g² t)^{1/3}` with
/// `c_t = max{ c_ν³c_α³ / (2¹²K³L̃³), 2¹²K³D²N²σ_g² - σ_g² t, 2σ_g² }`,
/// and `ν_{t+1} = 1 - c_ν α_t²`.
#[derive(Clone, Debug, PartialEq)]
pub struct TheorySchedule {
    pub c_alpha: f64,
    pub c_nu: f64,
    pub sigma_g: f64,
    pub l_tilde: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub n_agents: usize,
}

impl TheorySchedule {
    /// Derives `c_α = (DNσ_g)^{2/3} / L̃` and
    /// `c_ν = L̃² / (24K(DN)²) + 64L̃² / (DN)` from the problem sizes.
    pub fn new(local_steps: usize, batch_size: usize, n_agents: usize, sigma_g: f64, l_tilde: f64) -> Result<Self> {
        let dn = (batch_size * n_agents) as f64;
        let k = local_steps as f64;
        let c_alpha = (dn * sigma_g).powf(2.0 / 3.0) / l_tilde;
        let c_nu = l_tilde * l_tilde / (24.0 * k * dn * dn) + 64.0 * l_tilde * l_tilde / dn;
        Self::with_constants(c_alpha, c_nu, sigma_g, l_tilde, local_steps, batch_size, n_agents)
    }

    /// Uses caller-chosen `c_α`, `c_ν`. Fails unless every constant is
    /// positive (`c_ν` may be zero) and `α_t ≤ 1/(16 L̃ K)` for all `t`.
    pub fn with_constants(
        c_alpha: f64,
        c_nu: f64,
        sigma_g: f64,
        l_tilde: f64,
        local_steps: usize,
        batch_size: usize,
        n_agents: usize,
    ) -> Result<Self> {
        let positive = [c_alpha, sigma_g, l_tilde].iter().all(|v| *v > 0.0 && v.is_finite());
        if !positive || !(c_nu >= 0.0 && c_nu.is_finite()) || local_steps == 0 || batch_size == 0 || n_agents == 0 {
            return Err(Error::InvalidSchedule(format!(
                "theory schedule needs positive constants (c_alpha={c_alpha}, c_nu={c_nu}, sigma_g={sigma_g}, \
                 l_tilde={l_tilde}, K={local_steps}, D={batch_size}, N={n_agents})"
            )));
        }
        let sched = Self { c_alpha, c_nu, sigma_g, l_tilde, local_steps, batch_size, n_agents };
        // α_t is nonincreasing, so the cap only needs checking at t = 0.
        let cap = 1.0 / (16.0 * l_tilde * local_steps as f64);
        if sched.stepsize(0) > cap * (1.0 + 1e-12) {
            return Err(Error::InvalidSchedule(format!(
                "alpha_0 = {} exceeds 1/(16 L K) = {cap}",
                sched.stepsize(0)
            )));
        }
        Ok(sched)
    }

    pub fn c_t(&self, t: u64) -> f64 {
        let k3 = (self.local_steps as f64).powi(3);
        let (d, n) = (self.batch_size as f64, self.n_agents as f64);
        let s2 = self.sigma_g * self.sigma_g;
        let first = (self.c_nu * self.c_alpha).powi(3) / (4096.0 * k3 * self.l_tilde.powi(3));
        let second = 4096.0 * k3 * d * d * n * n * s2 - s2 * t as f64;
        first.max(second).max(2.0 * s2)
    }

    pub fn stepsize(&self, t: u64) -> f64 {
        self.c_alpha / (self.c_t(t) + self.sigma_g * self.sigma_g * t as f64).cbrt()
    }
}

/// `α_t = α₀ · decay^⌊t / decay_interval⌋` with momentum from [`MomentumRule`].
#[derive(Clone, Debug, PartialEq)]
pub struct PracticalSchedule {
    pub alpha0: f64,
    pub decay: f64,
    /// Steps per application of `decay`; 1 decays every step.
    pub decay_interval: u64,
    pub momentum: MomentumRule,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MomentumRule {
    /// `ν_t = 1 - coeff · α_t`
    Linear { coeff: f64 },
    /// Constant `ν`, e.g. 0 to switch momentum off.
    Fixed(f64),
}

impl PracticalSchedule {
    pub fn new(alpha0: f64, decay: f64, decay_interval: u64, momentum: MomentumRule) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::InvalidSchedule(format!("alpha0 must be positive, got {alpha0}")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::InvalidSchedule(format!("decay must lie in (0, 1], got {decay}")));
        }
        if decay_interval == 0 {
            return Err(Error::InvalidSchedule("decay_interval must be positive".into()));
        }
        match momentum {
            MomentumRule::Linear { coeff } if !(coeff > 0.0) => {
                return Err(Error::InvalidSchedule(format!("momentum coefficient must be positive, got {coeff}")))
            }
            MomentumRule::Fixed(nu) if !(0.0..=1.0).contains(&nu) => {
                return Err(Error::InvalidSchedule(format!("fixed momentum must lie in [0, 1], got {nu}")))
            }
            _ => {}
        }
        Ok(Self { alpha0, decay, decay_interval, momentum })
    }

    pub fn stepsize(&self, t: u64) -> f64 {
        self.alpha0 * self.decay.powf((t / self.decay_interval) as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Theory(TheorySchedule),
    Practical(PracticalSchedule),
}

impl Schedule {
    pub fn stepsize(&self, t: u64) -> f64 {
        match self {
            Schedule::Theory(s) => s.stepsize(t),
            Schedule::Practical(s) => s.stepsize(t),
        }
    }

    /// Momentum for a given stepsize, clamped to `[0, 1]`: `1 - c_ν α²` for
    /// the theory schedule, the [`MomentumRule`] for the practical one.
    pub fn momentum(&self, alpha: f64) -> f64 {
        let nu = match self {
            Schedule::Theory(s) => 1.0 - s.c_nu * alpha * alpha,
            Schedule::Practical(s) => match s.momentum {
                MomentumRule::Linear { coeff } => 1.0 - coeff * alpha,
                MomentumRule::Fixed(nu) => nu,
            },
        };
        nu.clamp(0.0, 1.0)
    }

    /// `ν_t`. The theory schedule lags one step (`ν_t = 1 - c_ν α_{t-1}²`);
    /// the practical one uses the current stepsize (`ν_t = 1 - c·α_t`).
    pub fn momentum_at(&self, t: u64) -> f64 {
        match self {
            Schedule::Theory(_) => self.momentum(self.stepsize(t.saturating_sub(1))),
            Schedule::Practical(_) => self.momentum(self.stepsize(t)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub n_agents: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    /// `D̃`; `None` means `D·K`.
    pub init_batch_size: Option<usize>,
    pub total_steps: usize,
    pub schedule: Schedule,
    pub estimator: EstimatorConfig,
    pub eval_episodes: usize,
    /// Episode cap; `None` uses the environment's horizon.
    pub horizon: Option<usize>,
    /// Stop after the first round whose evaluation mean reaches this value.
    pub stop_at_return: Option<f64>,
}

impl HyperParams {
    /// Practical defaults around the given sizes.
    pub fn new(n_agents: usize, local_steps: usize, batch_size: usize, total_steps: usize, schedule: Schedule) -> Self {
        Self {
            n_agents,
            local_steps,
            batch_size,
            init_batch_size: None,
            total_steps,
            schedule,
            estimator: EstimatorConfig::default(),
            eval_episodes: 20,
            horizon: None,
            stop_at_return: None,
        }
    }

    pub fn init_batch(&self) -> usize {
        self.init_batch_size.unwrap_or(self.batch_size * self.local_steps)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("agents", self.n_agents),
            ("local_steps", self.local_steps),
            ("batch", self.batch_size),
            ("total_steps", self.total_steps),
            ("init_batch", self.init_batch()),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.total_steps % self.local_steps != 0 {
            return Err(Error::InvalidConfig(format!(
                "total_steps ({}) must be a multiple of local_steps ({})",
                self.total_steps, self.local_steps
            )));
        }
        self.estimator.validate()
    }
}

/// One agent's local state.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub index: usize,
    /// `θ_i^{(t)}`
    pub theta: ParamVector,
    /// `θ_i^{(t-1)}`
    pub theta_prev: ParamVector,
    /// `ũ_i^{(t-1)}` on entry to step `t`.
    pub direction: ParamVector,
    /// Root of this agent's random streams; step `t` draws from
    /// `rng::stream(seed, &[rng::STEP, t])`.
    pub seed: u64,
    pub step: u64,
    pub baseline: Baseline,
    /// Environment actions taken by this agent so far.
    pub interactions: u64,
}

impl AgentState {
    pub fn new(index: usize, master_seed: u64, theta: ParamVector) -> Self {
        let dim = theta.dim();
        Self {
            index,
            theta_prev: theta.clone(),
            theta,
            direction: ParamVector::zeros(dim),
            seed: rng::derive(master_seed, &[rng::AGENT, index as u64]),
            step: 0,
            baseline: Baseline::zero(),
            interactions: 0,
        }
    }

    pub fn step_stream(&self, t: u64) -> RngStream {
        rng::stream(self.seed, &[rng::STEP, t])
    }
}

/// Everything a training run produces besides the metrics sink.
#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub theta_bar: ParamVector,
    pub records: Vec<MetricsRecord>,
    /// `θ̄` after every communication round.
    pub trace: Vec<ParamVector>,
}

/// The shared starting point `θ̄^{(1)}`.
pub fn initial_params(arch: &PolicyArch, master_seed: u64) -> ParamVector {
    arch.init_params(&mut rng::stream(master_seed, &[rng::POLICY_INIT]))
}

/// Fails unless the policy's input and head fit the environment.
pub fn check_compatible<E: Environment + ?Sized>(arch: &PolicyArch, env: &E) -> Result<()> {
    let spec = env.spec();
    if arch.input_dim() != spec.state_dim {
        return Err(Error::InvalidArch(format!(
            "policy input {} does not match state dimension {}",
            arch.input_dim(),
            spec.state_dim
        )));
    }
    let ok = match (&spec.action_space, arch.head()) {
        (ActionSpace::Discrete(n), Head::Categorical(m)) => *n == m,
        (ActionSpace::Continuous { lower, .. }, Head::TanhGaussian(d)) => lower.len() == d,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArch(format!("head {:?} does not fit {:?}", arch.head(), spec.action_space)))
    }
}

pub fn sample_batch<E: Environment + ?Sized>(
    env: &E,
    arch: &PolicyArch,
    params: &[f64],
    count: usize,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<Vec<Trajectory>> {
    (0..count).map(|_| rollout(env, arch, params, horizon, rng)).collect()
}

/// Initializes `N` agents at a common `θ̄^{(1)}`; each sets its direction to
/// the batch mean over `D̃` trajectories drawn from its own init stream.
pub fn init_agents<E: Environment + ?Sized>(
    arch: &PolicyArch,
    env: &E,
    hp: &HyperParams,
    master_seed: u64,
) -> Result<(Vec<AgentState>, ParamVector)> {
    hp.validate()?;
    check_compatible(arch, env)?;
    let horizon = hp.horizon.unwrap_or(env.spec().horizon);
    let theta_bar = initial_params(arch, master_seed);
    let agents = (0..hp.n_agents)
        .into_par_iter()
        .map(|i| {
            let mut agent = AgentState::new(i, master_seed, theta_bar.clone());
            let mut stream = rng::stream(agent.seed, &[rng::INIT, 0]);
            let trajs = sample_batch(env, arch, &agent.theta, hp.init_batch(), horizon, &mut stream)?;
            agent.interactions += trajs.iter().map(|t| t.len() as u64).sum::<u64>();
            agent.direction = batch_direction(arch, &agent.theta, &trajs, &hp.estimator, &agent.baseline)
                .map_err(|e| at_agent(e, i, 0))?;
            Ok(agent)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((agents, theta_bar))
}

/// Momentum direction for trajectories sampled under `agent.theta`.
pub fn local_direction(
    arch: &PolicyArch,
    agent: &AgentState,
    trajs: &[Trajectory],
    nu: f64,
    cfg: &EstimatorConfig,
) -> Result<ParamVector> {
    let (current, logps) = batch_direction_with_logps(arch, &agent.theta, trajs, cfg, &agent.baseline)?;
    if nu == 0.0 {
        return Ok(current);
    }
    let mut correction = ParamVector::zeros(arch.param_count());
    let mut g = ParamVector::zeros(arch.param_count());
    for (traj, log_t) in trajs.iter().zip(logps) {
        g.iter_mut().for_each(|v| *v = 0.0);
        let log_prev = accumulate_estimate(arch, &agent.theta_prev, traj, cfg, &agent.baseline, 1.0, &mut g)?;
        let w = weight_from_log_ratio(log_prev - log_t, cfg.weight_clip)?;
        correction.axpy(w, &g);
    }
    correction.scale(1.0 / trajs.len() as f64);

    let out: ParamVector = agent
        .direction
        .iter()
        .zip(correction.iter())
        .zip(current.iter())
        .map(|((u, c), d)| nu * (u - c) + d)
        .collect::<Vec<_>>()
        .into();
    if !out.is_finite() {
        return Err(Error::NonFiniteOutput("local direction".into()));
    }
    Ok(out)
}

/// `θ_prev ← θ`, `θ ← θ - α·direction`, `ũ ← direction`.
pub fn local_update(agent: &mut AgentState, direction: ParamVector, alpha: f64) {
    let next = agent.theta.descend(alpha, &direction);
    agent.theta_prev = std::mem::replace(&mut agent.theta, next);
    agent.direction = direction;
    agent.step += 1;
}

/// `(ū, θ̄)`: means of directions and parameters in agent order.
pub fn global_aggregate(agents: &[AgentState]) -> Result<(ParamVector, ParamVector)> {
    let first = agents
        .first()
        .ok_or_else(|| Error::InvalidConfig("aggregation over zero agents".into()))?;
    let dim = first.theta.dim();
    for a in agents {
        crate::error::ensure_dim(dim, a.theta.dim())?;
        crate::error::ensure_dim(dim, a.direction.dim())?;
    }
    let u_bar = ParamVector::mean(agents.iter().map(|a| &a.direction));
    let theta_bar = ParamVector::mean(agents.iter().map(|a| &a.theta));
    Ok((u_bar, theta_bar))
}

/// `θ̄ - α·ū`
pub fn server_adjust(theta_bar: &ParamVector, u_bar: &ParamVector, alpha: f64) -> ParamVector {
    theta_bar.descend(alpha, u_bar)
}

/// Broadcasts `(θ̄, ū)`. Each agent's pre-broadcast `θ` becomes its `θ_prev`.
pub fn synchronize(agents: &mut [AgentState], theta_bar: &ParamVector, u_bar: &ParamVector) {
    for agent in agents {
        agent.theta_prev = std::mem::replace(&mut agent.theta, theta_bar.clone());
        agent.direction = u_bar.clone();
        agent.step += 1;
    }
}

/// Mean and population standard deviation of undiscounted episode returns.
pub fn evaluate<E: Environment + ?Sized>(
    env: &E,
    arch: &PolicyArch,
    params: &[f64],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    let returns = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut stream = rng::stream(seed, &[e as u64]);
            rollout(env, arch, params, horizon, &mut stream).map(|t| t.total_reward())
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

pub(crate) fn at_agent(err: Error, agent: usize, step: u64) -> Error {
    match err {
        Error::NonFiniteOutput(msg) => Error::NonFiniteOutput(format!("agent {agent}, step {step}: {msg}")),
        other => other,
    }
}

/// Evaluation and bookkeeping shared by every algorithm at a round boundary.
pub(crate) struct RoundContext<'a, E: ?Sized> {
    pub env: &'a E,
    pub arch: &'a PolicyArch,
    pub master_seed: u64,
    pub eval_episodes: usize,
    pub horizon: usize,
    pub started: Instant,
}

impl<E: Environment + ?Sized> RoundContext<'_, E> {
    pub fn record(&self, round: u64, step: u64, agents: &[AgentState], theta_bar: &ParamVector) -> Result<MetricsRecord> {
        let eval_seed = rng::derive(self.master_seed, &[rng::EVAL, round]);
        let (mean, std) = evaluate(self.env, self.arch, theta_bar, self.eval_episodes, self.horizon, eval_seed)?;
        let grad_norm_sq = match self.env.tabular() {
            Some(mdp) if mdp.enumeration_size() <= ENUMERATION_CAP => {
                Some(exact_grad_j(mdp, self.arch, theta_bar)?.norm_sq())
            }
            _ => None,
        };
        Ok(MetricsRecord {
            round,
            step,
            env_interactions: agents.iter().map(|a| a.interactions).sum(),
            comm_rounds: round,
            eval_return_mean: mean,
            eval_return_std: std,
            grad_norm_sq,
            wall_ms: self.started.elapsed().as_millis() as u64,
        })
    }
}

/// Runs MFPO for `T` steps, emitting one metrics row per communication round.
pub fn run_training<E: Environment + ?Sized>(
    hp: &HyperParams,
    arch: &PolicyArch,
    env: &E,
    master_seed: u64,
    sink: &mut dyn MetricsSink,
) -> Result<TrainingOutcome> {
    run_training_observed(hp, arch, env, master_seed, sink, &mut |_, _| {})
}

/// [`run_training`], calling `observer(round, agents)` right after every
/// synchronization.
pub fn run_training_observed<E: Environment + ?Sized>(
    hp: &HyperParams,
    arch: &PolicyArch,
    env: &E,
    master_seed: u64,
    sink: &mut dyn MetricsSink,
    observer: &mut dyn FnMut(u64, &[AgentState]),
) -> Result<TrainingOutcome> {
    let started = Instant::now();
    let (mut agents, mut theta_bar) = init_agents(arch, env, hp, master_seed)?;
    let horizon = hp.horizon.unwrap_or(env.spec().horizon);
    let ctx = RoundContext { env, arch, master_seed, eval_episodes: hp.eval_episodes, horizon, started };
    let cfg = &hp.estimator;
    let k = hp.local_steps as u64;
    let mut records = Vec::new();
    let mut trace = Vec::new();

    for t in 1..=hp.total_steps as u64 {
        let alpha = hp.schedule.stepsize(t);
        let nu = hp.schedule.momentum_at(t);
        let global = t % k == 0;
        agents.par_iter_mut().try_for_each(|agent| -> Result<()> {
            let trajs = sample_batch(env, arch, &agent.theta, hp.batch_size, horizon, &mut agent.step_stream(t))
                .map_err(|e| at_agent(e, agent.index, t))?;
            agent.interactions += trajs.iter().map(|t| t.len() as u64).sum::<u64>();
            let direction = local_direction(arch, agent, &trajs, nu, cfg).map_err(|e| at_agent(e, agent.index, t))?;
            agent.baseline.observe(cfg.baseline, &trajs, cfg.gamma, horizon);
            if global {
                agent.direction = direction;
            } else {
                local_update(agent, direction, alpha);
            }
            Ok(())
        })?;

        if global {
            let (u_bar, theta_avg) = global_aggregate(&agents)?;
            theta_bar = server_adjust(&theta_avg, &u_bar, alpha);
            if !theta_bar.is_finite() {
                return Err(Error::NonFiniteOutput(format!("server parameters at step {t}")));
            }
            synchronize(&mut agents, &theta_bar, &u_bar);
            observer(t / k, &agents);

            let record = ctx.record(t / k, t, &agents, &theta_bar)?;
            sink.record(&record)?;
            let reached = hp.stop_at_return.is_some_and(|target| record.eval_return_mean >= target);
            records.push(record);
            trace.push(theta_bar.clone());
            if reached {
                break;
            }
        }
    }
    Ok(TrainingOutcome { theta_bar, records, trace })
}
