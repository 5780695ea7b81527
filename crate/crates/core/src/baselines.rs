//! FedAvg combined with mini-batch policy gradient.
//!
//! Each agent takes `K` plain gradient steps on its own trajectories, then the
//! server replaces every agent's parameters with their average. There is no
//! momentum, no importance weighting and no server-side step. Seeds, stepsize
//! schedule and the metrics schema match [`crate::mfpo::run_training`], so
//! under the same master seed both algorithms draw identical first-step data.

use std::time::Instant;

use rayon::prelude::*;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::estimators::{batch_direction, EstimatorConfig};
use crate::harness::metrics::MetricsSink;
use crate::mfpo::{at_agent, check_compatible, initial_params, sample_batch, AgentState, RoundContext, TrainingOutcome};
use crate::params::ParamVector;
use crate::mfpo::PracticalSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct FedPgParams {
    pub n_agents: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub total_steps: usize,
    pub schedule: PracticalSchedule,
    pub estimator: EstimatorConfig,
    pub eval_episodes: usize,
    pub horizon: Option<usize>,
    pub stop_at_return: Option<f64>,
}

impl FedPgParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("agents", self.n_agents),
            ("local_steps", self.local_steps),
            ("batch", self.batch_size),
            ("total_steps", self.total_steps),
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

pub fn fedpg_run_training<E: Environment + ?Sized>(
    params: &FedPgParams,
    arch: &crate::policy::PolicyArch,
    env: &E,
    master_seed: u64,
    sink: &mut dyn MetricsSink,
) -> Result<TrainingOutcome> {
    let started = Instant::now();
    params.validate()?;
    check_compatible(arch, env)?;
    let horizon = params.horizon.unwrap_or(env.spec().horizon);
    let ctx = RoundContext { env, arch, master_seed, eval_episodes: params.eval_episodes, horizon, started };
    let cfg = &params.estimator;
    let k = params.local_steps as u64;

    let mut theta_bar = initial_params(arch, master_seed);
    let mut agents: Vec<AgentState> =
        (0..params.n_agents).map(|i| AgentState::new(i, master_seed, theta_bar.clone())).collect();
    let mut records = Vec::new();
    let mut trace = Vec::new();

    for t in 1..=params.total_steps as u64 {
        let alpha = params.schedule.stepsize(t);
        agents.par_iter_mut().try_for_each(|agent| -> Result<()> {
            let trajs = sample_batch(env, arch, &agent.theta, params.batch_size, horizon, &mut agent.step_stream(t))
                .map_err(|e| at_agent(e, agent.index, t))?;
            agent.interactions += trajs.iter().map(|t| t.len() as u64).sum::<u64>();
            let grad = batch_direction(arch, &agent.theta, &trajs, cfg, &agent.baseline)
                .map_err(|e| at_agent(e, agent.index, t))?;
            agent.baseline.observe(cfg.baseline, &trajs, cfg.gamma, horizon);
            let next = agent.theta.descend(alpha, &grad);
            agent.theta_prev = std::mem::replace(&mut agent.theta, next);
            agent.direction = grad;
            agent.step += 1;
            Ok(())
        })?;

        if t % k == 0 {
            theta_bar = ParamVector::mean(agents.iter().map(|a| &a.theta));
            if !theta_bar.is_finite() {
                return Err(Error::NonFiniteOutput(format!("server parameters at step {t}")));
            }
            for agent in &mut agents {
                agent.theta = theta_bar.clone();
            }
            let record = ctx.record(t / k, t, &agents, &theta_bar)?;
            sink.record(&record)?;
            let reached = params.stop_at_return.is_some_and(|target| record.eval_return_mean >= target);
            records.push(record);
            trace.push(theta_bar.clone());
            if reached {
                break;
            }
        }
    }
    Ok(TrainingOutcome { theta_bar, records, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ChainMdp;
    use crate::estimators::{Baseline, EstimatorKind};
    use crate::mfpo::{MomentumRule, PracticalSchedule};
    use crate::policy::{Activation, Head, PolicyArch};

    fn setup(n: usize, k: usize, t: usize) -> (ChainMdp, PolicyArch, FedPgParams) {
        let env = ChainMdp::seeded(6);
        let arch = PolicyArch::new(3, 4, Head::Categorical(2), Activation::Relu).unwrap();
        let params = FedPgParams {
            n_agents: n,
            local_steps: k,
            batch_size: 3,
            total_steps: t,
            schedule: PracticalSchedule::new(0.1, 0.99, 1, MomentumRule::Fixed(0.0)).unwrap(),
            estimator: EstimatorConfig::plain(EstimatorKind::Gpomdp, 0.99),
            eval_episodes: 2,
            horizon: None,
            stop_at_return: None,
        };
        (env, arch, params)
    }

    #[test]
    fn single_agent_single_step_is_minibatch_descent() {
        let (env, arch, params) = setup(1, 1, 6);
        let out = fedpg_run_training(&params, &arch, &env, 12, &mut Vec::new()).unwrap();

        let mut agent = AgentState::new(0, 12, initial_params(&arch, 12));
        for t in 1..=6u64 {
            let trajs = sample_batch(&env, &arch, &agent.theta, 3, 3, &mut agent.step_stream(t)).unwrap();
            let g = batch_direction(&arch, &agent.theta, &trajs, &params.estimator, &Baseline::zero()).unwrap();
            agent.theta = agent.theta.descend(params.schedule.stepsize(t), &g);
            assert_eq!(out.trace[t as usize - 1], agent.theta);
        }
    }

    #[test]
    fn rounds_and_validation() {
        let (env, arch, mut params) = setup(3, 4, 12);
        let out = fedpg_run_training(&params, &arch, &env, 1, &mut Vec::new()).unwrap();
        assert_eq!(out.records.len(), 3);
        params.total_steps = 10;
        assert!(fedpg_run_training(&params, &arch, &env, 1, &mut Vec::new()).is_err());
    }
}
