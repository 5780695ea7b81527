//! Run configuration: a flat `key = value` file (TOML syntax, no tables).
//!
//! Only `env` is required. Every other key has a default:
//!
//! | key               | default         | meaning                                         |
//! |-------------------|-----------------|-------------------------------------------------|
//! | `algorithm`       | `"mfpo"`        | `"mfpo"` or `"fedpg"`                           |
//! | `env`             |                 | `"cartpole"`, `"pendulum"` or `"chain"`         |
//! | `env_seed`        | `0`             | seed of the chain's random tables               |
//! | `seed`            | `0`             | master seed                                     |
//! | `hidden_units`    | `16`            | MLP width                                       |
//! | `activation`      | `"relu"`        | `"relu"` or `"tanh"`                            |
//! | `agents`          | `5`             | N                                               |
//! | `local_steps`     | `10`            | K                                               |
//! | `batch`           | `10`            | D                                               |
//! | `init_batch`      | `batch·local_steps` | D̃                                         |
//! | `total_steps`     | `200·local_steps` | T, a multiple of K                            |
//! | `gamma`           | `0.99`          | discount                                        |
//! | `estimator`       | `"gpomdp"`      | `"gpomdp"` or `"reinforce"`                     |
//! | `baseline`        | `"running_mean"`| `"running_mean"` or `"zero"`                    |
//! | `baseline_decay`  | `0.9`           |                                                 |
//! | `weight_clip`     | none            | clip importance weights from above              |
//! | `schedule`        | `"practical"`   | `"practical"` or `"theory"`                     |
//! | `alpha0`          | `1e-4`          | practical base stepsize                         |
//! | `decay`           | `0.99`          | practical stepsize decay                        |
//! | `decay_interval`  | `local_steps`   | steps per decay application                     |
//! | `momentum_coeff`  | `3.0`           | ν = 1 − coeff·α                                 |
//! | `momentum`        | none            | fixed ν, overrides `momentum_coeff`             |
//! | `sigma_g`         | `1.0`           | theory schedule gradient-noise estimate         |
//! | `l_tilde`         | `1.0`           | theory schedule smoothness estimate             |
//! | `c_alpha`, `c_nu` | derived         | theory schedule constant overrides              |
//! | `eval_episodes`   | `20`            | evaluation episodes per round                   |
//! | `horizon`         | environment's   | episode cap                                     |
//! | `stop_at_return`  | none            | stop once the evaluation mean reaches this      |
//! | `output`          | `"metrics.csv"` | CSV path                                        |
//! | `sweep_agents`, `sweep_local_steps`, `sweep_batch` | none | lists; one run per combination |
//!
//! Unknown keys are errors.

use std::path::PathBuf;

use serde::Deserialize;

use crate::baselines::FedPgParams;
use crate::env::{BuiltinEnv, EnvName, Environment};
use crate::error::{Error, Result};
use crate::estimators::{BaselineMode, EstimatorConfig, EstimatorKind};
use crate::mfpo::{HyperParams, MomentumRule, PracticalSchedule, Schedule, TheorySchedule};
use crate::policy::{Activation, Head, PolicyArch};

pub const DEFAULT_ALPHA0: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Mfpo,
    FedPg,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub env: EnvName,
    pub env_seed: u64,
    pub hidden_units: usize,
    pub activation: Activation,
    pub hyper: HyperParams,
    pub master_seed: u64,
    pub output: PathBuf,
    pub sweep_agents: Vec<usize>,
    pub sweep_local_steps: Vec<usize>,
    pub sweep_batch: Vec<usize>,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub agents: Option<usize>,
    pub local_steps: Option<usize>,
    pub batch: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    algorithm: Option<String>,
    env: Option<String>,
    env_seed: Option<i64>,
    seed: Option<i64>,
    hidden_units: Option<i64>,
    activation: Option<String>,
    agents: Option<i64>,
    local_steps: Option<i64>,
    batch: Option<i64>,
    init_batch: Option<i64>,
    total_steps: Option<i64>,
    gamma: Option<f64>,
    estimator: Option<String>,
    baseline: Option<String>,
    baseline_decay: Option<f64>,
    weight_clip: Option<f64>,
    schedule: Option<String>,
    alpha0: Option<f64>,
    decay: Option<f64>,
    decay_interval: Option<i64>,
    momentum_coeff: Option<f64>,
    momentum: Option<f64>,
    sigma_g: Option<f64>,
    l_tilde: Option<f64>,
    c_alpha: Option<f64>,
    c_nu: Option<f64>,
    eval_episodes: Option<i64>,
    horizon: Option<i64>,
    stop_at_return: Option<f64>,
    output: Option<String>,
    sweep_agents: Option<Vec<i64>>,
    sweep_local_steps: Option<Vec<i64>>,
    sweep_batch: Option<Vec<i64>>,
}

fn key_error(key: &str, message: impl Into<String>) -> Error {
    Error::Parse { line: None, key: Some(key.into()), message: message.into() }
}

fn positive(key: &str, v: i64) -> Result<usize> {
    if v > 0 {
        Ok(v as usize)
    } else {
        Err(key_error(key, format!("must be a positive integer, got {v}")))
    }
}

fn nonnegative(key: &str, v: i64) -> Result<u64> {
    u64::try_from(v).map_err(|_| key_error(key, format!("must be nonnegative, got {v}")))
}

fn positive_list(key: &str, v: Option<Vec<i64>>) -> Result<Vec<usize>> {
    v.unwrap_or_default().into_iter().map(|x| positive(key, x)).collect()
}

fn toml_error(text: &str, err: toml::de::Error) -> Error {
    let line = err.span().map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
    let message = err.message().to_string();
    let key = message
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string);
    Error::Parse { line, key, message }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, &Overrides::default())
}

/// Parses a configuration and applies command-line overrides before
/// validation.
pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    build(raw, overrides)
}

fn build(raw: RawConfig, ov: &Overrides) -> Result<RunConfig> {
    let algorithm = match raw.algorithm.as_deref().unwrap_or("mfpo") {
        "mfpo" => Algorithm::Mfpo,
        "fedpg" => Algorithm::FedPg,
        other => return Err(key_error("algorithm", format!("expected \"mfpo\" or \"fedpg\", got \"{other}\""))),
    };
    let env: EnvName = raw
        .env
        .as_deref()
        .ok_or_else(|| key_error("env", "missing required key"))?
        .parse()
        .map_err(|e: Error| key_error("env", e.to_string()))?;
    let activation: Activation = raw
        .activation
        .as_deref()
        .unwrap_or("relu")
        .parse()
        .map_err(|e: Error| key_error("activation", e.to_string()))?;

    let agents = match ov.agents {
        Some(n) => positive("agents", n as i64)?,
        None => positive("agents", raw.agents.unwrap_or(5))?,
    };
    let local_steps = match ov.local_steps {
        Some(k) => positive("local_steps", k as i64)?,
        None => positive("local_steps", raw.local_steps.unwrap_or(10))?,
    };
    let batch = match ov.batch {
        Some(d) => positive("batch", d as i64)?,
        None => positive("batch", raw.batch.unwrap_or(10))?,
    };
    let init_batch = raw.init_batch.map(|v| positive("init_batch", v)).transpose()?;
    let total_steps = positive("total_steps", raw.total_steps.unwrap_or(200 * local_steps as i64))?;
    if total_steps % local_steps != 0 {
        return Err(key_error(
            "total_steps",
            format!("total_steps ({total_steps}) must be a multiple of local_steps ({local_steps})"),
        ));
    }

    let gamma = raw.gamma.unwrap_or(0.99);
    let kind: EstimatorKind = raw
        .estimator
        .as_deref()
        .unwrap_or("gpomdp")
        .parse()
        .map_err(|e: Error| key_error("estimator", e.to_string()))?;
    let baseline = match raw.baseline.as_deref().unwrap_or("running_mean") {
        "zero" => BaselineMode::Zero,
        "running_mean" => BaselineMode::RunningMean { decay: raw.baseline_decay.unwrap_or(0.9) },
        other => return Err(key_error("baseline", format!("expected \"zero\" or \"running_mean\", got \"{other}\""))),
    };
    let estimator = EstimatorConfig::new(kind, baseline, gamma, raw.weight_clip)
        .map_err(|e| key_error("estimator", e.to_string()))?;

    let schedule = match raw.schedule.as_deref().unwrap_or("practical") {
        "practical" => {
            let momentum = match raw.momentum {
                Some(nu) => MomentumRule::Fixed(nu),
                None => MomentumRule::Linear { coeff: raw.momentum_coeff.unwrap_or(3.0) },
            };
            let interval = match raw.decay_interval {
                Some(v) => positive("decay_interval", v)? as u64,
                None => local_steps as u64,
            };
            Schedule::Practical(
                PracticalSchedule::new(raw.alpha0.unwrap_or(DEFAULT_ALPHA0), raw.decay.unwrap_or(0.99), interval, momentum)
                    .map_err(|e| key_error("schedule", e.to_string()))?,
            )
        }
        "theory" => {
            let sigma_g = raw.sigma_g.unwrap_or(1.0);
            let l_tilde = raw.l_tilde.unwrap_or(1.0);
            let derived = TheorySchedule::new(local_steps, batch, agents, sigma_g, l_tilde)
                .map_err(|e| key_error("schedule", e.to_string()))?;
            let sched = TheorySchedule::with_constants(
                raw.c_alpha.unwrap_or(derived.c_alpha),
                raw.c_nu.unwrap_or(derived.c_nu),
                sigma_g,
                l_tilde,
                local_steps,
                batch,
                agents,
            )
            .map_err(|e| key_error("schedule", e.to_string()))?;
            Schedule::Theory(sched)
        }
        other => return Err(key_error("schedule", format!("expected \"practical\" or \"theory\", got \"{other}\""))),
    };

    let hyper = HyperParams {
        n_agents: agents,
        local_steps,
        batch_size: batch,
        init_batch_size: init_batch,
        total_steps,
        schedule,
        estimator,
        eval_episodes: nonnegative("eval_episodes", raw.eval_episodes.unwrap_or(20))? as usize,
        horizon: raw.horizon.map(|h| positive("horizon", h)).transpose()?,
        stop_at_return: raw.stop_at_return,
    };
    hyper.validate().map_err(|e| key_error("hyperparameters", e.to_string()))?;

    let hidden_units = positive("hidden_units", raw.hidden_units.unwrap_or(16))?;
    let config = RunConfig {
        algorithm,
        env,
        env_seed: nonnegative("env_seed", raw.env_seed.unwrap_or(0))?,
        hidden_units,
        activation,
        hyper,
        master_seed: match ov.seed {
            Some(s) => s,
            None => nonnegative("seed", raw.seed.unwrap_or(0))?,
        },
        output: ov.output.clone().unwrap_or_else(|| PathBuf::from(raw.output.unwrap_or_else(|| "metrics.csv".into()))),
        sweep_agents: positive_list("sweep_agents", raw.sweep_agents)?,
        sweep_local_steps: positive_list("sweep_local_steps", raw.sweep_local_steps)?,
        sweep_batch: positive_list("sweep_batch", raw.sweep_batch)?,
    };
    if algorithm == Algorithm::FedPg {
        config.fedpg_params()?;
    }
    for &k in &config.sweep_local_steps {
        if config.hyper.total_steps % k != 0 {
            return Err(key_error("sweep_local_steps", format!("{k} does not divide total_steps")));
        }
    }
    Ok(config)
}

impl RunConfig {
    pub fn build_env(&self) -> BuiltinEnv {
        BuiltinEnv::from_name(self.env, self.env_seed)
    }

    /// Policy sized for the configured environment.
    pub fn arch(&self) -> Result<PolicyArch> {
        let env = self.build_env();
        let spec = env.spec();
        let head = match &spec.action_space {
            crate::env::ActionSpace::Discrete(n) => Head::Categorical(*n),
            crate::env::ActionSpace::Continuous { lower, .. } => Head::TanhGaussian(lower.len()),
        };
        PolicyArch::new(spec.state_dim, self.hidden_units, head, self.activation)
    }

    pub fn fedpg_params(&self) -> Result<FedPgParams> {
        let Schedule::Practical(schedule) = &self.hyper.schedule else {
            return Err(key_error("schedule", "fedpg supports only the practical schedule"));
        };
        let params = FedPgParams {
            n_agents: self.hyper.n_agents,
            local_steps: self.hyper.local_steps,
            batch_size: self.hyper.batch_size,
            total_steps: self.hyper.total_steps,
            schedule: schedule.clone(),
            estimator: self.hyper.estimator,
            eval_episodes: self.hyper.eval_episodes,
            horizon: self.hyper.horizon,
            stop_at_return: self.hyper.stop_at_return,
        };
        params.validate()?;
        Ok(params)
    }
}
