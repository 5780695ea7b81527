//! Experiment orchestration: configuration, metric files, sweeps and
//! threshold reports.

pub mod config;
pub mod metrics;
pub mod report;

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baselines::fedpg_run_training;
use crate::error::Result;
use crate::mfpo::{run_training, Schedule, TheorySchedule};

pub use config::{parse_config, parse_config_with, Algorithm, Overrides, RunConfig};
pub use metrics::{read_csv, CsvSink, MetricsRecord, MetricsSink, NullSink, CSV_HEADER};
pub use report::{compare_report, CompareReport, ThresholdOutcome};

/// What a finished run prints.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub path: PathBuf,
    pub final_return: f64,
    pub rounds: u64,
    pub interactions: u64,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: final return {:.2}, rounds {}, interactions {}",
            self.path.display(),
            self.final_return,
            self.rounds,
            self.interactions
        )
    }
}

/// Runs one training job and writes its CSV, ignoring the sweep lists.
pub fn run_single(config: &RunConfig) -> Result<RunSummary> {
    let env = config.build_env();
    let arch = config.arch()?;
    let mut sink = CsvSink::create(&config.output)?;
    let records = match config.algorithm {
        Algorithm::Mfpo => run_training(&config.hyper, &arch, &env, config.master_seed, &mut sink)?.records,
        Algorithm::FedPg => {
            fedpg_run_training(&config.fedpg_params()?, &arch, &env, config.master_seed, &mut sink)?.records
        }
    };
    let last = records.last();
    Ok(RunSummary {
        path: config.output.clone(),
        final_return: last.map_or(f64::NAN, |r| r.eval_return_mean),
        rounds: last.map_or(0, |r| r.comm_rounds),
        interactions: last.map_or(0, |r| r.env_interactions),
    })
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

/// One configuration per sweep combination. Swept dimensions are appended
/// to the output file stem, e.g. `metrics_N2_K5.csv`.
pub fn expand_sweeps(config: &RunConfig) -> Result<Vec<RunConfig>> {
    let dim = |list: &[usize]| -> Vec<Option<usize>> {
        if list.is_empty() {
            vec![None]
        } else {
            list.iter().copied().map(Some).collect()
        }
    };
    let mut out = Vec::new();
    for n in dim(&config.sweep_agents) {
        for k in dim(&config.sweep_local_steps) {
            for d in dim(&config.sweep_batch) {
                let mut c = config.clone();
                c.sweep_agents.clear();
                c.sweep_local_steps.clear();
                c.sweep_batch.clear();
                let mut suffix = String::new();
                if let Some(n) = n {
                    c.hyper.n_agents = n;
                    suffix.push_str(&format!("_N{n}"));
                }
                if let Some(k) = k {
                    c.hyper.local_steps = k;
                    suffix.push_str(&format!("_K{k}"));
                }
                if let Some(d) = d {
                    c.hyper.batch_size = d;
                    suffix.push_str(&format!("_D{d}"));
                }
                if let Schedule::Theory(s) = &c.hyper.schedule {
                    c.hyper.schedule = Schedule::Theory(TheorySchedule::new(
                        c.hyper.local_steps,
                        c.hyper.batch_size,
                        c.hyper.n_agents,
                        s.sigma_g,
                        s.l_tilde,
                    )?);
                }
                c.hyper.validate()?;
                c.output = suffixed(&config.output, &suffix);
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Runs the configuration, or every sweep combination concurrently.
pub fn run(config: &RunConfig) -> Result<Vec<RunSummary>> {
    let jobs = expand_sweeps(config)?;
    jobs.par_iter().map(run_single).collect()
}
