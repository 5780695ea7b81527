//! Threshold analysis across metric files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::metrics::{read_csv, MetricsRecord};

/// First row whose evaluation mean reaches `threshold`.
#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdOutcome {
    Reached { rounds: u64, interactions: u64 },
    ThresholdNeverReached,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub path: PathBuf,
    pub group: String,
    pub outcome: ThresholdOutcome,
    pub final_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub runs: usize,
    pub reached: usize,
    pub median_rounds: Option<f64>,
    pub median_interactions: Option<f64>,
    /// Median interactions of the first group divided by this group's.
    pub speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub threshold: f64,
    pub runs: Vec<RunReport>,
    pub groups: Vec<GroupReport>,
}

pub fn threshold_outcome(records: &[MetricsRecord], threshold: f64) -> ThresholdOutcome {
    records
        .iter()
        .find(|r| r.eval_return_mean >= threshold)
        .map(|r| ThresholdOutcome::Reached { rounds: r.comm_rounds, interactions: r.env_interactions })
        .unwrap_or(ThresholdOutcome::ThresholdNeverReached)
}

/// Median of the values; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Seed replicas share a group: the file stem with a trailing `_seed<digits>`
/// removed.
pub fn group_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some(pos) = stem.rfind("_seed") {
        let digits = &stem[pos + 5..];
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            return stem[..pos].to_string();
        }
    }
    stem
}

pub fn compare_report<P: AsRef<Path>>(paths: &[P], threshold: f64) -> Result<CompareReport> {
    if paths.len() < 2 {
        return Err(Error::InvalidConfig(format!("report needs at least 2 metric files, got {}", paths.len())));
    }
    let mut runs = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let records = read_csv(path)?;
        runs.push(RunReport {
            path: path.to_path_buf(),
            group: group_name(path),
            outcome: threshold_outcome(&records, threshold),
            final_return: records.last().map_or(f64::NAN, |r| r.eval_return_mean),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut members: BTreeMap<String, Vec<&RunReport>> = BTreeMap::new();
    for run in &runs {
        if !members.contains_key(&run.group) {
            order.push(run.group.clone());
        }
        members.entry(run.group.clone()).or_default().push(run);
    }
    let mut groups: Vec<GroupReport> = order
        .iter()
        .map(|name| {
            let list = &members[name];
            let (rounds, interactions): (Vec<f64>, Vec<f64>) = list
                .iter()
                .filter_map(|r| match r.outcome {
                    ThresholdOutcome::Reached { rounds, interactions } => Some((rounds as f64, interactions as f64)),
                    ThresholdOutcome::ThresholdNeverReached => None,
                })
                .unzip();
            GroupReport {
                name: name.clone(),
                runs: list.len(),
                reached: rounds.len(),
                median_rounds: median(&rounds),
                median_interactions: median(&interactions),
                speedup: None,
            }
        })
        .collect();
    let reference = groups[0].median_interactions;
    for g in &mut groups {
        g.speedup = match (reference, g.median_interactions) {
            (Some(r), Some(m)) if m > 0.0 => Some(r / m),
            _ => None,
        };
    }
    Ok(CompareReport { threshold, runs, groups })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "threshold {}", self.threshold)?;
        for run in &self.runs {
            match run.outcome {
                ThresholdOutcome::Reached { rounds, interactions } => writeln!(
                    f,
                    "{}: rounds-to-threshold {rounds}, interactions-to-threshold {interactions}",
                    run.path.display()
                )?,
                ThresholdOutcome::ThresholdNeverReached => writeln!(
                    f,
                    "{}: threshold never reached (final return {:.2})",
                    run.path.display(),
                    run.final_return
                )?,
            }
        }
        for g in &self.groups {
            writeln!(
                f,
                "group {}: {}/{} reached, median rounds {}, median interactions {}, speedup {}",
                g.name,
                g.reached,
                g.runs,
                opt(g.median_rounds),
                opt(g.median_interactions),
                g.speedup.map_or_else(|| "-".to_string(), |s| format!("{s:.3}"))
            )?;
        }
        Ok(())
    }
}
