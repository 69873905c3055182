//! Efficiency improvement `I = (T − T_F) / T_F · 100` and report files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::federation::{write_file, ExperimentResult, Mode};
use crate::model::{flops_estimate, FreezeMask, ModelDims, TrainConfig};

/// Percent improvement of `t_f` over `t`. Negative when `t_f` is slower.
pub fn efficiency_improvement(t: f64, t_f: f64) -> Result<f64> {
    if !(t_f > 0.0 && t_f.is_finite()) {
        return Err(Error::invalid(format!("T_F must be positive, got {t_f}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("T must be non-negative, got {t}")));
    }
    Ok((t - t_f) / t_f * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEfficiency {
    pub round: usize,
    pub t: f64,
    pub t_f: f64,
    pub i_wall: f64,
    pub backward_flops: u64,
    pub backward_flops_f: u64,
    pub i_flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Mean FDAPT round time, clients' times summed (seconds).
    pub t_mean: f64,
    /// Mean FFDAPT round time, clients' times summed (seconds).
    pub t_f_mean: f64,
    pub i_wall: f64,
    /// Mean round times with clients in parallel (slowest client).
    pub t_mean_parallel: f64,
    pub t_f_mean_parallel: f64,
    pub i_wall_parallel: f64,
    /// From total backward FLOPs.
    pub i_flops: f64,
    pub rounds: Vec<RoundEfficiency>,
}

/// Config fields that may legitimately differ between a FDAPT run and its
/// FFDAPT counterpart.
const SCHEDULE_FIELDS: [&str; 5] = ["mode", "epsilon", "gamma", "literal_pseudocode", "order"];

fn diff_values(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                diff_values(
                    &path,
                    x.get(k).unwrap_or(&Value::Null),
                    y.get(k).unwrap_or(&Value::Null),
                    out,
                );
            }
        }
        _ if a != b => out.push(format!("{prefix}: {a} vs {b}")),
        _ => {}
    }
}

/// Every field on which two runs disagree, ignoring the schedule settings.
pub fn config_differences(a: &ExperimentResult, b: &ExperimentResult) -> Vec<String> {
    let strip = |r: &ExperimentResult| {
        let mut v = serde_json::to_value(&r.config).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        for f in SCHEDULE_FIELDS {
            obj.remove(f);
        }
        serde_json::json!({
            "config": v,
            "dims": r.dims,
            "samples": r.samples,
            "skew": r.skew,
            "rounds_recorded": r.rounds.len(),
        })
    };
    let mut out = Vec::new();
    diff_values("", &strip(a), &strip(b), &mut out);
    out
}

/// Pair the rounds of a FDAPT and a FFDAPT run and compute `I`.
pub fn compare_runs(
    fdapt: &ExperimentResult,
    ffdapt: &ExperimentResult,
) -> Result<EfficiencyReport> {
    let mut problems = Vec::new();
    if fdapt.config.mode != Mode::Fdapt {
        problems.push(format!(
            "mode: expected fdapt baseline, got {}",
            fdapt.config.mode
        ));
    }
    if ffdapt.config.mode != Mode::Ffdapt {
        problems.push(format!(
            "mode: expected ffdapt run, got {}",
            ffdapt.config.mode
        ));
    }
    problems.extend(config_differences(fdapt, ffdapt));
    if !problems.is_empty() {
        return Err(Error::ConfigMismatch(problems));
    }
    if fdapt.rounds.is_empty() {
        return Err(Error::invalid("runs have no rounds"));
    }

    let mut rounds = Vec::with_capacity(fdapt.rounds.len());
    for (a, b) in fdapt.rounds.iter().zip(&ffdapt.rounds) {
        rounds.push(RoundEfficiency {
            round: a.round,
            t: a.serial_wall_time,
            t_f: b.serial_wall_time,
            i_wall: efficiency_improvement(a.serial_wall_time, b.serial_wall_time)?,
            backward_flops: a.backward_flops,
            backward_flops_f: b.backward_flops,
            i_flops: efficiency_improvement(a.backward_flops as f64, b.backward_flops as f64)?,
        });
    }
    let n = rounds.len() as f64;
    let mean = |f: &dyn Fn(&crate::federation::RoundRecord) -> f64, r: &ExperimentResult| {
        r.rounds.iter().map(f).sum::<f64>() / n
    };
    let t_mean = mean(&|r| r.serial_wall_time, fdapt);
    let t_f_mean = mean(&|r| r.serial_wall_time, ffdapt);
    let t_mean_parallel = mean(&|r| r.wall_time, fdapt);
    let t_f_mean_parallel = mean(&|r| r.wall_time, ffdapt);
    Ok(EfficiencyReport {
        t_mean,
        t_f_mean,
        i_wall: efficiency_improvement(t_mean, t_f_mean)?,
        t_mean_parallel,
        t_f_mean_parallel,
        i_wall_parallel: efficiency_improvement(t_mean_parallel, t_f_mean_parallel)?,
        i_flops: efficiency_improvement(
            fdapt.total_backward_flops() as f64,
            ffdapt.total_backward_flops() as f64,
        )?,
        rounds,
    })
}

/// Total backward work of a plan, straight from the closed-form counts.
pub fn plan_backward_flops(dims: ModelDims, train: &TrainConfig, plan: &[Vec<FreezeMask>]) -> u64 {
    plan.iter()
        .flatten()
        .map(|m| {
            flops_estimate(
                dims,
                train.window(),
                m,
                train.batch_size,
                train.total_steps(),
            )
            .backward
        })
        .sum()
}

/// `I_flops` predicted from a freeze plan against the all-empty plan of the
/// same shape.
pub fn predicted_flops_improvement(
    dims: ModelDims,
    train: &TrainConfig,
    plan: &[Vec<FreezeMask>],
) -> Result<f64> {
    let empty: Vec<Vec<FreezeMask>> = plan
        .iter()
        .map(|row| vec![FreezeMask::none(); row.len()])
        .collect();
    efficiency_improvement(
        plan_backward_flops(dims, train, &empty) as f64,
        plan_backward_flops(dims, train, plan) as f64,
    )
}

/// Equal-weight mean over scenarios of `(I_wall, I_flops)`.
pub fn mean_improvement(reports: &[EfficiencyReport]) -> Option<(f64, f64)> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some((
        reports.iter().map(|r| r.i_wall).sum::<f64>() / n,
        reports.iter().map(|r| r.i_flops).sum::<f64>() / n,
    ))
}

/// One line of `summary.csv`; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub mode: Mode,
    pub clients: usize,
    pub skew: String,
    pub rounds: usize,
    pub final_loss: f64,
    pub perplexity: f64,
    pub mean_round_time: f64,
    pub total_backward_flops: u64,
    pub i_wall: Option<f64>,
    pub i_flops: Option<f64>,
}

impl SummaryRow {
    pub fn new(
        experiment: &str,
        result: &ExperimentResult,
        efficiency: Option<&EfficiencyReport>,
    ) -> Self {
        SummaryRow {
            experiment: experiment.to_string(),
            mode: result.config.mode,
            clients: if result.config.mode == Mode::Centralized {
                1
            } else {
                result.config.clients
            },
            skew: result
                .skew
                .map(|k| k.label().to_string())
                .unwrap_or_else(|| "none".into()),
            rounds: result.rounds.len(),
            final_loss: result.final_eval.mean_loss,
            perplexity: result.final_eval.perplexity,
            mean_round_time: result.mean_round_time(),
            total_backward_flops: result.total_backward_flops(),
            i_wall: efficiency.map(|e| e.i_wall),
            i_flops: efficiency.map(|e| e.i_flops),
        }
    }
}

pub const SUMMARY_CSV: &str = "summary.csv";

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Write `summary.csv` plus `<experiment>.rounds.jsonl` per experiment.
/// Returns the paths written.
pub fn write_reports(
    rows: &[SummaryRow],
    experiments: &[(&str, &ExperimentResult)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let summary = out_dir.join(SUMMARY_CSV);
    write_file(&summary, &summary_csv(rows)?)?;
    written.push(summary);
    for (name, result) in experiments {
        let p = out_dir.join(format!("{name}.rounds.jsonl"));
        write_file(&p, &result.rounds_jsonl())?;
        written.push(p);
    }
    Ok(written)
}
