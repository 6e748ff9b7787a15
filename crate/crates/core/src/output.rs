//! CSV export of records and summaries, plus per-run artifact directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::SimConfig;
use crate::nn::write_checkpoint;
use crate::sim::{MetricsRecord, RunOutput};
use crate::SimError;

/// Means over a record stream. Per-follower quantities average over every
/// (slot, follower) record; profit is the leader's total per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub axis_value: f64,
    pub seed: u64,
    pub mean_throughput: f64,
    pub mean_queue: f64,
    pub mean_interference: f64,
    pub mean_overhead: f64,
    pub mean_profit: f64,
}

/// Summary of one run's records.
pub fn summarize(records: &[MetricsRecord], axis_value: f64, seed: u64) -> SummaryRow {
    let n = records.len().max(1) as f64;
    // `+ 0.0` turns the -0.0 of an all-zero float sum into 0.0.
    let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n + 0.0;
    let mut slots: Vec<(u64, usize)> = records.iter().map(|r| (r.episode, r.slot)).collect();
    slots.sort_unstable();
    slots.dedup();
    let profit: f64 = records.iter().map(|r| r.leader_profit).sum::<f64>() + 0.0;
    SummaryRow {
        axis_value,
        seed,
        mean_throughput: mean(|r| r.throughput),
        mean_queue: mean(|r| r.queue),
        mean_interference: mean(|r| r.interference),
        mean_overhead: mean(|r| r.overhead),
        mean_profit: profit / slots.len().max(1) as f64,
    }
}

/// Mean and sample standard deviation of every summary column at one axis value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateRow {
    pub axis_value: f64,
    pub runs: usize,
    pub mean_throughput: f64,
    pub std_throughput: f64,
    pub mean_queue: f64,
    pub std_queue: f64,
    pub mean_interference: f64,
    pub std_interference: f64,
    pub mean_overhead: f64,
    pub std_overhead: f64,
    pub mean_profit: f64,
    pub std_profit: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups rows by axis value, keeping first-appearance order.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.iter().any(|v| v.to_bits() == r.axis_value.to_bits()) {
            values.push(r.axis_value);
        }
    }
    values
        .into_iter()
        .map(|v| {
            let group: Vec<&SummaryRow> = rows.iter().filter(|r| r.axis_value.to_bits() == v.to_bits()).collect();
            let col = |f: fn(&SummaryRow) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (mean_throughput, std_throughput) = col(|r| r.mean_throughput);
            let (mean_queue, std_queue) = col(|r| r.mean_queue);
            let (mean_interference, std_interference) = col(|r| r.mean_interference);
            let (mean_overhead, std_overhead) = col(|r| r.mean_overhead);
            let (mean_profit, std_profit) = col(|r| r.mean_profit);
            AggregateRow {
                axis_value: v,
                runs: group.len(),
                mean_throughput,
                std_throughput,
                mean_queue,
                std_queue,
                mean_interference,
                std_interference,
                mean_overhead,
                std_overhead,
                mean_profit,
                std_profit,
            }
        })
        .collect()
}

/// Writes serialisable rows with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| SimError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| SimError::csv(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>, SimError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| SimError::csv(path, e))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| SimError::csv(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), SimError> {
    fs::write(path, text).map_err(|e| SimError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), SimError> {
    fs::create_dir_all(path).map_err(|e| SimError::io(path, e))
}

/// Files written for one `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    pub ledger: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

/// Writes records, summary, resolved config, ledger export and (for learned
/// policies) a checkpoint into `dir`.
pub fn write_run(dir: &Path, cfg: &SimConfig, seed: u64, run: &RunOutput) -> Result<RunArtifacts, SimError> {
    create_dir(dir)?;
    let art = RunArtifacts {
        records: dir.join("records.csv"),
        summary: dir.join("summary.csv"),
        config: dir.join("resolved_config.txt"),
        ledger: dir.join("ledger.csv"),
        checkpoint: run.trainer.as_ref().map(|_| dir.join("checkpoint.bin")),
    };
    write_csv(&art.records, &run.records)?;
    write_csv(&art.summary, &[summarize(&run.records, f64::NAN, seed)])?;
    write_text(&art.config, &cfg.to_config_string())?;
    let mut ledger = Vec::new();
    run.ledger.write_export(&mut ledger).map_err(|e| SimError::io(&art.ledger, e))?;
    fs::write(&art.ledger, ledger).map_err(|e| SimError::io(&art.ledger, e))?;
    if let (Some(path), Some(trainer)) = (&art.checkpoint, &run.trainer) {
        let mut named: Vec<(String, &crate::nn::PolicyParams)> = vec![
            ("global_actor".into(), &trainer.global_actor),
            ("leader_actor".into(), &trainer.leader.actor),
            ("leader_critic".into(), &trainer.leader.critic),
        ];
        for (i, a) in trainer.agents.iter().enumerate() {
            named.push((format!("actor_{i}"), &a.actor));
            named.push((format!("critic_{i}"), &a.critic));
        }
        let refs: Vec<(&str, &crate::nn::PolicyParams)> = named.iter().map(|(n, p)| (n.as_str(), *p)).collect();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &refs).map_err(|e| SimError::io(path, e))?;
        let mut f = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        f.write_all(&buf).map_err(|e| SimError::io(path, e))?;
    }
    Ok(art)
}
