//! Parameter sweeps: every (axis value, seed) pair is an independent run
//! with its own output file; summaries are written once all runs finish.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::SimConfig;
use crate::output::{aggregate, summarize, write_csv, AggregateRow, SummaryRow};
use crate::sim::{run_policy, PolicyKind};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    V,
    Bandwidth,
    TxPower,
    PriceCap,
    Delta,
    MbsFreq,
    UnitCost,
    NFollowers,
}

const AXES: [(SweepAxis, &str); 8] = [
    (SweepAxis::V, "V"),
    (SweepAxis::Bandwidth, "bandwidth"),
    (SweepAxis::TxPower, "tx_power"),
    (SweepAxis::PriceCap, "price_cap"),
    (SweepAxis::Delta, "delta"),
    (SweepAxis::MbsFreq, "mbs_freq"),
    (SweepAxis::UnitCost, "unit_cost"),
    (SweepAxis::NFollowers, "n_followers"),
];

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = AXES.iter().find(|(a, _)| a == self).map(|(_, n)| *n).unwrap_or("?");
        f.write_str(name)
    }
}

impl FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AXES.iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(s))
            .map(|(a, _)| *a)
            .ok_or_else(|| {
                let names: Vec<&str> = AXES.iter().map(|(_, n)| *n).collect();
                format!("unknown axis `{s}` (expected one of {})", names.join(", "))
            })
    }
}

impl SweepAxis {
    /// The config with this axis set to `value`.
    pub fn apply(self, cfg: &SimConfig, value: f64) -> SimConfig {
        let mut c = cfg.clone();
        match self {
            SweepAxis::V => c.v_lyapunov = value,
            SweepAxis::Bandwidth => c.channel_bandwidth = value,
            SweepAxis::TxPower => c.tx_power = value,
            SweepAxis::PriceCap => {
                c.price_cap = value;
                c.baseline_price = c.baseline_price.min(value);
                c.task_price_hi = c.task_price_hi.min(value);
                c.task_price_lo = c.task_price_lo.min(c.task_price_hi);
            }
            SweepAxis::Delta => c.model_tx_factor = value,
            SweepAxis::MbsFreq => c.mbs_cpu_freq = value,
            SweepAxis::UnitCost => c.unit_energy_cost = value,
            SweepAxis::NFollowers => c.followers_per_mbs = value.round().max(0.0) as usize,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub repeats: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.values.is_empty() {
            return Err(SimError::Invalid("sweep values are empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Invalid("sweep values must be finite".into()));
        }
        let up = self.values.windows(2).all(|w| w[0] < w[1]);
        let down = self.values.windows(2).all(|w| w[0] > w[1]);
        if !(up || down) {
            return Err(SimError::Invalid("sweep values must be strictly monotone".into()));
        }
        if self.repeats == 0 {
            return Err(SimError::Invalid("repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// Seeds of the repeats: consecutive from the base seed.
    pub fn seeds(&self, base: u64) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| base.wrapping_add(r)).collect()
    }
}

/// Outcome of a sweep: one row per run in (value, seed) order, per-value
/// aggregates, and the written files.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SummaryRow>,
    pub aggregates: Vec<AggregateRow>,
    pub run_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub aggregate_file: PathBuf,
}

/// Runs every (value, seed) pair on up to `workers` threads. Each run's
/// records are flushed to their own file as soon as it finishes.
pub fn run_sweep(
    spec: &SweepSpec,
    cfg: &SimConfig,
    policy: PolicyKind,
    base_seed: u64,
    out_dir: &Path,
    workers: usize,
) -> Result<SweepResult, SimError> {
    spec.validate()?;
    let configs: Vec<SimConfig> = spec.values.iter().map(|&v| spec.axis.apply(cfg, v)).collect();
    for c in &configs {
        c.validate()?;
    }
    crate::output::create_dir(out_dir)?;
    let seeds = spec.seeds(base_seed);
    let jobs: Vec<(usize, u64)> = (0..spec.values.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let results: Mutex<Vec<Option<Result<(SummaryRow, PathBuf), SimError>>>> = Mutex::new(jobs.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run_job = |j: usize| -> Result<(SummaryRow, PathBuf), SimError> {
        let (v, seed) = jobs[j];
        let out = run_policy(&configs[v], policy, seed)?;
        let path = out_dir.join(format!("run_{}_{v:03}_seed{seed}.csv", spec.axis));
        write_csv(&path, &out.records)?;
        Ok((summarize(&out.records, spec.values[v], seed), path))
    };
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() {
                    break;
                }
                let r = run_job(j);
                results.lock().expect("no worker panicked")[j] = Some(r);
            });
        }
    });
    let mut rows = Vec::with_capacity(jobs.len());
    let mut run_files = Vec::with_capacity(jobs.len());
    for r in results.into_inner().expect("no worker panicked") {
        let (row, path) = r.expect("every job ran")?;
        rows.push(row);
        run_files.push(path);
    }
    let aggregates = aggregate(&rows);
    let summary_file = out_dir.join("summary.csv");
    let aggregate_file = out_dir.join("summary_by_value.csv");
    write_csv(&summary_file, &rows)?;
    write_csv(&aggregate_file, &aggregates)?;
    Ok(SweepResult { rows, aggregates, run_files, summary_file, aggregate_file })
}
