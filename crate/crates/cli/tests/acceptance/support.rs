use std::path::Path;
use std::process::Command;

use satdt_core::SimConfig;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Reduced training budget used by every learning criterion.
pub fn budget(cfg: SimConfig, episodes: usize) -> SimConfig {
    SimConfig { episodes, hidden_layers: vec![32, 32], updates_per_episode: 8, ..cfg }
}

/// One MBS, two followers, one LEO, two channels.
pub fn tiny() -> SimConfig {
    budget(SimConfig { n_mbs: 1, followers_per_mbs: 2, n_leo: 1, n_channels: 2, slots: 200, ..SimConfig::default() }, 30)
}

/// Fractional ranks, ties averaged.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation: Pearson correlation of the ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

pub fn write_config(path: &Path, cfg: &SimConfig) {
    std::fs::write(path, cfg.to_config_string()).expect("config written");
}

/// Runs the `satdt` binary; returns (exit code, stdout).
pub fn satdt(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_satdt")).args(args).output().expect("satdt runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}
