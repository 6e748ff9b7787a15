//! Comparison policies. Each isolates one decision rule; every component the
//! rule does not cover falls back to the random-offloading rule.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::policy::{FollowerAction, FollowerState, PolicyContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Random task offloading.
    Marto,
    /// Greedy minimum-loss channel selection.
    Magcs,
    /// Equal (mean) CPU allocation.
    Mamcc,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Marto => "marto",
            BaselineKind::Magcs => "magcs",
            BaselineKind::Mamcc => "mamcc",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marto" => Ok(BaselineKind::Marto),
            "magcs" => Ok(BaselineKind::Magcs),
            "mamcc" => Ok(BaselineKind::Mamcc),
            _ => Err(format!("unknown baseline `{s}`")),
        }
    }
}

/// Offload flag, channel, CPU and block size all uniform over their feasible sets.
pub fn marto_select<R: Rng + ?Sized>(state: &FollowerState, ctx: &PolicyContext, rng: &mut R) -> FollowerAction {
    let offload = rng.gen::<bool>();
    let channel = rng.gen_range(0..ctx.n_channels);
    let cpu: f64 = rng.gen();
    let block: f64 = rng.gen();
    ctx.action_from_fractions(state, cpu, block, channel, offload)
}

/// Channel with the smallest effective loss (lowest index on ties); the rest as MARTO.
pub fn magcs_select<R: Rng + ?Sized>(
    state: &FollowerState,
    channel_losses: &[f64],
    ctx: &PolicyContext,
    rng: &mut R,
) -> FollowerAction {
    let mut action = marto_select(state, ctx, rng);
    let mut best = 0;
    for (r, &l) in channel_losses.iter().enumerate().skip(1) {
        if l < channel_losses[best] {
            best = r;
        }
    }
    action.channel = best;
    action
}

/// Equal share `f_total / (M·N)` of a CPU pool, clamped to the feasible box;
/// channel and offload as MARTO.
pub fn mamcc_select<R: Rng + ?Sized>(
    state: &FollowerState,
    ctx: &PolicyContext,
    total_freq: f64,
    followers: usize,
    rng: &mut R,
) -> FollowerAction {
    let mut action = marto_select(state, ctx, rng);
    action.cpu_freq = (total_freq / followers as f64).min(ctx.cpu_box(state)).max(0.0);
    action
}

/// Loss of a channel as seen through last slot's interference:
/// `L + 10·log10(1 + I_r / σ²)`, the SINR penalty folded into the path loss.
pub fn effective_losses(loss_db: f64, prev_interference: &[f64], noise_power: f64) -> Vec<f64> {
    prev_interference
        .iter()
        .map(|&i| loss_db + 10.0 * (i / noise_power).ln_1p() / std::f64::consts::LN_10)
        .collect()
}
