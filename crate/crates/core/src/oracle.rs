//! Exhaustive per-slot best responses on a discretised action grid, trace
//! certification, and the leader's price grid search.

use crate::config::SimConfig;
use crate::env::{Evaluation, FollowerSlotContext, SlotConstants, SlotReport};
use crate::policy::{FollowerAction, PolicyContext};
use crate::sim::{evaluation_episode, run_episode, train_madfrl, EpisodeOptions, Followers, PolicyKind, Prices, EVAL_EPISODE_BASE};
use crate::SimError;
use crate::topology::gain_squared;

/// Discretisation of the follower action box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleGrid {
    pub freq_levels: usize,
    pub block_levels: usize,
}

impl OracleGrid {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self { freq_levels: cfg.oracle_freq_levels, block_levels: cfg.oracle_block_levels }
    }

    /// Evenly spaced fractions of a box, both ends included. A single level
    /// sits at `single`.
    fn fractions(levels: usize, single: f64) -> Vec<f64> {
        match levels {
            0 | 1 => vec![single],
            l => (0..l).map(|k| k as f64 / (l - 1) as f64).collect(),
        }
    }

    /// Every grid action in enumeration order: frequency, channel, offload, block.
    pub fn actions(&self, ctx: &PolicyContext, s: &crate::policy::FollowerState) -> Vec<FollowerAction> {
        let freqs = Self::fractions(self.freq_levels, 1.0);
        let blocks = Self::fractions(self.block_levels, 0.0);
        let mut out = Vec::with_capacity(freqs.len() * ctx.n_channels * 2 * blocks.len());
        for &f in &freqs {
            for r in 0..ctx.n_channels {
                for offload in [false, true] {
                    for &b in &blocks {
                        out.push(ctx.action_from_fractions(s, f, b, r, offload));
                    }
                }
            }
        }
        out
    }
}

/// Highest-objective candidate; ties go to the earliest.
pub fn best_of(ctx: &FollowerSlotContext, k: &SlotConstants, candidates: &[FollowerAction]) -> Option<(FollowerAction, Evaluation)> {
    let mut best: Option<(FollowerAction, Evaluation)> = None;
    for a in candidates {
        let e = ctx.evaluate(k, a);
        if best.as_ref().map_or(true, |(_, b)| e.objective > b.objective) {
            best = Some((*a, e));
        }
    }
    best
}

/// Best response of one follower with every other follower's action frozen.
pub fn best_response(ctx: &FollowerSlotContext, k: &SlotConstants, pctx: &PolicyContext, grid: &OracleGrid) -> (FollowerAction, Evaluation) {
    best_of(ctx, k, &grid.actions(pctx, &ctx.state)).expect("grid is never empty")
}

/// `oracle_slot_action`: the grid maximiser of the drift-plus-penalty objective.
pub fn oracle_slot_action(ctx: &FollowerSlotContext, k: &SlotConstants, pctx: &PolicyContext, grid: &OracleGrid) -> FollowerAction {
    best_response(ctx, k, pctx, grid).0
}

/// Straight-line recomputation of a follower's per-slot objective, kept
/// apart from the environment code so the two can check each other.
pub fn naive_objective(ctx: &FollowerSlotContext, k: &SlotConstants, a: &FollowerAction) -> f64 {
    let s = &ctx.state;
    let admitted = a.offload && ctx.requested_interference[a.channel] <= k.i_max;
    let (served, f) = if admitted {
        let g2 = gain_squared(ctx.loss_db);
        let sinr = k.tx_power * g2 / (k.noise_power + ctx.interference[a.channel]);
        (k.bandwidth * (1.0 + sinr).log2() * k.slot, 0.0)
    } else {
        (a.cpu_freq * k.slot / s.cycles_per_bit, a.cpu_freq)
    };
    let mut slowest = ctx.peer_min_freq;
    if f > 0.0 && f < slowest {
        slowest = f;
    }
    let o = &k.overhead;
    let mut overhead = o.fixed + o.spread_per_bit * a.block_size;
    if slowest.is_finite() && slowest > 0.0 {
        overhead += a.block_size * o.cycles_per_bit / slowest;
    }
    let q = s.queue / k.bit_unit;
    let d = served / k.bit_unit;
    q * d + k.v * (d - overhead - s.price * f / k.freq_unit)
}

/// Certification of one recorded trace against the grid oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceVerification {
    pub decisions: usize,
    /// Decisions where some grid action beats the oracle's choice under the
    /// independent objective.
    pub oracle_violations: usize,
    /// Decisions where the recorded action beats the oracle's optimum.
    pub policy_exceedances: usize,
    pub mean_oracle_objective: f64,
    pub mean_policy_objective: f64,
}

impl TraceVerification {
    /// Mean recorded objective as a fraction of the mean oracle objective.
    pub fn ratio(&self) -> f64 {
        if self.mean_oracle_objective == 0.0 {
            return if self.mean_policy_objective >= 0.0 { 1.0 } else { 0.0 };
        }
        self.mean_policy_objective / self.mean_oracle_objective
    }
}

fn close_or_above(a: f64, b: f64) -> bool {
    a >= b - 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Re-solves every recorded decision: the oracle must dominate the whole
/// grid and the recorded action.
pub fn verify_trace(reports: &[SlotReport], k: &SlotConstants, pctx: &PolicyContext, grid: &OracleGrid) -> TraceVerification {
    let mut v = TraceVerification {
        decisions: 0,
        oracle_violations: 0,
        policy_exceedances: 0,
        mean_oracle_objective: 0.0,
        mean_policy_objective: 0.0,
    };
    for rep in reports {
        for (ctx, e) in rep.contexts.iter().zip(&rep.evaluations) {
            let candidates = grid.actions(pctx, &ctx.state);
            let (best, best_eval) = best_of(ctx, k, &candidates).expect("grid is never empty");
            let best_naive = naive_objective(ctx, k, &best);
            if !close_or_above(best_eval.objective, best_naive) || !close_or_above(best_naive, best_eval.objective) {
                v.oracle_violations += 1;
            } else if candidates.iter().any(|a| !close_or_above(best_naive, naive_objective(ctx, k, a))) {
                v.oracle_violations += 1;
            }
            if !close_or_above(best_eval.objective, e.objective) {
                v.policy_exceedances += 1;
            }
            v.decisions += 1;
            v.mean_oracle_objective += best_eval.objective;
            v.mean_policy_objective += e.objective;
        }
    }
    if v.decisions > 0 {
        v.mean_oracle_objective /= v.decisions as f64;
        v.mean_policy_objective /= v.decisions as f64;
    }
    v
}

/// Runs (training first for MADFRL) evaluation episode 0 of a policy and
/// certifies it against the grid oracle.
pub fn verify_policy(cfg: &SimConfig, policy: PolicyKind, seed: u64) -> Result<TraceVerification, SimError> {
    let trainer = match policy {
        PolicyKind::Madfrl => Some(train_madfrl(cfg, seed)?),
        PolicyKind::Baseline(_) => None,
    };
    let trace = evaluation_episode(cfg, policy, seed, trainer.as_ref(), 0, EpisodeOptions { keep_reports: true, ..Default::default() });
    Ok(verify_trace(
        &trace.reports,
        &SlotConstants::from_config(cfg),
        &PolicyContext::from_config(cfg),
        &OracleGrid::from_config(cfg),
    ))
}

/// Mean per-slot leader profit when every follower plays the oracle best
/// response against a price policy.
pub fn oracle_profit(cfg: &SimConfig, seed: u64, eval_index: u64, prices: &Prices<'_>) -> f64 {
    let trace = run_episode(
        cfg,
        seed,
        EVAL_EPISODE_BASE + eval_index,
        &Followers::Oracle(OracleGrid::from_config(cfg)),
        prices,
        EpisodeOptions::default(),
        "oracle",
    );
    let total: f64 = trace.leader_samples.iter().map(|s| s.profit).sum();
    total / cfg.slots.max(1) as f64
}

/// Uniform price grid over `[0, price_cap]`; returns (best price, its profit).
pub fn price_grid_search(cfg: &SimConfig, seed: u64, eval_index: u64, levels: usize) -> (f64, f64) {
    let levels = levels.max(2);
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..levels {
        let price = cfg.price_cap * k as f64 / (levels - 1) as f64;
        let profit = oracle_profit(cfg, seed, eval_index, &Prices::Fixed(price));
        if profit > best.1 {
            best = (price, profit);
        }
    }
    best
}
