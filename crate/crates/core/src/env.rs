//! Slot-level environment: arrivals, geometry, joint interference, the
//! interference cap, overhead, queue updates and rewards.
//!
//! Per slot the order is: observe (arrivals and geometry of this slot are
//! visible), act, evaluate jointly, update queues, draw the next slot.

use crate::config::SimConfig;
use crate::ledger::{aggregation_overhead, transmission_overhead};
use crate::policy::{FollowerAction, FollowerState, Outcome, PolicyContext};
use crate::queueing::{dpp_objective, QueueState};
use crate::rng::{stream, SimRng, Stream};
use crate::topology::{
    interference_table, local_bits, offload_bits, offload_rate, path_loss, step_geometry, ArrivalBatch,
    ArrivalProcess, ChannelAssignment, LeoGeometry, LinkParams,
};

/// Overhead constants. |W_m| and S_B enter the CPU terms as cycle-equivalent
/// workloads (`bits × workload_cycles_per_bit`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadModel {
    /// C1 + C2, seconds.
    pub fixed: f64,
    /// δ·log2(M·N) / r_down, seconds per block bit.
    pub spread_per_bit: f64,
    pub cycles_per_bit: f64,
    pub block_max: f64,
    pub f_max: f64,
}

impl OverheadModel {
    pub fn from_config(cfg: &SimConfig) -> Self {
        let k = cfg.workload_cycles_per_bit;
        let c1 = aggregation_overhead(cfg.model_size * k, cfg.mbs_cpu_freq).unwrap_or(0.0);
        let c2 = transmission_overhead(cfg.model_tx_factor, cfg.n_mbs, cfg.model_size, cfg.uplink_rate).unwrap_or(0.0);
        Self {
            fixed: c1 + c2,
            spread_per_bit: cfg.model_tx_factor * (cfg.total_followers() as f64).log2() / cfg.downlink_rate,
            cycles_per_bit: k,
            block_max: cfg.block_max,
            f_max: cfg.follower_max_freq,
        }
    }

    /// C_SBC for one follower: its own block size and the slowest verifying
    /// CPU at its MBS (`slowest_freq` of 0 or ∞ means nobody verifies).
    pub fn total(&self, block_size: f64, slowest_freq: f64) -> f64 {
        let verify = if slowest_freq > 0.0 && slowest_freq.is_finite() {
            block_size * self.cycles_per_bit / slowest_freq
        } else {
            0.0
        };
        self.fixed + self.spread_per_bit * block_size + verify
    }

    /// Typical magnitude used to normalise overhead targets.
    pub fn reference_overhead(&self) -> f64 {
        self.total(self.block_max, self.f_max)
    }
}

/// Channel and game constants needed to evaluate one follower's action.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotConstants {
    pub slot: f64,
    pub bandwidth: f64,
    pub tx_power: f64,
    pub noise_power: f64,
    pub i_max: f64,
    pub v: f64,
    pub bit_unit: f64,
    pub freq_unit: f64,
    pub overhead: OverheadModel,
}

impl SlotConstants {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            slot: cfg.slot_duration,
            bandwidth: cfg.channel_bandwidth,
            tx_power: cfg.tx_power,
            noise_power: cfg.noise_power,
            i_max: cfg.i_max,
            v: cfg.v_lyapunov,
            bit_unit: cfg.bit_unit,
            freq_unit: cfg.freq_unit,
            overhead: OverheadModel::from_config(cfg),
        }
    }
}

/// Everything one follower's outcome depends on, with all other followers'
/// actions frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerSlotContext {
    pub state: FollowerState,
    /// Path loss toward the nearest LEO, dB.
    pub loss_db: f64,
    /// Interference from other MBSs' requested offloads, per channel.
    pub requested_interference: Vec<f64>,
    /// Interference from other MBSs' admitted offloads, per channel.
    pub interference: Vec<f64>,
    /// Slowest non-zero CPU among the other followers of this MBS (∞ if none).
    pub peer_min_freq: f64,
}

/// Result of evaluating one action in context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Offload admitted under the interference cap.
    pub offload: bool,
    pub served: f64,
    pub freq_used: f64,
    pub overhead: f64,
    /// Interference on the follower's channel while offloading (0 when local).
    pub interference: f64,
    /// Drift-plus-penalty score in objective units.
    pub objective: f64,
}

impl Evaluation {
    pub fn outcome(&self, state: &FollowerState) -> Outcome {
        Outcome {
            queue: state.queue,
            served: self.served,
            freq_used: self.freq_used,
            price: state.price,
            overhead: self.overhead,
        }
    }
}

impl FollowerSlotContext {
    /// Whether an offload on `channel` is admitted under the cap.
    pub fn admits(&self, k: &SlotConstants, channel: usize) -> bool {
        self.requested_interference[channel] <= k.i_max
    }

    pub fn evaluate(&self, k: &SlotConstants, a: &FollowerAction) -> Evaluation {
        let s = &self.state;
        let offload = a.offload && self.admits(k, a.channel);
        let freq_used = if offload { 0.0 } else { a.cpu_freq };
        let interference = if offload { self.interference[a.channel] } else { 0.0 };
        let served = if offload {
            offload_bits(offload_rate(k.bandwidth, true, k.tx_power, self.loss_db, k.noise_power, interference), k.slot)
        } else {
            local_bits(freq_used, s.cycles_per_bit, k.slot).unwrap_or(0.0)
        };
        let slowest = if freq_used > 0.0 { self.peer_min_freq.min(freq_used) } else { self.peer_min_freq };
        let overhead = k.overhead.total(a.block_size, slowest);
        let objective = dpp_objective(
            s.queue / k.bit_unit,
            served / k.bit_unit,
            freq_used / k.freq_unit,
            s.price,
            overhead,
            k.v,
        );
        Evaluation { offload, served, freq_used, overhead, interference, objective }
    }
}

/// Joint outcome of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotReport {
    pub states: Vec<FollowerState>,
    pub actions: Vec<FollowerAction>,
    pub evaluations: Vec<Evaluation>,
    pub contexts: Vec<FollowerSlotContext>,
    pub queues_after: Vec<f64>,
    pub arrivals: Vec<f64>,
    /// (λ − c)·f per follower, in currency units of `freq_unit`.
    pub profit: Vec<f64>,
}

/// Multi-follower slot simulator.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: SimConfig,
    link: LinkParams,
    consts: SlotConstants,
    arrivals_rng: SimRng,
    geometry_rng: SimRng,
    process: ArrivalProcess,
    pub queues: QueueState,
    arrivals: ArrivalBatch,
    geometry: LeoGeometry,
    /// Frequencies used in the previous slot (the leader's observation).
    pub prev_freqs: Vec<f64>,
    /// Admitted interference table of the previous slot, `n * R + r`.
    pub prev_interference: Vec<f64>,
    pub slot: usize,
}

impl Env {
    /// A fresh episode. `episode` selects independent arrival and geometry streams.
    pub fn new(cfg: &SimConfig, seed: u64, episode: u64) -> Self {
        let mut arrivals_rng = stream(seed, Stream::Arrivals, episode);
        let mut geometry_rng = stream(seed, Stream::Geometry, episode);
        let mut process = ArrivalProcess::new(cfg);
        let arrivals = process.sample(&mut arrivals_rng);
        let geometry = step_geometry(&mut geometry_rng, cfg);
        let n = cfg.total_followers();
        Self {
            link: LinkParams::from_config(cfg),
            consts: SlotConstants::from_config(cfg),
            arrivals_rng,
            geometry_rng,
            process,
            queues: QueueState::new(n),
            arrivals,
            geometry,
            prev_freqs: vec![0.0; n],
            prev_interference: vec![0.0; cfg.n_mbs * cfg.n_channels],
            slot: 0,
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn constants(&self) -> &SlotConstants {
        &self.consts
    }

    pub fn followers(&self) -> usize {
        self.cfg.total_followers()
    }

    pub fn arrivals(&self) -> &ArrivalBatch {
        &self.arrivals
    }

    pub fn geometry(&self) -> &LeoGeometry {
        &self.geometry
    }

    /// Path loss of follower `i` toward its nearest LEO this slot.
    pub fn loss_db(&self, i: usize) -> f64 {
        let o = self.geometry.nearest_leo(i);
        let idx = i * self.geometry.n_leo + o;
        path_loss(
            self.geometry.horizontal_dist[idx],
            self.geometry.vertical_dist[idx],
            &self.link,
            self.geometry.eps_los[idx],
            self.geometry.eps_nlos[idx],
        )
        .expect("configured distances are positive")
    }

    /// Local observation of every follower under the quoted prices.
    pub fn observe(&self, prices: &[f64]) -> Vec<FollowerState> {
        (0..self.followers())
            .map(|i| {
                let o = self.geometry.nearest_leo(i);
                FollowerState {
                    arrival: self.arrivals.bits[i],
                    leo_x: self.geometry.x(i, o),
                    leo_y: self.geometry.y(i, o),
                    price: prices[i],
                    queue: self.queues.backlog[i],
                    cycles_per_bit: self.arrivals.cycles_per_bit[i],
                }
            })
            .collect()
    }

    /// Per-follower contexts for a joint action, with interference-cap
    /// demotion applied to everyone else.
    pub fn contexts(&self, states: &[FollowerState], actions: &[FollowerAction]) -> Vec<FollowerSlotContext> {
        let cfg = &self.cfg;
        let n = self.followers();
        let m_per = cfg.followers_per_mbs;
        let r_count = cfg.n_channels;
        let losses: Vec<f64> = (0..n).map(|i| self.loss_db(i)).collect();

        let mut requested = ChannelAssignment::idle(cfg.n_mbs, m_per, r_count);
        for (i, a) in actions.iter().enumerate() {
            if a.offload {
                requested.channel[i] = Some(a.channel);
                requested.power[i] = cfg.tx_power;
                requested.offload_target[i] = Some(self.geometry.nearest_leo(i));
            }
        }
        let req_table = interference_table(&requested, &losses);
        let mut admitted = requested.clone();
        for i in 0..n {
            if let Some(r) = requested.channel[i] {
                if req_table[(i / m_per) * r_count + r] > cfg.i_max {
                    admitted.channel[i] = None;
                    admitted.power[i] = 0.0;
                    admitted.offload_target[i] = None;
                }
            }
        }
        let table = interference_table(&admitted, &losses);
        let freq_used: Vec<f64> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| if admitted.channel[i].is_some() { 0.0 } else { a.cpu_freq })
            .collect();

        (0..n)
            .map(|i| {
                let mbs = i / m_per;
                let peer_min_freq = (mbs * m_per..(mbs + 1) * m_per)
                    .filter(|&j| j != i && freq_used[j] > 0.0)
                    .map(|j| freq_used[j])
                    .fold(f64::INFINITY, f64::min);
                FollowerSlotContext {
                    state: states[i],
                    loss_db: losses[i],
                    requested_interference: req_table[mbs * r_count..(mbs + 1) * r_count].to_vec(),
                    interference: table[mbs * r_count..(mbs + 1) * r_count].to_vec(),
                    peer_min_freq,
                }
            })
            .collect()
    }

    /// Applies a joint action and advances to the next slot.
    pub fn step(&mut self, states: Vec<FollowerState>, actions: Vec<FollowerAction>, unit_cost: f64) -> SlotReport {
        let contexts = self.contexts(&states, &actions);
        let evaluations: Vec<Evaluation> = contexts
            .iter()
            .zip(&actions)
            .map(|(c, a)| c.evaluate(&self.consts, a))
            .collect();
        let served: Vec<f64> = evaluations.iter().map(|e| e.served).collect();
        let arrivals = self.arrivals.bits.clone();
        self.queues.update(&served, &arrivals);
        let profit = evaluations
            .iter()
            .zip(&states)
            .map(|(e, s)| (s.price - unit_cost) * e.freq_used / self.cfg.freq_unit)
            .collect();

        let r_count = self.cfg.n_channels;
        let mut prev_interference = vec![0.0; self.cfg.n_mbs * r_count];
        for (i, c) in contexts.iter().enumerate() {
            let mbs = i / self.cfg.followers_per_mbs;
            prev_interference[mbs * r_count..(mbs + 1) * r_count].copy_from_slice(&c.interference);
        }
        self.prev_interference = prev_interference;
        self.prev_freqs = evaluations.iter().map(|e| e.freq_used).collect();
        self.arrivals = self.process.sample(&mut self.arrivals_rng);
        self.geometry = step_geometry(&mut self.geometry_rng, &self.cfg);
        self.slot += 1;

        SlotReport {
            queues_after: self.queues.backlog.clone(),
            states,
            actions,
            evaluations,
            contexts,
            arrivals,
            profit,
        }
    }

    pub fn policy_context(&self) -> PolicyContext {
        PolicyContext::from_config(&self.cfg)
    }
}
