//! Network topology: task arrivals, LEO geometry, path loss, interference
//! and achievable bits per slot.
//!
//! Followers are indexed flat as `i = n * M + m` for MBS `n` and follower `m`.

use rand::Rng;

use crate::config::SimConfig;
use crate::error::{ensure_non_negative, ensure_positive, ModelError};

/// Uniform draw on `[lo, hi]`; returns `lo` exactly for a degenerate range.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.gen::<f64>()
    } else {
        lo
    }
}

/// Closed-form second moment of U(a, b).
pub fn uniform_second_moment(a: f64, b: f64) -> f64 {
    (b * b + a * b + a * a) / 3.0
}

/// Per-slot task arrivals and computation intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalBatch {
    /// Arrived bits per follower (A).
    pub bits: Vec<f64>,
    /// Cycles per bit of this slot's tasks (w).
    pub cycles_per_bit: Vec<f64>,
    /// Running estimate of E[A²] per follower (η).
    pub second_moment_est: Vec<f64>,
}

/// Draws arrivals and maintains the running second-moment estimate.
#[derive(Debug, Clone)]
pub struct ArrivalProcess {
    lo: f64,
    hi: f64,
    w_lo: f64,
    w_hi: f64,
    sum_sq: Vec<f64>,
    count: u64,
}

impl ArrivalProcess {
    pub fn new(cfg: &SimConfig) -> Self {
        Self {
            lo: cfg.arrival_lo,
            hi: cfg.arrival_hi,
            w_lo: cfg.cycles_per_bit_lo,
            w_hi: cfg.cycles_per_bit_hi,
            sum_sq: vec![0.0; cfg.total_followers()],
            count: 0,
        }
    }

    /// Samples one slot. The second-moment estimate starts at the closed-form
    /// uniform value and becomes the running empirical mean of A².
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ArrivalBatch {
        let n = self.sum_sq.len();
        let mut bits = Vec::with_capacity(n);
        let mut cycles_per_bit = Vec::with_capacity(n);
        for _ in 0..n {
            bits.push(uniform(rng, self.lo, self.hi));
            cycles_per_bit.push(uniform(rng, self.w_lo, self.w_hi));
        }
        self.count += 1;
        let prior = uniform_second_moment(self.lo, self.hi);
        let second_moment_est = self
            .sum_sq
            .iter_mut()
            .zip(&bits)
            .map(|(acc, &a)| {
                *acc += a * a;
                // One pseudo-observation of the closed-form prior.
                (*acc + prior) / (self.count as f64 + 1.0)
            })
            .collect();
        ArrivalBatch {
            bits,
            cycles_per_bit,
            second_moment_est,
        }
    }
}

/// `sample_arrivals` as a one-shot call on a fresh process.
pub fn sample_arrivals<R: Rng + ?Sized>(rng: &mut R, cfg: &SimConfig) -> ArrivalBatch {
    ArrivalProcess::new(cfg).sample(rng)
}

/// MBS-to-LEO distances and excess losses for one slot, per (n, m, o).
#[derive(Debug, Clone, PartialEq)]
pub struct LeoGeometry {
    pub n_leo: usize,
    pub horizontal_dist: Vec<f64>,
    pub vertical_dist: Vec<f64>,
    pub eps_los: Vec<f64>,
    pub eps_nlos: Vec<f64>,
}

impl LeoGeometry {
    fn idx(&self, follower: usize, leo: usize) -> usize {
        follower * self.n_leo + leo
    }

    pub fn x(&self, follower: usize, leo: usize) -> f64 {
        self.horizontal_dist[self.idx(follower, leo)]
    }

    pub fn y(&self, follower: usize, leo: usize) -> f64 {
        self.vertical_dist[self.idx(follower, leo)]
    }

    pub fn slant_range(&self, follower: usize, leo: usize) -> f64 {
        self.x(follower, leo).hypot(self.y(follower, leo))
    }

    /// LEO with the smallest slant range (lowest index on ties).
    pub fn nearest_leo(&self, follower: usize) -> usize {
        let mut best = 0;
        for o in 1..self.n_leo {
            if self.slant_range(follower, o) < self.slant_range(follower, best) {
                best = o;
            }
        }
        best
    }
}

/// Resamples every (n, m, o) distance and excess loss uniformly from the configured ranges.
pub fn step_geometry<R: Rng + ?Sized>(rng: &mut R, cfg: &SimConfig) -> LeoGeometry {
    let len = cfg.total_followers() * cfg.n_leo;
    let mut g = LeoGeometry {
        n_leo: cfg.n_leo,
        horizontal_dist: Vec::with_capacity(len),
        vertical_dist: Vec::with_capacity(len),
        eps_los: Vec::with_capacity(len),
        eps_nlos: Vec::with_capacity(len),
    };
    for _ in 0..len {
        g.horizontal_dist.push(uniform(rng, cfg.x_lo, cfg.x_hi));
        g.vertical_dist.push(uniform(rng, cfg.y_lo, cfg.y_hi));
        g.eps_los.push(uniform(rng, cfg.eps_los_lo, cfg.eps_los_hi));
        g.eps_nlos.push(uniform(rng, cfg.eps_nlos_lo, cfg.eps_nlos_hi));
    }
    g
}

/// Constants of the air-to-ground loss model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub carrier_freq: f64,
    pub light_speed: f64,
    pub b1: f64,
    pub b2: f64,
}

impl LinkParams {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            carrier_freq: cfg.carrier_freq,
            light_speed: cfg.light_speed,
            b1: cfg.b1,
            b2: cfg.b2,
        }
    }
}

/// LoS probability `1 / (1 + b1·exp(-b2·(θ - b1)))` with elevation θ = atan(y/x) in degrees.
pub fn los_probability(x: f64, y: f64, b1: f64, b2: f64) -> Result<f64, ModelError> {
    ensure_positive("horizontal distance", x)?;
    ensure_positive("vertical distance", y)?;
    let theta = (y / x).atan().to_degrees();
    Ok(1.0 / (1.0 + b1 * (-b2 * (theta - b1)).exp()))
}

/// Free-space term `20·log10(4π f_c d / c)` with d the slant range.
pub fn free_space_loss(x: f64, y: f64, carrier_freq: f64, light_speed: f64) -> Result<f64, ModelError> {
    ensure_positive("horizontal distance", x)?;
    ensure_positive("vertical distance", y)?;
    let d = x.hypot(y);
    Ok(20.0 * (4.0 * std::f64::consts::PI * carrier_freq * d / light_speed).log10())
}

/// Path loss in dB: free-space term plus the LoS/NLoS mixture of excess losses.
pub fn path_loss(x: f64, y: f64, link: &LinkParams, eps_los: f64, eps_nlos: f64) -> Result<f64, ModelError> {
    let p = los_probability(x, y, link.b1, link.b2)?;
    let fs = free_space_loss(x, y, link.carrier_freq, link.light_speed)?;
    Ok(fs + p * eps_los + (1.0 - p) * eps_nlos)
}

/// Squared linear channel gain `|10^{-L/10}|²` for a loss of `loss_db`.
pub fn gain_squared(loss_db: f64) -> f64 {
    let g = 10f64.powf(-loss_db / 10.0);
    g * g
}

/// Channel use of every follower in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAssignment {
    pub n_mbs: usize,
    pub followers_per_mbs: usize,
    pub n_channels: usize,
    /// Channel held by each follower, if transmitting.
    pub channel: Vec<Option<usize>>,
    /// Transmit power of each follower on its channel, W.
    pub power: Vec<f64>,
    /// Target LEO of each offloading follower.
    pub offload_target: Vec<Option<usize>>,
}

impl ChannelAssignment {
    pub fn idle(n_mbs: usize, followers_per_mbs: usize, n_channels: usize) -> Self {
        let n = n_mbs * followers_per_mbs;
        Self {
            n_mbs,
            followers_per_mbs,
            n_channels,
            channel: vec![None; n],
            power: vec![0.0; n],
            offload_target: vec![None; n],
        }
    }

    /// β_{q,m,r}: whether follower m of MBS q transmits on channel r.
    pub fn indicator(&self, mbs: usize, follower: usize, channel: usize) -> bool {
        self.channel[mbs * self.followers_per_mbs + follower] == Some(channel)
    }

    /// P_{q,m,r}: transmit power of follower m of MBS q on channel r.
    pub fn power_on(&self, mbs: usize, follower: usize, channel: usize) -> f64 {
        if self.indicator(mbs, follower, channel) {
            self.power[mbs * self.followers_per_mbs + follower]
        } else {
            0.0
        }
    }
}

/// Interference on channel `r` at MBS `n`: Σ_{q≠n} Σ_m β P |10^{-L/10}|².
/// `losses` holds each follower's path loss toward its target, in dB.
pub fn interference(assign: &ChannelAssignment, losses: &[f64], target_mbs: usize, channel: usize) -> f64 {
    let m_per = assign.followers_per_mbs;
    let mut total = 0.0;
    for q in (0..assign.n_mbs).filter(|&q| q != target_mbs) {
        for m in 0..m_per {
            let i = q * m_per + m;
            if assign.channel[i] == Some(channel) {
                total += assign.power[i] * gain_squared(losses[i]);
            }
        }
    }
    total
}

/// Interference at every (MBS, channel), indexed `n * R + r`. One pass over
/// followers; equal to calling [`interference`] for each pair.
pub fn interference_table(assign: &ChannelAssignment, losses: &[f64]) -> Vec<f64> {
    let r_count = assign.n_channels;
    let mut per_mbs = vec![0.0; assign.n_mbs * r_count];
    for (i, ch) in assign.channel.iter().enumerate() {
        if let Some(r) = *ch {
            per_mbs[(i / assign.followers_per_mbs) * r_count + r] += assign.power[i] * gain_squared(losses[i]);
        }
    }
    let mut out = vec![0.0; assign.n_mbs * r_count];
    for n in 0..assign.n_mbs {
        for r in 0..r_count {
            out[n * r_count + r] = (0..assign.n_mbs)
                .filter(|&q| q != n)
                .map(|q| per_mbs[q * r_count + r])
                .sum::<f64>()
                + 0.0;
        }
    }
    out
}

/// Achievable offloading rate `B·log2(1 + a·P·|10^{-L/10}|² / (σ² + I))` in bits/s.
pub fn offload_rate(
    bandwidth: f64,
    offload: bool,
    power: f64,
    loss_db: f64,
    noise_power: f64,
    interference: f64,
) -> f64 {
    if !offload {
        return 0.0;
    }
    let sinr = power * gain_squared(loss_db) / (noise_power + interference);
    bandwidth * sinr.ln_1p() / std::f64::consts::LN_2
}

/// Bits processed locally in a slot: `f·T/w`.
pub fn local_bits(freq: f64, cycles_per_bit: f64, slot: f64) -> Result<f64, ModelError> {
    ensure_positive("cycles per bit", cycles_per_bit)?;
    ensure_non_negative("CPU frequency", freq)?;
    Ok(freq * slot / cycles_per_bit)
}

/// Bits offloaded in a slot: `R·T`.
pub fn offload_bits(rate: f64, slot: f64) -> f64 {
    rate * slot
}
