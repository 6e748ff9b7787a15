//! Two-stage pricing game: the leader quotes per-follower prices from the
//! previous slot's CPU frequencies and its unit cost; followers respond
//! through their own drift-plus-penalty objective.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{PriceTerm, SimConfig};
use crate::error::{ensure_non_negative, ModelError};
use crate::nn::{clip_norm, Adam, PolicyParams};
use crate::policy::{squash, squash_grad};

/// Leader profit `Σ (λ − c)·f`.
pub fn leader_profit(prices: &[f64], freqs: &[f64], unit_cost: f64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (&p, &f) in prices.iter().zip(freqs) {
        ensure_non_negative("price", p)?;
        total += p * f - unit_cost * f;
    }
    Ok(total)
}

/// Follower utility `F1 − F2` with `F2 = C_SBC − λ·f` (literal) or
/// `F2 = C_SBC + λ·f` (price as cost).
pub fn follower_utility(throughput_avg: f64, overhead: f64, price: f64, freq: f64, term: PriceTerm) -> f64 {
    let price_term = match term {
        PriceTerm::Literal => -price * freq,
        PriceTerm::Cost => price * freq,
    };
    throughput_avg - (overhead + price_term)
}

/// Exponentially weighted running mean of served bits (the F1 surrogate).
#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputAverage {
    pub weight: f64,
    pub value: Vec<f64>,
    started: bool,
}

impl ThroughputAverage {
    pub fn new(followers: usize, weight: f64) -> Self {
        Self { weight, value: vec![0.0; followers], started: false }
    }

    pub fn update(&mut self, served: &[f64]) {
        if !self.started {
            self.value.copy_from_slice(served);
            self.started = true;
            return;
        }
        for (v, &d) in self.value.iter_mut().zip(served) {
            *v += self.weight * (d - *v);
        }
    }
}

/// What the leader observes: the previous slot's frequencies and its unit cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderState {
    pub follower_freqs: Vec<f64>,
    pub unit_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceQuote {
    pub price: Vec<f64>,
}

/// Normalisers of the leader's inputs and value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderContext {
    pub price_cap: f64,
    pub f_max: f64,
    pub freq_unit: f64,
}

impl LeaderContext {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self { price_cap: cfg.price_cap, f_max: cfg.follower_max_freq, freq_unit: cfg.freq_unit }
    }

    fn cost_feature(&self, c: f64) -> f64 {
        if self.price_cap > 0.0 { c / self.price_cap } else { c }
    }

    fn actor_input(&self, f: f64, c: f64) -> [f64; 2] {
        [f / self.f_max, self.cost_feature(c)]
    }

    fn critic_input(&self, f: f64, c: f64, price: f64) -> [f64; 3] {
        let p = if self.price_cap > 0.0 { price / self.price_cap } else { 0.0 };
        [f / self.f_max, self.cost_feature(c), p]
    }

    fn value_scale(&self) -> f64 {
        (self.price_cap.max(1.0) * self.f_max / self.freq_unit).max(1e-12)
    }
}

/// Prices for every follower; projection keeps each quote in `[0, λ_max]`.
pub fn leader_select<R: Rng + ?Sized>(
    state: &LeaderState,
    actor: &PolicyParams,
    ctx: &LeaderContext,
    rng: &mut R,
    sigma: Option<f64>,
) -> PriceQuote {
    let price = state
        .follower_freqs
        .iter()
        .map(|&f| {
            let z = actor.forward(&ctx.actor_input(f, state.unit_cost))[0];
            let noise = match sigma {
                Some(s) => s * rng.sample::<f64, _>(StandardNormal),
                None => 0.0,
            };
            ctx.price_cap * squash(z + noise)
        })
        .collect();
    PriceQuote { price }
}

/// One logged leader decision for a single follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderSample {
    pub freq_prev: f64,
    pub unit_cost: f64,
    pub price: f64,
    /// Realised `(λ − c)·f` in units of `freq_unit`.
    pub profit: f64,
}

/// The leader's actor-critic learner (trajectories Ψ).
#[derive(Debug, Clone)]
pub struct LeaderAgent {
    pub actor: PolicyParams,
    pub critic: PolicyParams,
    actor_opt: Adam,
    critic_opt: Adam,
    replay: std::collections::VecDeque<Vec<LeaderSample>>,
    replay_cap: usize,
    pub ctx: LeaderContext,
}

impl LeaderAgent {
    pub fn new<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Self {
        let mut actor_layout = vec![2];
        actor_layout.extend_from_slice(&cfg.hidden_layers);
        actor_layout.push(1);
        let mut critic_layout = vec![3];
        critic_layout.extend_from_slice(&cfg.hidden_layers);
        critic_layout.push(1);
        let actor = PolicyParams::init(actor_layout, rng, 0.1);
        let critic = PolicyParams::init(critic_layout, rng, 0.1);
        Self {
            actor_opt: Adam::new(actor.weights.len(), cfg.leader_lr),
            critic_opt: Adam::new(critic.weights.len(), cfg.leader_lr),
            actor,
            critic,
            replay: Default::default(),
            replay_cap: cfg.replay_episodes,
            ctx: LeaderContext::from_config(cfg),
        }
    }

    pub fn select<R: Rng + ?Sized>(&self, state: &LeaderState, rng: &mut R, sigma: Option<f64>) -> PriceQuote {
        leader_select(state, &self.actor, &self.ctx, rng, sigma)
    }

    /// Estimated profit of quoting `price` to a follower that used `f` last slot.
    pub fn value(&self, f: f64, c: f64, price: f64) -> f64 {
        self.critic.forward(&self.ctx.critic_input(f, c, price))[0] * self.ctx.value_scale()
    }

    pub fn push_episode(&mut self, samples: Vec<LeaderSample>) {
        if samples.is_empty() {
            return;
        }
        self.replay.push_back(samples);
        while self.replay.len() > self.replay_cap {
            self.replay.pop_front();
        }
    }

    pub fn train<R: Rng + ?Sized>(&mut self, rng: &mut R, batch_size: usize, updates: usize) {
        let total: usize = self.replay.iter().map(Vec::len).sum();
        if total == 0 {
            return;
        }
        let ctx = self.ctx;
        for _ in 0..updates {
            let batch: Vec<LeaderSample> = (0..batch_size)
                .map(|_| {
                    let mut k = rng.gen_range(0..total);
                    let mut ep = 0;
                    while k >= self.replay[ep].len() {
                        k -= self.replay[ep].len();
                        ep += 1;
                    }
                    self.replay[ep][k]
                })
                .collect();
            let mut g = leader_critic_grad(&self.critic, &ctx, &batch).1;
            clip_norm(&mut g, 10.0);
            self.critic_opt.step(&mut self.critic.weights, &g);

            // Ascend the critic: the optimiser descends, so negate.
            let mut g: Vec<f64> = leader_actor_grad(&self.actor, &self.critic, &ctx, &batch).1.iter().map(|g| -g).collect();
            clip_norm(&mut g, 10.0);
            self.actor_opt.step(&mut self.actor.weights, &g);
        }
    }
}

/// Mean squared error of the normalised profit estimate and its gradient.
pub fn leader_critic_grad(critic: &PolicyParams, ctx: &LeaderContext, batch: &[LeaderSample]) -> (f64, Vec<f64>) {
    let inv = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut g = vec![0.0; critic.weights.len()];
    for s in batch {
        let cache = critic.forward_cached(&ctx.critic_input(s.freq_prev, s.unit_cost, s.price));
        let e = cache.output()[0] - s.profit / ctx.value_scale();
        loss += inv * e * e;
        critic.backward(&cache, &[2.0 * inv * e], Some(&mut g));
    }
    (loss, g)
}

/// Mean critic value of the actor's quotes and its gradient w.r.t. the actor
/// (ascent direction, straight through the price clip).
pub fn leader_actor_grad(actor: &PolicyParams, critic: &PolicyParams, ctx: &LeaderContext, batch: &[LeaderSample]) -> (f64, Vec<f64>) {
    let inv = 1.0 / batch.len().max(1) as f64;
    let mut value = 0.0;
    let mut g = vec![0.0; actor.weights.len()];
    for s in batch {
        let a_cache = actor.forward_cached(&ctx.actor_input(s.freq_prev, s.unit_cost));
        let z = a_cache.output()[0];
        let price = ctx.price_cap * squash(z);
        let c_cache = critic.forward_cached(&ctx.critic_input(s.freq_prev, s.unit_cost, price));
        value += inv * c_cache.output()[0];
        let gx = critic.backward(&c_cache, &[1.0], None);
        let d_price = if ctx.price_cap > 0.0 { gx[2] / ctx.price_cap } else { 0.0 };
        actor.backward(&a_cache, &[inv * d_price * ctx.price_cap * squash_grad(z)], Some(&mut g));
    }
    (value, g)
}
