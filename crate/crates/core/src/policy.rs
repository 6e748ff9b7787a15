//! Follower actor-critic: local state, four-part action, structured critic
//! and the update rules.
//!
//! The actor maps the 7 local state features to
//! `[cpu logit, block logit, offload logit, channel logits...]`. Continuous
//! heads are squashed into `[0, 1]` and scaled into their constraint boxes;
//! discrete heads are argmax when not exploring.
//!
//! The critic predicts four normalised heads `[served, cpu used, overhead,
//! continuation]` and combines them with state-dependent coefficients into
//! `Q(S, A) = (q + V)·D − V·λ·f − V·C + G`, the drift-plus-penalty value in
//! objective units. Each head regresses on its own logged primitive, which
//! keeps the small overhead term learnable next to the much larger queue term.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::SimConfig;
use crate::nn::{argmax, sigmoid, softmax, Adam, PolicyParams};
use crate::queueing::dpp_objective;

pub const STATE_DIM: usize = 7;
pub const CRITIC_HEADS: usize = 4;
/// Margin of the clipped sigmoid that lets continuous heads reach 0 and 1 exactly.
const SQUASH_MARGIN: f64 = 0.05;
/// Upper clip of the normalised overhead target.
const OVERHEAD_CLIP: f64 = 10.0;

/// What a follower observes at the start of a slot. Never holds peer data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerState {
    /// Bits arriving this slot (A).
    pub arrival: f64,
    /// Geometry of the nearest LEO, meters.
    pub leo_x: f64,
    pub leo_y: f64,
    /// Quoted price λ.
    pub price: f64,
    /// Backlog Q in bits.
    pub queue: f64,
    /// Cycles per bit of the queued work (w).
    pub cycles_per_bit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerAction {
    /// Local CPU frequency, cycles/s; used only when processing locally.
    pub cpu_freq: f64,
    /// Channel index, 0-based.
    pub channel: usize,
    /// Offload to the nearest LEO instead of processing locally.
    pub offload: bool,
    /// Block size S_B in bits.
    pub block_size: f64,
}

/// Scales, bounds and coefficients shared by every follower policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyContext {
    pub arrival_hi: f64,
    pub x_hi: f64,
    pub y_hi: f64,
    pub price_cap: f64,
    pub w_hi: f64,
    pub f_max: f64,
    pub slot: f64,
    pub block_min: f64,
    pub block_max: f64,
    pub n_channels: usize,
    pub bit_unit: f64,
    pub freq_unit: f64,
    pub v: f64,
    /// Normalisers of the critic heads.
    pub d_scale: f64,
    pub f_scale: f64,
    pub c_scale: f64,
    pub g_scale: f64,
}

impl PolicyContext {
    pub fn from_config(cfg: &SimConfig) -> Self {
        let d_scale = (cfg.arrival_hi / cfg.bit_unit).max(1e-12);
        let overhead = crate::env::OverheadModel::from_config(cfg);
        Self {
            arrival_hi: cfg.arrival_hi.max(1e-12),
            x_hi: cfg.x_hi,
            y_hi: cfg.y_hi,
            price_cap: cfg.price_cap,
            w_hi: cfg.cycles_per_bit_hi,
            f_max: cfg.follower_max_freq,
            slot: cfg.slot_duration,
            block_min: cfg.block_min,
            block_max: cfg.block_max,
            n_channels: cfg.n_channels,
            bit_unit: cfg.bit_unit,
            freq_unit: cfg.freq_unit,
            v: cfg.v_lyapunov,
            d_scale,
            f_scale: (cfg.follower_max_freq / cfg.freq_unit).max(1e-12),
            c_scale: overhead.reference_overhead().max(1e-12),
            g_scale: d_scale * d_scale,
        }
    }

    pub fn actor_layout(&self, hidden: &[usize]) -> Vec<usize> {
        let mut l = vec![STATE_DIM];
        l.extend_from_slice(hidden);
        l.push(3 + self.n_channels);
        l
    }

    pub fn critic_input_dim(&self) -> usize {
        STATE_DIM + 4 + self.n_channels
    }

    pub fn critic_layout(&self, hidden: &[usize]) -> Vec<usize> {
        let mut l = vec![self.critic_input_dim()];
        l.extend_from_slice(hidden);
        l.push(CRITIC_HEADS);
        l
    }

    pub fn state_features(&self, s: &FollowerState) -> [f64; STATE_DIM] {
        let q = s.queue / self.arrival_hi;
        [
            s.arrival / self.arrival_hi,
            s.leo_x / self.x_hi,
            s.leo_y / self.y_hi,
            if self.price_cap > 0.0 { s.price / self.price_cap } else { 0.0 },
            s.cycles_per_bit / self.w_hi,
            // Bounded so a runaway backlog cannot saturate the hidden layers.
            q / (1.0 + q),
            q.ln_1p(),
        ]
    }

    /// Upper end of the CPU box: `min(f_max, w·Q/T)`.
    pub fn cpu_box(&self, s: &FollowerState) -> f64 {
        self.f_max.min(s.cycles_per_bit * s.queue / self.slot).max(0.0)
    }

    fn block_span(&self) -> f64 {
        self.block_max - self.block_min
    }

    pub fn critic_input(&self, s: &FollowerState, a: &FollowerAction) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.critic_input_dim());
        x.extend_from_slice(&self.state_features(s));
        x.push(a.cpu_freq / self.f_max);
        x.push(a.cpu_freq * self.slot / s.cycles_per_bit / self.arrival_hi);
        x.push(if self.block_span() > 0.0 { (a.block_size - self.block_min) / self.block_span() } else { 0.0 });
        x.push(if a.offload { 1.0 } else { 0.0 });
        for r in 0..self.n_channels {
            x.push(if r == a.channel { 1.0 } else { 0.0 });
        }
        x
    }

    /// Coefficients turning critic heads into `Q(S, A)` for state `s`.
    pub fn head_weights(&self, s: &FollowerState) -> [f64; CRITIC_HEADS] {
        let q = s.queue / self.bit_unit;
        [
            (q + self.v) * self.d_scale,
            -self.v * s.price * self.f_scale,
            -self.v * self.c_scale,
            self.g_scale,
        ]
    }

    /// Checks the action constraint set: CPU box, block bounds, channel range.
    pub fn check_action(&self, s: &FollowerState, a: &FollowerAction) -> Result<(), String> {
        let tol = 1e-9;
        let cpu_hi = self.cpu_box(s);
        if !(a.cpu_freq >= 0.0 && a.cpu_freq <= cpu_hi * (1.0 + tol)) {
            return Err(format!("cpu_freq {} outside [0, {cpu_hi}]", a.cpu_freq));
        }
        if !(a.block_size >= self.block_min * (1.0 - tol) && a.block_size <= self.block_max * (1.0 + tol)) {
            return Err(format!("block_size {} outside [{}, {}]", a.block_size, self.block_min, self.block_max));
        }
        if a.channel >= self.n_channels {
            return Err(format!("channel {} outside [0, {})", a.channel, self.n_channels));
        }
        Ok(())
    }

    /// Builds an action from unit-interval fractions, clamping into the boxes.
    pub fn action_from_fractions(&self, s: &FollowerState, cpu: f64, block: f64, channel: usize, offload: bool) -> FollowerAction {
        FollowerAction {
            cpu_freq: cpu.clamp(0.0, 1.0) * self.cpu_box(s),
            channel: channel.min(self.n_channels - 1),
            offload,
            block_size: self.block_min + block.clamp(0.0, 1.0) * self.block_span(),
        }
    }
}

/// Clipped sigmoid `clamp((1 + 2m)·σ(z) − m, 0, 1)`.
pub fn squash(z: f64) -> f64 {
    ((1.0 + 2.0 * SQUASH_MARGIN) * sigmoid(z) - SQUASH_MARGIN).clamp(0.0, 1.0)
}

/// Derivative of the unclipped squash; used straight through the clip so
/// saturated heads keep receiving gradient.
pub fn squash_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    (1.0 + 2.0 * SQUASH_MARGIN) * s * (1.0 - s)
}

/// Exact derivative of `squash`, zero where the clip is active.
pub fn squash_grad_exact(z: f64) -> f64 {
    let raw = (1.0 + 2.0 * SQUASH_MARGIN) * sigmoid(z) - SQUASH_MARGIN;
    if raw <= 0.0 || raw >= 1.0 {
        0.0
    } else {
        squash_grad(z)
    }
}

/// Exploration strength for one selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exploration {
    /// Probability of a uniformly random discrete choice.
    pub eps: f64,
    /// Std-dev of Gaussian noise on continuous logits.
    pub sigma: f64,
}

impl Exploration {
    /// Linear annealing from the start to the end values over `total` episodes.
    pub fn schedule(cfg: &SimConfig, episode: usize, total: usize) -> Self {
        let frac = if total > 1 { (episode as f64 / (total - 1) as f64).min(1.0) } else { 1.0 };
        Self {
            eps: cfg.explore_eps_start + (cfg.explore_eps_end - cfg.explore_eps_start) * frac,
            sigma: cfg.explore_sigma_start + (cfg.explore_sigma_end - cfg.explore_sigma_start) * frac,
        }
    }
}

/// Deterministic action for given actor outputs.
pub fn greedy_action(ctx: &PolicyContext, s: &FollowerState, out: &[f64]) -> FollowerAction {
    ctx.action_from_fractions(s, squash(out[0]), squash(out[1]), argmax(&out[3..]), out[2] > 0.0)
}

/// Maps state to action; projection keeps every output feasible.
pub fn actor_select<R: Rng + ?Sized>(
    state: &FollowerState,
    actor: &PolicyParams,
    ctx: &PolicyContext,
    rng: &mut R,
    explore: Option<Exploration>,
) -> FollowerAction {
    let out = actor.forward(&ctx.state_features(state));
    let Some(ex) = explore else {
        return greedy_action(ctx, state, &out);
    };
    let n1: f64 = rng.sample(StandardNormal);
    let n2: f64 = rng.sample(StandardNormal);
    let cpu = squash(out[0] + ex.sigma * n1);
    let block = squash(out[1] + ex.sigma * n2);
    let offload = if rng.gen::<f64>() < ex.eps {
        rng.gen::<bool>()
    } else {
        rng.gen::<f64>() < sigmoid(out[2])
    };
    let channel = if rng.gen::<f64>() < ex.eps {
        rng.gen_range(0..ctx.n_channels)
    } else {
        let probs = softmax(&out[3..]);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = ctx.n_channels - 1;
        for (r, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = r;
                break;
            }
        }
        pick
    };
    ctx.action_from_fractions(state, cpu, block, channel, offload)
}

/// Action-value function consumed by the actor update.
pub trait Critic {
    fn value(&self, s: &FollowerState, a: &FollowerAction) -> f64;
    /// Overhead component of the value, the only term that depends on the
    /// block size.
    fn overhead_value(&self, s: &FollowerState, a: &FollowerAction) -> f64;
    /// Value, its partial derivative w.r.t. `cpu_freq`, and the derivative of
    /// the overhead component w.r.t. `block_size`.
    fn value_and_grad(&self, s: &FollowerState, a: &FollowerAction) -> (f64, f64, f64);
}

/// Neural critic bound to its context.
pub struct NetCritic<'a> {
    pub params: &'a PolicyParams,
    pub ctx: &'a PolicyContext,
}

impl Critic for NetCritic<'_> {
    fn value(&self, s: &FollowerState, a: &FollowerAction) -> f64 {
        critic_value(s, a, self.params, self.ctx)
    }

    fn overhead_value(&self, s: &FollowerState, a: &FollowerAction) -> f64 {
        self.params.forward(&self.ctx.critic_input(s, a))[2] * self.ctx.head_weights(s)[2]
    }

    fn value_and_grad(&self, s: &FollowerState, a: &FollowerAction) -> (f64, f64, f64) {
        let ctx = self.ctx;
        let cache = self.params.forward_cached(&ctx.critic_input(s, a));
        let w = ctx.head_weights(s);
        let value = cache.output().iter().zip(&w).map(|(h, c)| h * c).sum();
        let gx = self.params.backward(&cache, &w, None);
        let d_cpu = gx[STATE_DIM] / ctx.f_max + gx[STATE_DIM + 1] * ctx.slot / s.cycles_per_bit / ctx.arrival_hi;
        // Served bits and CPU use do not depend on the block size; their heads'
        // fitted slopes in it are noise that would swamp the overhead signal.
        let mut w_ovh = [0.0; CRITIC_HEADS];
        w_ovh[2] = w[2];
        let gb = self.params.backward(&cache, &w_ovh, None);
        let span = ctx.block_max - ctx.block_min;
        let d_block = if span > 0.0 { gb[STATE_DIM + 2] / span } else { 0.0 };
        (value, d_cpu, d_block)
    }
}

/// Scalar action-value estimate `Q(S, A)`.
pub fn critic_value(s: &FollowerState, a: &FollowerAction, params: &PolicyParams, ctx: &PolicyContext) -> f64 {
    let heads = params.forward(&ctx.critic_input(s, a));
    heads.iter().zip(ctx.head_weights(s)).map(|(h, c)| h * c).sum()
}

/// Realised primitives of one follower-slot, in raw units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    /// Backlog at decision time, bits.
    pub queue: f64,
    pub served: f64,
    /// CPU frequency actually used for local processing, cycles/s.
    pub freq_used: f64,
    pub price: f64,
    /// C_SBC, seconds.
    pub overhead: f64,
}

impl Outcome {
    /// Drift-plus-penalty reward in objective units.
    pub fn reward(&self, ctx: &PolicyContext) -> f64 {
        dpp_objective(
            self.queue / ctx.bit_unit,
            self.served / ctx.bit_unit,
            self.freq_used / ctx.freq_unit,
            self.price,
            self.overhead,
            ctx.v,
        )
    }
}

/// Ω = {S′ | S, A, R} for one follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: FollowerState,
    pub action: FollowerAction,
    pub outcome: Outcome,
    pub reward: f64,
    pub next_state: FollowerState,
}

/// Per-head regression targets. Weighted by `head_weights(state)` they sum to
/// `reward + continuation` exactly (up to the overhead clip).
pub fn critic_targets(ctx: &PolicyContext, tr: &Transition, continuation: f64) -> [f64; CRITIC_HEADS] {
    [
        tr.outcome.served / ctx.bit_unit / ctx.d_scale,
        tr.outcome.freq_used / ctx.freq_unit / ctx.f_scale,
        (tr.outcome.overhead / ctx.c_scale).min(OVERHEAD_CLIP),
        continuation / ctx.g_scale,
    ]
}

/// Continuation values `γ·Q(S′, μ(S′))` for a batch.
pub fn continuations(batch: &[&Transition], critic: &PolicyParams, actor: &PolicyParams, ctx: &PolicyContext, gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|tr| {
            if gamma == 0.0 {
                return 0.0;
            }
            let out = actor.forward(&ctx.state_features(&tr.next_state));
            let next = greedy_action(ctx, &tr.next_state, &out);
            gamma * critic_value(&tr.next_state, &next, critic, ctx)
        })
        .collect()
}

/// Mean squared head error and its gradient for fixed continuation targets.
pub fn critic_loss_grad(critic: &PolicyParams, batch: &[&Transition], conts: &[f64], ctx: &PolicyContext) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; critic.weights.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for (tr, &cont) in batch.iter().zip(conts) {
        let cache = critic.forward_cached(&ctx.critic_input(&tr.state, &tr.action));
        let target = critic_targets(ctx, tr, cont);
        let mut g_out = [0.0; CRITIC_HEADS];
        for h in 0..CRITIC_HEADS {
            let e = cache.output()[h] - target[h];
            loss += scale * e * e;
            g_out[h] = 2.0 * scale * e;
        }
        critic.backward(&cache, &g_out, Some(&mut grad));
    }
    (loss, grad)
}

/// One SGD step on the critic loss with `A′` from the current actor.
pub fn critic_update(
    batch: &[&Transition],
    params: &PolicyParams,
    actor: &PolicyParams,
    ctx: &PolicyContext,
    gamma: f64,
    lr: f64,
) -> PolicyParams {
    let conts = continuations(batch, params, actor, ctx, gamma);
    let (_, grad) = critic_loss_grad(params, batch, &conts, ctx);
    let mut next = params.clone();
    next.weights.iter_mut().zip(&grad).for_each(|(w, g)| *w -= lr * g);
    next
}

/// Frozen quantities of the actor objective at a parameter point: the greedy
/// discrete choices, the deterministic continuous action and the critic
/// values of every discrete alternative.
#[derive(Debug, Clone)]
pub struct ActorAnchor {
    pub action: FollowerAction,
    pub channel_values: Vec<f64>,
    pub offload_values: [f64; 2],
}

pub fn actor_anchors<C: Critic>(actor: &PolicyParams, critic: &C, states: &[FollowerState], ctx: &PolicyContext) -> Vec<ActorAnchor> {
    states
        .iter()
        .map(|s| {
            let out = actor.forward(&ctx.state_features(s));
            let action = greedy_action(ctx, s, &out);
            let channel_values = (0..ctx.n_channels)
                .map(|r| critic.value(s, &FollowerAction { channel: r, ..action }))
                .collect();
            let offload_values = [
                critic.value(s, &FollowerAction { offload: false, ..action }),
                critic.value(s, &FollowerAction { offload: true, ..action }),
            ];
            ActorAnchor { action, channel_values, offload_values }
        })
        .collect()
}

/// Surrogate objective whose gradient is the actor update direction:
/// deterministic policy gradient on the continuous heads (the block head
/// through the overhead component only) plus the
/// critic-weighted expectation over each discrete head.
pub fn actor_surrogate<C: Critic>(
    actor: &PolicyParams,
    critic: &C,
    states: &[FollowerState],
    anchors: &[ActorAnchor],
    ctx: &PolicyContext,
) -> f64 {
    let mut total = 0.0;
    for (s, anchor) in states.iter().zip(anchors) {
        let out = actor.forward(&ctx.state_features(s));
        let cpu_freq = squash(out[0]) * ctx.cpu_box(s);
        let block_size = ctx.block_min + squash(out[1]) * (ctx.block_max - ctx.block_min);
        total += critic.value(s, &FollowerAction { cpu_freq, ..anchor.action });
        total += critic.overhead_value(s, &FollowerAction { block_size, ..anchor.action })
            - critic.overhead_value(s, &anchor.action);
        let p = sigmoid(out[2]);
        total += (1.0 - p) * anchor.offload_values[0] + p * anchor.offload_values[1];
        let probs = softmax(&out[3..]);
        total += probs.iter().zip(&anchor.channel_values).map(|(p, q)| p * q).sum::<f64>();
    }
    total / states.len().max(1) as f64
}

/// Surrogate value and its gradient w.r.t. the actor parameters (ascent direction).
pub fn actor_objective_grad<C: Critic>(
    actor: &PolicyParams,
    critic: &C,
    states: &[FollowerState],
    ctx: &PolicyContext,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; actor.weights.len()];
    let mut total = 0.0;
    let scale = 1.0 / states.len().max(1) as f64;
    let span = ctx.block_max - ctx.block_min;
    for s in states {
        let cache = actor.forward_cached(&ctx.state_features(s));
        let out = cache.output();
        let action = greedy_action(ctx, s, out);
        let (v, d_cpu, d_block) = critic.value_and_grad(s, &action);
        let mut g_out = vec![0.0; out.len()];
        g_out[0] = scale * d_cpu * ctx.cpu_box(s) * squash_grad(out[0]);
        g_out[1] = scale * d_block * span * squash_grad(out[1]);

        let q0 = critic.value(s, &FollowerAction { offload: false, ..action });
        let q1 = critic.value(s, &FollowerAction { offload: true, ..action });
        let p = sigmoid(out[2]);
        g_out[2] = scale * p * (1.0 - p) * (q1 - q0);

        let probs = softmax(&out[3..]);
        let qs: Vec<f64> = (0..ctx.n_channels)
            .map(|r| if r == action.channel { if action.offload { q1 } else { q0 } } else { critic.value(s, &FollowerAction { channel: r, ..action }) })
            .collect();
        let mean_q: f64 = probs.iter().zip(&qs).map(|(p, q)| p * q).sum();
        for r in 0..ctx.n_channels {
            g_out[3 + r] = scale * probs[r] * (qs[r] - mean_q);
        }
        total += scale * (v + (1.0 - p) * q0 + p * q1 + mean_q);
        actor.backward(&cache, &g_out, Some(&mut grad));
    }
    (total, grad)
}

/// One SGD ascent step of the actor on the critic's value of its actions.
pub fn actor_update<C: Critic>(
    states: &[FollowerState],
    actor: &PolicyParams,
    critic: &C,
    ctx: &PolicyContext,
    lr: f64,
) -> PolicyParams {
    let (_, grad) = actor_objective_grad(actor, critic, states, ctx);
    let mut next = actor.clone();
    next.weights.iter_mut().zip(&grad).for_each(|(w, g)| *w += lr * g);
    next
}

/// One follower's learner: actor, local critic, optimisers and recent episodes.
#[derive(Debug, Clone)]
pub struct FollowerAgent {
    pub actor: PolicyParams,
    pub critic: PolicyParams,
    actor_opt: Adam,
    critic_opt: Adam,
    replay: std::collections::VecDeque<Vec<Transition>>,
    replay_cap: usize,
}

/// Gradient norm ceiling applied before every optimiser step.
const GRAD_CLIP: f64 = 10.0;

impl FollowerAgent {
    pub fn new(actor: PolicyParams, critic: PolicyParams, cfg: &SimConfig) -> Self {
        Self {
            actor_opt: Adam::new(actor.weights.len(), cfg.actor_lr),
            critic_opt: Adam::new(critic.weights.len(), cfg.critic_lr),
            actor,
            critic,
            replay: Default::default(),
            replay_cap: cfg.replay_episodes,
        }
    }

    pub fn push_episode(&mut self, transitions: Vec<Transition>) {
        if transitions.is_empty() {
            return;
        }
        self.replay.push_back(transitions);
        while self.replay.len() > self.replay_cap {
            self.replay.pop_front();
        }
    }

    pub fn clear_replay(&mut self) {
        self.replay.clear();
    }

    /// Runs `updates` minibatch steps on the agent's own transitions only.
    pub fn train<R: Rng + ?Sized>(&mut self, rng: &mut R, ctx: &PolicyContext, cfg: &SimConfig, updates: usize) {
        let total: usize = self.replay.iter().map(Vec::len).sum();
        if total == 0 {
            return;
        }
        for _ in 0..updates {
            let batch: Vec<&Transition> = (0..cfg.batch_size)
                .map(|_| {
                    let mut k = rng.gen_range(0..total);
                    let mut ep = 0;
                    while k >= self.replay[ep].len() {
                        k -= self.replay[ep].len();
                        ep += 1;
                    }
                    &self.replay[ep][k]
                })
                .collect();
            let conts = continuations(&batch, &self.critic, &self.actor, ctx, cfg.gamma);
            let (_, mut g) = critic_loss_grad(&self.critic, &batch, &conts, ctx);
            crate::nn::clip_norm(&mut g, GRAD_CLIP);
            self.critic_opt.step(&mut self.critic.weights, &g);

            let states: Vec<FollowerState> = batch.iter().map(|t| t.state).collect();
            let critic = NetCritic { params: &self.critic, ctx };
            let (_, mut g) = actor_objective_grad(&self.actor, &critic, &states, ctx);
            // Normalise by the objective scale; the optimiser descends.
            g.iter_mut().for_each(|x| *x = -*x / ctx.g_scale);
            crate::nn::clip_norm(&mut g, GRAD_CLIP);
            self.actor_opt.step(&mut self.actor.weights, &g);
        }
    }
}
