//! First-order model-agnostic meta-learning of the follower actor and critic
//! initialisations.
//!
//! A task fixes a sub-range of the arrival and geometry distributions and a
//! price. The actor's task loss is the negative normalised undiscounted
//! return of greedy rollouts; its gradient is taken pathwise through each
//! follower's own queue dynamics with everyone else's actions held fixed.
//! The critic's task loss is its head regression loss on the same rollouts.

use rand::Rng;

use crate::config::SimConfig;
use crate::env::{SlotConstants, SlotReport};
use crate::nn::{sigmoid, softmax, PolicyParams};
use crate::policy::{
    continuations, critic_loss_grad, squash, squash_grad_exact, FollowerAction, PolicyContext, Transition, STATE_DIM,
};
use crate::rng::{stream, Stream};
use crate::sim::{initial_params, run_episode, EpisodeOptions, Followers, Prices};

/// Episode indices used by meta-training rollouts.
const META_EPISODE_BASE: u64 = 1 << 44;
/// Episode indices used by held-out adaptation trials.
pub const HELD_OUT_EPISODE_BASE: u64 = 1 << 46;

/// One draw from the task distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskContext {
    pub arrival_lo: f64,
    pub arrival_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub price: f64,
}

impl TaskContext {
    /// The configuration a task's rollouts run under.
    pub fn apply(&self, cfg: &SimConfig) -> SimConfig {
        SimConfig {
            arrival_lo: self.arrival_lo,
            arrival_hi: self.arrival_hi,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            y_lo: self.y_lo,
            y_hi: self.y_hi,
            ..cfg.clone()
        }
    }

    pub fn within(&self, cfg: &SimConfig) -> bool {
        let inside = |lo: f64, hi: f64, glo: f64, ghi: f64| glo <= lo && lo <= hi && hi <= ghi;
        inside(self.arrival_lo, self.arrival_hi, cfg.arrival_lo, cfg.arrival_hi)
            && inside(self.x_lo, self.x_hi, cfg.x_lo, cfg.x_hi)
            && inside(self.y_lo, self.y_hi, cfg.y_lo, cfg.y_hi)
            && (cfg.task_price_lo..=cfg.task_price_hi).contains(&self.price)
    }
}

fn sub_range<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> (f64, f64) {
    let a = crate::topology::uniform(rng, lo, hi);
    let b = crate::topology::uniform(rng, lo, hi);
    (a.min(b), a.max(b))
}

/// I.i.d. task contexts inside the configured global bounds.
pub fn sample_tasks<R: Rng + ?Sized>(rng: &mut R, cfg: &SimConfig, batch: usize) -> Vec<TaskContext> {
    (0..batch)
        .map(|_| {
            let (arrival_lo, arrival_hi) = sub_range(rng, cfg.arrival_lo, cfg.arrival_hi);
            let (x_lo, x_hi) = sub_range(rng, cfg.x_lo, cfg.x_hi);
            let (y_lo, y_hi) = sub_range(rng, cfg.y_lo, cfg.y_hi);
            let price = crate::topology::uniform(rng, cfg.task_price_lo, cfg.task_price_hi);
            TaskContext { arrival_lo, arrival_hi, x_lo, x_hi, y_lo, y_hi, price }
        })
        .collect()
}

/// A differentiable task loss over a flat parameter vector.
pub trait TaskObjective {
    fn loss_grad(&self, w: &PolicyParams) -> (f64, Vec<f64>);
}

/// `w′ = w − α∇L(w)`, repeated `steps` times.
pub fn inner_adapt<T: TaskObjective + ?Sized>(w: &PolicyParams, task: &T, alpha: f64, steps: usize) -> PolicyParams {
    let mut next = w.clone();
    for _ in 0..steps {
        let (_, g) = task.loss_grad(&next);
        next.weights.iter_mut().zip(&g).for_each(|(p, g)| *p -= alpha * g);
    }
    next
}

/// First-order outer step `w ← w − β Σ_Γ ∇L_Γ(w′_Γ)` from gradients taken at
/// each task's adapted parameters.
pub fn outer_update(meta: &PolicyParams, adapted_grads: &[Vec<f64>], beta: f64) -> PolicyParams {
    let mut next = meta.clone();
    for g in adapted_grads {
        next.weights.iter_mut().zip(g).for_each(|(p, g)| *p -= beta * g);
    }
    next
}

/// Meta-learned initialisation and its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub actor: PolicyParams,
    pub critic: PolicyParams,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_steps: usize,
    pub trajectories: usize,
}

/// Greedy rollouts of a shared actor on one task.
#[derive(Debug, Clone)]
pub struct Rollouts {
    pub reports: Vec<Vec<SlotReport>>,
    pub transitions: Vec<Transition>,
}

pub fn rollouts(cfg: &SimConfig, seed: u64, price: f64, episodes: &[u64], actor: &PolicyParams) -> Rollouts {
    let actors = vec![actor; cfg.total_followers()];
    let mut out = Rollouts { reports: Vec::new(), transitions: Vec::new() };
    for &ep in episodes {
        let trace = run_episode(
            cfg,
            seed,
            ep,
            &Followers::Learned(actors.clone()),
            &Prices::Fixed(price),
            EpisodeOptions { keep_reports: true, ..Default::default() },
            "maml",
        );
        out.reports.push(trace.reports);
        out.transitions.extend(trace.transitions.into_iter().flatten());
    }
    out
}

/// Undiscounted sum of every follower's reward over one trace, and its
/// ascent direction w.r.t. the shared actor. Continuous heads are
/// differentiated pathwise through each follower's queue, CPU box and
/// overhead with the other followers held fixed; the offload and channel
/// heads receive the probability-weighted one-slot counterfactual advantage.
pub fn return_gradient(actor: &PolicyParams, reports: &[SlotReport], pctx: &PolicyContext, k: &SlotConstants) -> (f64, Vec<f64>) {
    let n = reports.first().map_or(0, |r| r.states.len());
    let mut grad = vec![0.0; actor.weights.len()];
    let mut total = 0.0;
    let bu = k.bit_unit;
    let v = k.v;
    let o = &k.overhead;
    let span = pctx.block_max - pctx.block_min;
    for i in 0..n {
        // Adjoint of the next slot's backlog.
        let mut gq = 0.0;
        for rep in reports.iter().rev() {
            let ctx = &rep.contexts[i];
            let s = ctx.state;
            let a = rep.actions[i];
            let e = rep.evaluations[i];
            total += e.objective;

            let pass = if s.queue - e.served + rep.arrivals[i] > 0.0 { 1.0 } else { 0.0 };
            let g_d = (s.queue / bu + v) / bu - pass * gq;
            let f = e.freq_used;
            let slowest = if f > 0.0 { ctx.peer_min_freq.min(f) } else { ctx.peer_min_freq };
            let verifies = slowest > 0.0 && slowest.is_finite();
            let dc_db = o.spread_per_bit + if verifies { o.cycles_per_bit / slowest } else { 0.0 };
            let g_b = -v * dc_db;
            let g_f = if e.offload {
                0.0
            } else {
                let dc_df = if f > 0.0 && f < ctx.peer_min_freq { -a.block_size * o.cycles_per_bit / (f * f) } else { 0.0 };
                -v * s.price / k.freq_unit - v * dc_df + g_d * k.slot / s.cycles_per_bit
            };

            let cache = actor.forward_cached(&pctx.state_features(&s));
            let out = cache.output();
            let cpu_box = pctx.cpu_box(&s);
            let mut g_out = vec![0.0; out.len()];
            g_out[0] = g_f * squash_grad_exact(out[0]) * cpu_box;
            g_out[1] = g_b * squash_grad_exact(out[1]) * span;
            let cpu_frac = squash(out[0]);
            let gx = actor.backward(&cache, &g_out, Some(&mut grad));

            // Discrete heads: exact one-slot counterfactual advantages of the
            // alternative choices, weighted by the heads' probabilities.
            let local = ctx.evaluate(k, &FollowerAction { offload: false, ..a }).objective;
            let offloaded: Vec<f64> = (0..pctx.n_channels)
                .map(|r| ctx.evaluate(k, &FollowerAction { offload: true, channel: r, ..a }).objective)
                .collect();
            let p = sigmoid(out[2]);
            let probs = softmax(&out[3..]);
            let mean_off: f64 = probs.iter().zip(&offloaded).map(|(p, r)| p * r).sum();
            let mut g_disc = vec![0.0; out.len()];
            g_disc[2] = p * (1.0 - p) * (mean_off - local);
            for r in 0..pctx.n_channels {
                g_disc[3 + r] = p * probs[r] * (offloaded[r] - mean_off);
            }
            actor.backward(&cache, &g_disc, Some(&mut grad));

            let dbox_dq = if s.cycles_per_bit * s.queue / pctx.slot < pctx.f_max { s.cycles_per_bit / pctx.slot } else { 0.0 };
            let df_dq = if e.offload { 0.0 } else { cpu_frac * dbox_dq };
            let dr_dq = e.served / (bu * bu);
            debug_assert_eq!(gx.len(), STATE_DIM);
            gq = dr_dq
                + g_f * df_dq
                + gx[5] * pctx.arrival_hi / ((pctx.arrival_hi + s.queue) * (pctx.arrival_hi + s.queue))
                + gx[6] / (pctx.arrival_hi + s.queue)
                + pass * gq;
        }
    }
    (total, grad)
}

/// Actor task loss: negative mean normalised return over the task's rollouts.
pub struct ActorTask<'a> {
    pub cfg: SimConfig,
    pub seed: u64,
    pub price: f64,
    pub episodes: &'a [u64],
}

impl ActorTask<'_> {
    pub fn new<'a>(base: &SimConfig, task: &TaskContext, seed: u64, episodes: &'a [u64]) -> ActorTask<'a> {
        ActorTask { cfg: task.apply(base), seed, price: task.price, episodes }
    }

    /// Mean per-follower-slot return, normalised by the objective scale.
    pub fn mean_return(&self, actor: &PolicyParams) -> f64 {
        -self.loss_grad_inner(actor, false).0
    }

    fn loss_grad_inner(&self, actor: &PolicyParams, with_grad: bool) -> (f64, Vec<f64>) {
        // The policy context is built from the base ranges so that features
        // mean the same thing in every task.
        let pctx = self.norm_ctx();
        let k = SlotConstants::from_config(&self.cfg);
        let ro = rollouts(&self.cfg, self.seed, self.price, self.episodes, actor);
        let mut total = 0.0;
        let mut grad = vec![0.0; actor.weights.len()];
        let mut count = 0usize;
        for reports in &ro.reports {
            count += reports.len() * reports.first().map_or(0, |r| r.states.len());
            if with_grad {
                let (j, g) = return_gradient(actor, reports, &pctx, &k);
                total += j;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            } else {
                total += reports.iter().flat_map(|r| r.evaluations.iter()).map(|e| e.objective).sum::<f64>();
            }
        }
        let norm = count.max(1) as f64 * pctx.g_scale;
        grad.iter_mut().for_each(|g| *g = -*g / norm);
        (-total / norm, grad)
    }

    fn norm_ctx(&self) -> PolicyContext {
        PolicyContext::from_config(&self.cfg)
    }
}

impl TaskObjective for ActorTask<'_> {
    fn loss_grad(&self, w: &PolicyParams) -> (f64, Vec<f64>) {
        self.loss_grad_inner(w, true)
    }
}

/// Critic task loss: head regression on rollouts of a fixed actor.
pub struct CriticTask {
    pub transitions: Vec<Transition>,
    pub actor: PolicyParams,
    pub ctx: PolicyContext,
    pub gamma: f64,
}

impl TaskObjective for CriticTask {
    fn loss_grad(&self, w: &PolicyParams) -> (f64, Vec<f64>) {
        let batch: Vec<&Transition> = self.transitions.iter().collect();
        let conts = continuations(&batch, w, &self.actor, &self.ctx, self.gamma);
        critic_loss_grad(w, &batch, &conts, &self.ctx)
    }
}

/// Meta-train (Ω) and meta-test (Ω′) episode indices of one task; disjoint.
pub fn task_episodes(iteration: usize, task: usize, cfg: &SimConfig, base: u64) -> (Vec<u64>, Vec<u64>) {
    let k = cfg.maml_trajectories.max(1) as u64;
    let start = base + ((iteration * cfg.meta_batch.max(1) + task) as u64) * 2 * k;
    ((start..start + k).collect(), (start + k..start + 2 * k).collect())
}

/// Runs the meta phase, or returns `None` when it is bypassed
/// (`inner_steps = 0` or `meta_iterations = 0`).
pub fn meta_initialisation(cfg: &SimConfig, seed: u64) -> Option<MetaState> {
    if cfg.inner_steps == 0 || cfg.meta_iterations == 0 {
        return None;
    }
    let (actor, critic) = initial_params(cfg, seed);
    let mut meta = MetaState {
        actor,
        critic,
        inner_lr: cfg.inner_lr,
        outer_lr: cfg.outer_lr,
        inner_steps: cfg.inner_steps,
        trajectories: cfg.maml_trajectories,
    };
    for it in 0..cfg.meta_iterations {
        meta = meta_step(cfg, seed, it, &meta);
    }
    Some(meta)
}

/// One outer iteration over a batch of sampled tasks.
pub fn meta_step(cfg: &SimConfig, seed: u64, iteration: usize, meta: &MetaState) -> MetaState {
    let mut rng = stream(seed, Stream::Tasks, iteration as u64);
    let tasks = sample_tasks(&mut rng, cfg, cfg.meta_batch);
    let mut actor_grads = Vec::new();
    let mut critic_grads = Vec::new();
    for (t, task) in tasks.iter().enumerate() {
        let (train, test) = task_episodes(iteration, t, cfg, META_EPISODE_BASE);
        let train_task = ActorTask::new(cfg, task, seed, &train);
        let test_task = ActorTask::new(cfg, task, seed, &test);
        let actor = if cfg.maml_target.includes_actor() {
            let adapted = inner_adapt(&meta.actor, &train_task, meta.inner_lr, meta.inner_steps);
            actor_grads.push(test_task.loss_grad(&adapted).1);
            adapted
        } else {
            meta.actor.clone()
        };
        if cfg.maml_target.includes_critic() {
            let ctx = PolicyContext::from_config(&train_task.cfg);
            let train_ro = rollouts(&train_task.cfg, seed, task.price, &train, &actor);
            let inner = CriticTask { transitions: train_ro.transitions, actor: actor.clone(), ctx: ctx.clone(), gamma: cfg.gamma };
            let adapted = inner_adapt(&meta.critic, &inner, meta.inner_lr, meta.inner_steps);
            let test_ro = rollouts(&test_task.cfg, seed, task.price, &test, &actor);
            let outer = CriticTask { transitions: test_ro.transitions, actor, ctx, gamma: cfg.gamma };
            critic_grads.push(outer.loss_grad(&adapted).1);
        }
    }
    let scale = 1.0 / tasks.len().max(1) as f64;
    MetaState {
        actor: outer_update(&meta.actor, &actor_grads, meta.outer_lr * scale),
        critic: outer_update(&meta.critic, &critic_grads, meta.outer_lr * scale),
        ..meta.clone()
    }
}

/// Return on held-out episodes before and after adapting `actor` to a task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationTrial {
    pub pre: f64,
    pub post: f64,
}

/// Adapts on the task's meta-train episodes and scores on its disjoint
/// meta-test episodes.
pub fn adaptation_trial(cfg: &SimConfig, seed: u64, trial: usize, actor: &PolicyParams) -> AdaptationTrial {
    let mut rng = stream(seed, Stream::Tasks, HELD_OUT_EPISODE_BASE + trial as u64);
    let task = sample_tasks(&mut rng, cfg, 1)[0];
    let (train, test) = task_episodes(0, trial, &SimConfig { meta_batch: 1, ..cfg.clone() }, HELD_OUT_EPISODE_BASE);
    let train_task = ActorTask::new(cfg, &task, seed, &train);
    let test_task = ActorTask::new(cfg, &task, seed, &test);
    let adapted = inner_adapt(actor, &train_task, cfg.inner_lr, cfg.inner_steps);
    AdaptationTrial { pre: test_task.mean_return(actor), post: test_task.mean_return(&adapted) }
}
