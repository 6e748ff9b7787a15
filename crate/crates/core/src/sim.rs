//! Episode loop, the MADFRL trainer with federation, and whole-run drivers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{effective_losses, magcs_select, mamcc_select, marto_select, BaselineKind};
use crate::config::SimConfig;
use crate::env::{Env, SlotReport};
use crate::federation::{aggregate_and_issue, aggregation_weights, FederationRound, IssueError};
use crate::ledger::{flip_random_bit, Initiator, Ledger, LedgerError, TxStatus};
use crate::nn::PolicyParams;
use crate::oracle::{best_response, OracleGrid};
use crate::policy::{actor_select, Exploration, FollowerAction, FollowerAgent, PolicyContext, Transition};
use crate::rng::{stream, Stream};
use crate::stackelberg::{follower_utility, LeaderAgent, LeaderSample, LeaderState, ThroughputAverage};
use crate::SimError;

/// Episode index offset of evaluation episodes, far from training indices.
pub const EVAL_EPISODE_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Madfrl,
    Baseline(BaselineKind),
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Madfrl => f.write_str("madfrl"),
            PolicyKind::Baseline(b) => b.fmt(f),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "madfrl" {
            return Ok(PolicyKind::Madfrl);
        }
        s.parse::<BaselineKind>()
            .map(PolicyKind::Baseline)
            .map_err(|_| format!("unknown policy `{s}` (expected madfrl, marto, magcs or mamcc)"))
    }
}

/// One CSV row: a (slot, follower) pair of an evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub policy: String,
    pub seed: u64,
    pub episode: u64,
    pub slot: usize,
    pub mbs: usize,
    pub follower: usize,
    /// Backlog after the slot's update, bits.
    pub queue: f64,
    pub arrival: f64,
    /// Bits served this slot.
    pub throughput: f64,
    /// Interference on the follower's channel while offloading, W.
    pub interference: f64,
    /// C_SBC, seconds.
    pub overhead: f64,
    pub price: f64,
    /// This follower's contribution (λ − c)·f to the leader profit.
    pub leader_profit: f64,
    pub utility: f64,
    pub cpu_freq: f64,
    pub channel: usize,
    pub offload: u8,
    pub block_size: f64,
    pub reward: f64,
}

/// How followers decide.
pub enum Followers<'a> {
    Learned(Vec<&'a PolicyParams>),
    Baseline(BaselineKind),
    /// Exhaustive best response to the previous slot's joint action.
    Oracle(OracleGrid),
}

/// How prices are quoted.
pub enum Prices<'a> {
    Learned(&'a LeaderAgent),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeOptions {
    pub explore: Option<Exploration>,
    pub leader_sigma: Option<f64>,
    pub record: bool,
    pub keep_reports: bool,
}

/// Per-follower aggregates used for federation weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeStats {
    pub arrived: Vec<f64>,
    pub slant_sum: Vec<f64>,
    pub block_sum: Vec<f64>,
    pub slots: usize,
    pub total_reward: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    pub transitions: Vec<Vec<Transition>>,
    pub leader_samples: Vec<LeaderSample>,
    pub records: Vec<MetricsRecord>,
    pub reports: Vec<SlotReport>,
    pub stats: EpisodeStats,
}

/// Runs `cfg.slots` slots: quote, observe, act, evaluate jointly, update.
pub fn run_episode(
    cfg: &SimConfig,
    seed: u64,
    episode: u64,
    followers: &Followers<'_>,
    prices: &Prices<'_>,
    opts: EpisodeOptions,
    label: &str,
) -> EpisodeTrace {
    let mut env = Env::new(cfg, seed, episode);
    let ctx = PolicyContext::from_config(cfg);
    let n = env.followers();
    let m_per = cfg.followers_per_mbs;
    let mut agent_rng = stream(seed, Stream::Agent, episode);
    let mut leader_rng = stream(seed, Stream::Leader, episode);
    let mut baseline_rng = stream(seed, Stream::Baseline, episode);
    let mut throughput = ThroughputAverage::new(n, cfg.throughput_ewma);
    let mut trace = EpisodeTrace {
        transitions: vec![Vec::with_capacity(cfg.slots); n],
        stats: EpisodeStats {
            arrived: vec![0.0; n],
            slant_sum: vec![0.0; n],
            block_sum: vec![0.0; n],
            ..Default::default()
        },
        ..Default::default()
    };
    let mut prev_actions: Option<Vec<FollowerAction>> = None;
    let quote = |env: &Env, rng: &mut crate::rng::SimRng| -> Vec<f64> {
        match prices {
            Prices::Fixed(p) => vec![*p; n],
            Prices::Learned(leader) => {
                let state = LeaderState { follower_freqs: env.prev_freqs.clone(), unit_cost: cfg.unit_energy_cost };
                leader.select(&state, rng, opts.leader_sigma).price
            }
        }
    };
    let first = quote(&env, &mut leader_rng);
    let mut states = env.observe(&first);

    for slot in 0..cfg.slots {
        let actions: Vec<FollowerAction> = match followers {
            Followers::Learned(actors) => states
                .iter()
                .zip(actors)
                .map(|(s, actor)| actor_select(s, actor, &ctx, &mut agent_rng, opts.explore))
                .collect(),
            Followers::Baseline(kind) => states
                .iter()
                .enumerate()
                .map(|(i, s)| match kind {
                    BaselineKind::Marto => marto_select(s, &ctx, &mut baseline_rng),
                    BaselineKind::Magcs => {
                        let mbs = i / m_per;
                        let prev = &env.prev_interference[mbs * cfg.n_channels..(mbs + 1) * cfg.n_channels];
                        let losses = effective_losses(env.loss_db(i), prev, cfg.noise_power);
                        magcs_select(s, &losses, &ctx, &mut baseline_rng)
                    }
                    BaselineKind::Mamcc => mamcc_select(s, &ctx, cfg.mamcc_total_freq, n, &mut baseline_rng),
                })
                .collect(),
            Followers::Oracle(grid) => {
                let frozen = prev_actions.clone().unwrap_or_else(|| {
                    states.iter().map(|_| FollowerAction { cpu_freq: 0.0, channel: 0, offload: false, block_size: cfg.block_min }).collect()
                });
                let contexts = env.contexts(&states, &frozen);
                contexts
                    .iter()
                    .map(|c| best_response(c, env.constants(), &ctx, grid).0)
                    .collect()
            }
        };
        for (i, a) in actions.iter().enumerate() {
            debug_assert!(ctx.check_action(&states[i], a).is_ok(), "{:?}", ctx.check_action(&states[i], a));
            trace.stats.block_sum[i] += a.block_size;
            let o = env.geometry().nearest_leo(i);
            trace.stats.slant_sum[i] += env.geometry().slant_range(i, o);
        }
        let freq_prev = env.prev_freqs.clone();
        let report = env.step(states.clone(), actions.clone(), cfg.unit_energy_cost);
        let served: Vec<f64> = report.evaluations.iter().map(|e| e.served).collect();
        throughput.update(&served);

        let next_price = quote(&env, &mut leader_rng);
        let next_states = env.observe(&next_price);
        for i in 0..n {
            let s = report.states[i];
            let e = &report.evaluations[i];
            let outcome = e.outcome(&s);
            let reward = outcome.reward(&ctx);
            trace.stats.arrived[i] += report.arrivals[i];
            trace.stats.total_reward += reward;
            trace.transitions[i].push(Transition {
                state: s,
                action: report.actions[i],
                outcome,
                reward,
                next_state: next_states[i],
            });
            trace.leader_samples.push(LeaderSample {
                freq_prev: freq_prev[i],
                unit_cost: cfg.unit_energy_cost,
                price: s.price,
                profit: report.profit[i],
            });
            if opts.record {
                trace.records.push(MetricsRecord {
                    policy: label.to_string(),
                    seed,
                    episode,
                    slot,
                    mbs: i / m_per,
                    follower: i % m_per,
                    queue: report.queues_after[i],
                    arrival: report.arrivals[i],
                    throughput: e.served,
                    interference: e.interference,
                    overhead: e.overhead,
                    price: s.price,
                    leader_profit: report.profit[i],
                    utility: follower_utility(
                        throughput.value[i] / cfg.bit_unit,
                        e.overhead,
                        s.price,
                        e.freq_used / cfg.freq_unit,
                        cfg.price_term,
                    ),
                    cpu_freq: report.actions[i].cpu_freq,
                    channel: report.actions[i].channel,
                    offload: e.offload as u8,
                    block_size: report.actions[i].block_size,
                    reward,
                });
            }
        }
        trace.stats.slots += 1;
        prev_actions = Some(actions);
        if opts.keep_reports {
            trace.reports.push(report);
        }
        states = next_states;
    }
    trace
}

/// MADFRL learners: per-follower actor-critics, the leader, the global
/// actor and the ledger recording federation rounds.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: SimConfig,
    pub seed: u64,
    pub ctx: PolicyContext,
    pub agents: Vec<FollowerAgent>,
    pub leader: LeaderAgent,
    pub global_actor: PolicyParams,
    pub ledger: Ledger,
    pub episodes_done: usize,
    /// Federation rounds whose issuing was refused.
    pub refused_rounds: usize,
    window: EpisodeStats,
}

/// Default initial actor and critic for a config and seed.
pub fn initial_params(cfg: &SimConfig, seed: u64) -> (PolicyParams, PolicyParams) {
    let ctx = PolicyContext::from_config(cfg);
    let actor = PolicyParams::init(ctx.actor_layout(&cfg.hidden_layers), &mut stream(seed, Stream::Init, 0), 0.1);
    let critic = PolicyParams::init(ctx.critic_layout(&cfg.hidden_layers), &mut stream(seed, Stream::Init, 1), 0.1);
    (actor, critic)
}

impl Trainer {
    pub fn new(cfg: &SimConfig, seed: u64) -> Self {
        let (actor, critic) = initial_params(cfg, seed);
        Self::with_init(cfg, seed, actor, critic)
    }

    /// Every follower starts from the same actor and critic.
    pub fn with_init(cfg: &SimConfig, seed: u64, actor: PolicyParams, critic: PolicyParams) -> Self {
        let n = cfg.total_followers();
        let agents = (0..n).map(|_| FollowerAgent::new(actor.clone(), critic.clone(), cfg)).collect();
        Self {
            ctx: PolicyContext::from_config(cfg),
            agents,
            leader: LeaderAgent::new(cfg, &mut stream(seed, Stream::Init, 2)),
            global_actor: actor,
            ledger: Ledger::new(cfg.delegates),
            episodes_done: 0,
            refused_rounds: 0,
            window: EpisodeStats { arrived: vec![0.0; n], slant_sum: vec![0.0; n], block_sum: vec![0.0; n], ..Default::default() },
            seed,
            cfg: cfg.clone(),
        }
    }

    fn actors(&self) -> Vec<&PolicyParams> {
        self.agents.iter().map(|a| &a.actor).collect()
    }

    /// One exploratory episode followed by the agents' and leader's updates.
    pub fn train_episode(&mut self) -> Result<EpisodeStats, SimError> {
        let ep = self.episodes_done;
        let explore = Exploration::schedule(&self.cfg, ep, self.cfg.episodes);
        let opts = EpisodeOptions { explore: Some(explore), leader_sigma: Some(explore.sigma), ..Default::default() };
        let trace = run_episode(
            &self.cfg,
            self.seed,
            ep as u64,
            &Followers::Learned(self.actors()),
            &Prices::Learned(&self.leader),
            opts,
            "madfrl",
        );
        let EpisodeTrace { transitions, leader_samples, stats, .. } = trace;
        let n_agents = self.agents.len() as u64;
        for (i, (agent, trs)) in self.agents.iter_mut().zip(transitions).enumerate() {
            agent.push_episode(trs);
            let mut rng = stream(self.seed, Stream::Train, ep as u64 * (n_agents + 1) + i as u64);
            agent.train(&mut rng, &self.ctx, &self.cfg, self.cfg.updates_per_episode);
        }
        self.leader.push_episode(leader_samples);
        let mut rng = stream(self.seed, Stream::Train, ep as u64 * (n_agents + 1) + n_agents);
        self.leader.train(&mut rng, self.cfg.batch_size, self.cfg.updates_per_episode);

        for i in 0..self.agents.len() {
            self.window.arrived[i] += stats.arrived[i];
            self.window.slant_sum[i] += stats.slant_sum[i];
            self.window.block_sum[i] += stats.block_sum[i];
        }
        self.window.slots += stats.slots;
        self.episodes_done += 1;
        if self.cfg.federation_every > 0 && self.episodes_done % self.cfg.federation_every == 0 {
            self.federate()?;
        }
        Ok(stats)
    }

    pub fn train(&mut self, episodes: usize) -> Result<(), SimError> {
        for _ in 0..episodes {
            self.train_episode()?;
        }
        Ok(())
    }

    /// Uploads every local actor as a follower transaction, aggregates the
    /// committed ones and issues the new global actor once its own
    /// transaction commits.
    pub fn federate(&mut self) -> Result<(), SimError> {
        let cfg = &self.cfg;
        let m_per = cfg.followers_per_mbs;
        let slots = self.window.slots.max(1) as f64;
        let mut rng = stream(self.seed, Stream::Ledger, self.episodes_done as u64);
        let mut included = Vec::new();
        for (i, agent) in self.agents.iter().enumerate() {
            let block = (self.window.block_sum[i] / slots).clamp(cfg.block_min, cfg.block_max);
            let tx = self.ledger.generate(Initiator::Follower { mbs: i / m_per, follower: i % m_per }, agent.actor.weights.clone());
            let tamper = rng.gen::<f64>() < cfg.tamper_prob;
            let tx = self.ledger.submit(tx, block, |p| {
                if tamper {
                    flip_random_bit(&mut rng, p)
                }
            })?;
            if tx.status == TxStatus::Committed {
                included.push(i);
            }
        }
        let bits: Vec<f64> = included.iter().map(|&i| self.window.arrived[i]).collect();
        let dists: Vec<f64> = included.iter().map(|&i| self.window.slant_sum[i] / slots).collect();
        let weights = aggregation_weights(&bits, &dists);
        let locals: Vec<&PolicyParams> = included.iter().map(|&i| &self.agents[i].actor).collect();
        let n = self.agents.len();
        self.window = EpisodeStats { arrived: vec![0.0; n], slant_sum: vec![0.0; n], block_sum: vec![0.0; n], ..Default::default() };
        if locals.is_empty() {
            self.refused_rounds += 1;
            return Ok(());
        }
        let round = FederationRound::from_locals(&self.global_actor, &locals, weights, cfg.agg_lr)?;
        let block = cfg.block_min;
        let tamper = rng.gen::<f64>() < cfg.tamper_prob;
        match aggregate_and_issue(&round, &mut self.ledger, block, |p| {
            if tamper {
                flip_random_bit(&mut rng, p)
            }
        }) {
            Ok(global) => {
                for agent in &mut self.agents {
                    agent.actor = global.clone();
                }
                self.global_actor = global;
                Ok(())
            }
            Err(IssueError::Ledger(LedgerError::IssueRefused { .. })) => {
                self.refused_rounds += 1;
                Ok(())
            }
            Err(IssueError::Ledger(e)) => Err(e.into()),
            Err(IssueError::Model(e)) => Err(e.into()),
        }
    }

    /// Greedy evaluation episode `k` (shared arrival streams across policies).
    pub fn evaluate(&self, k: u64, opts: EpisodeOptions) -> EpisodeTrace {
        run_episode(
            &self.cfg,
            self.seed,
            EVAL_EPISODE_BASE + k,
            &Followers::Learned(self.actors()),
            &Prices::Learned(&self.leader),
            EpisodeOptions { explore: None, leader_sigma: None, ..opts },
            "madfrl",
        )
    }
}

/// Outcome of a whole `run`: evaluation records, the ledger, and the trainer
/// for learned policies.
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub ledger: Ledger,
    pub trainer: Option<Trainer>,
}

/// Trains MADFRL from the meta-learned initialisation when the meta phase
/// is enabled, otherwise from the default one.
pub fn train_madfrl(cfg: &SimConfig, seed: u64) -> Result<Trainer, SimError> {
    cfg.validate()?;
    let mut trainer = match crate::maml::meta_initialisation(cfg, seed) {
        Some(meta) => Trainer::with_init(cfg, seed, meta.actor, meta.critic),
        None => Trainer::new(cfg, seed),
    };
    trainer.train(cfg.episodes)?;
    Ok(trainer)
}

/// Evaluation episode `k` of a policy; MADFRL needs its trained learners.
pub fn evaluation_episode(
    cfg: &SimConfig,
    policy: PolicyKind,
    seed: u64,
    trainer: Option<&Trainer>,
    k: u64,
    opts: EpisodeOptions,
) -> EpisodeTrace {
    match (policy, trainer) {
        (PolicyKind::Madfrl, Some(t)) => t.evaluate(k, opts),
        (PolicyKind::Madfrl, None) => panic!("evaluating madfrl needs a trained trainer"),
        (PolicyKind::Baseline(kind), _) => run_episode(
            cfg,
            seed,
            EVAL_EPISODE_BASE + k,
            &Followers::Baseline(kind),
            &Prices::Fixed(cfg.baseline_price),
            EpisodeOptions { explore: None, leader_sigma: None, ..opts },
            &kind.to_string(),
        ),
    }
}

/// Trains (for MADFRL) and evaluates one policy under one seed.
pub fn run_policy(cfg: &SimConfig, policy: PolicyKind, seed: u64) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let trainer = match policy {
        PolicyKind::Madfrl => Some(train_madfrl(cfg, seed)?),
        PolicyKind::Baseline(_) => None,
    };
    let opts = EpisodeOptions { record: true, ..Default::default() };
    let mut records = Vec::new();
    for k in 0..cfg.eval_episodes as u64 {
        records.extend(evaluation_episode(cfg, policy, seed, trainer.as_ref(), k, opts).records);
    }
    let ledger = trainer.as_ref().map_or_else(|| Ledger::new(cfg.delegates), |t| t.ledger.clone());
    Ok(RunOutput { records, ledger, trainer })
}
