//! Simulation configuration.
//!
//! Config files are line-oriented `key = value` text. `#` starts a comment
//! (full-line or trailing). Unknown keys, duplicate keys and malformed values
//! are reported together with their line numbers; invariant violations are
//! reported by key name. Every key has a default, so an empty file is valid.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// How the price term enters the follower utility `F1 - F2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceTerm {
    /// `F2 = C_SBC - λ·f`, so paying more raises utility.
    Literal,
    /// `F2 = C_SBC + λ·f`, price treated as a cost.
    Cost,
}

/// Which parameter sets the meta-learning stage adapts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaTarget {
    Actor,
    Critic,
    Both,
}

impl MetaTarget {
    pub fn includes_actor(self) -> bool {
        matches!(self, MetaTarget::Actor | MetaTarget::Both)
    }
    pub fn includes_critic(self) -> bool {
        matches!(self, MetaTarget::Critic | MetaTarget::Both)
    }
}

/// A value type that can appear on the right-hand side of a config line.
pub trait ConfigValue: Sized {
    fn parse_value(raw: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(raw: &str) -> Result<Self, String> {
        let v = f64::from_str(raw).map_err(|_| format!("expected a number, got `{raw}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("expected a finite number, got `{raw}`"))
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for usize {
    fn parse_value(raw: &str) -> Result<Self, String> {
        usize::from_str(raw).map_err(|_| format!("expected a non-negative integer, got `{raw}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u64 {
    fn parse_value(raw: &str) -> Result<Self, String> {
        u64::from_str(raw).map_err(|_| format!("expected a non-negative integer, got `{raw}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Vec<usize> {
    fn parse_value(raw: &str) -> Result<Self, String> {
        raw.split(',')
            .map(|part| {
                let part = part.trim();
                usize::from_str(part)
                    .map_err(|_| format!("expected a comma-separated list of integers, got `{raw}`"))
            })
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for PriceTerm {
    fn parse_value(raw: &str) -> Result<Self, String> {
        match raw {
            "literal" => Ok(PriceTerm::Literal),
            "cost" => Ok(PriceTerm::Cost),
            _ => Err(format!("expected `literal` or `cost`, got `{raw}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            PriceTerm::Literal => "literal".into(),
            PriceTerm::Cost => "cost".into(),
        }
    }
}

impl ConfigValue for MetaTarget {
    fn parse_value(raw: &str) -> Result<Self, String> {
        match raw {
            "actor" => Ok(MetaTarget::Actor),
            "critic" => Ok(MetaTarget::Critic),
            "both" => Ok(MetaTarget::Both),
            _ => Err(format!("expected `actor`, `critic` or `both`, got `{raw}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            MetaTarget::Actor => "actor".into(),
            MetaTarget::Critic => "critic".into(),
            MetaTarget::Both => "both".into(),
        }
    }
}

macro_rules! sim_config {
    ($( $(#[$doc:meta])* $name:ident : $ty:ty = $default:expr, )*) => {
        /// All network, channel, game and learning constants plus the RNG seed.
        #[derive(Debug, Clone, PartialEq)]
        pub struct SimConfig {
            $( $(#[$doc])* pub $name: $ty, )*
        }

        impl Default for SimConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl SimConfig {
            /// Every recognised key, in the order used by the resolved echo.
            pub const KEYS: &'static [&'static str] = &[ $( stringify!($name), )* ];

            /// Sets `key` from its textual value. `Ok(false)` means the key is unknown.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<bool, String> {
                match key {
                    $( stringify!($name) => {
                        self.$name = <$ty as ConfigValue>::parse_value(raw)?;
                        Ok(true)
                    } )*
                    _ => Ok(false),
                }
            }

            /// `(key, rendered value)` for every key.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![ $( (stringify!($name), ConfigValue::render(&self.$name)), )* ]
            }
        }
    };
}

sim_config! {
    /// Number of macro base stations (N).
    n_mbs: usize = 4,
    /// Followers (digital twins) per MBS (M).
    followers_per_mbs: usize = 12,
    /// Number of LEO satellites (O).
    n_leo: usize = 4,
    /// Number of orthogonal channels (R).
    n_channels: usize = 12,
    /// Slot length T in seconds.
    slot_duration: f64 = 1.0,
    /// Task arrival range in bits (10 MB and 30 MB, 1 MB = 8e6 bits).
    arrival_lo: f64 = 8.0e7,
    arrival_hi: f64 = 2.4e8,
    /// Computation intensity range w in cycles/bit.
    cycles_per_bit_lo: f64 = 2000.0,
    cycles_per_bit_hi: f64 = 4000.0,
    /// Horizontal and vertical MBS-to-LEO distance ranges in meters.
    x_lo: f64 = 1.0e6,
    x_hi: f64 = 2.0e6,
    y_lo: f64 = 5.0e5,
    y_hi: f64 = 2.0e6,
    /// Carrier frequency f_c in Hz.
    carrier_freq: f64 = 1.0e8,
    light_speed: f64 = 3.0e8,
    /// Additional LoS / NLoS losses in dB.
    eps_los_lo: f64 = 0.0,
    eps_los_hi: f64 = 1.0,
    eps_nlos_lo: f64 = 10.0,
    eps_nlos_hi: f64 = 30.0,
    /// LoS probability constants (elevation in degrees).
    b1: f64 = 9.61,
    b2: f64 = 0.16,
    /// Noise power σ² in W.
    noise_power: f64 = 1.0e-13,
    /// Per-follower transmit power P in W.
    tx_power: f64 = 1.0,
    /// Channel bandwidth B in Hz.
    channel_bandwidth: f64 = 1.0e7,
    /// Interference cap for offloading followers in W.
    i_max: f64 = 1.0e-13,
    /// Upper bound on a follower's CPU frequency in cycles/s.
    follower_max_freq: f64 = 1.0e12,
    /// Lyapunov control parameter V.
    v_lyapunov: f64 = 1.0,
    /// Leader's unit cost c per `freq_unit` of sold CPU frequency.
    unit_energy_cost: f64 = 1.0,
    /// Maximum price λ_max per `freq_unit`.
    price_cap: f64 = 10.0,
    /// Fixed price quoted to baseline policies.
    baseline_price: f64 = 5.0,
    /// Sign of the price term in the follower utility.
    price_term: PriceTerm = PriceTerm::Literal,
    /// Smoothing factor of the running throughput average F1.
    throughput_ewma: f64 = 0.05,
    /// MBS CPU frequency f_MBS in cycles/s.
    mbs_cpu_freq: f64 = 6.0e9,
    /// Parameter upload rate r_up in bits/s.
    uplink_rate: f64 = 5.0e9,
    /// Block download rate r_down in bits/s.
    downlink_rate: f64 = 1.0e10,
    /// Model transmission factor δ.
    model_tx_factor: f64 = 0.5,
    /// Model size |W_m| in bits.
    model_size: f64 = 1.0e6,
    /// Cycles per bit used to turn |W_m| and S_B into CPU workloads.
    workload_cycles_per_bit: f64 = 1.0,
    /// Block size bounds in bits.
    block_min: f64 = 1.0e6,
    block_max: f64 = 8.0e6,
    /// Number of voting delegates; quorum is ceil(2K/3).
    delegates: usize = 5,
    /// Probability that an aggregation payload is tampered with in transit.
    tamper_prob: f64 = 0.0,
    /// CPU pool shared equally by the mean-allocation baseline, cycles/s.
    mamcc_total_freq: f64 = 2.4e13,
    /// Bits per unit in the per-slot objective (queues, service, rewards).
    bit_unit: f64 = 1.0e6,
    /// Cycles/s per unit in the price and profit terms.
    freq_unit: f64 = 1.0e9,
    /// Hidden layer widths of every actor and critic.
    hidden_layers: Vec<usize> = vec![64, 64],
    /// Discount factor of the follower critics.
    gamma: f64 = 0.0,
    actor_lr: f64 = 1.0e-3,
    critic_lr: f64 = 1.0e-3,
    leader_lr: f64 = 1.0e-3,
    batch_size: usize = 64,
    /// Gradient steps per agent after every training episode.
    updates_per_episode: usize = 16,
    /// Number of most recent episodes kept for sampling minibatches.
    replay_episodes: usize = 4,
    /// ε-greedy probability on discrete heads, annealed linearly.
    explore_eps_start: f64 = 0.3,
    explore_eps_end: f64 = 0.02,
    /// Gaussian noise scale on continuous heads (logit space), annealed linearly.
    explore_sigma_start: f64 = 1.0,
    explore_sigma_end: f64 = 0.1,
    /// Training episodes before evaluation.
    episodes: usize = 500,
    /// Slots per episode.
    slots: usize = 200,
    /// Evaluation episodes written to the output CSV.
    eval_episodes: usize = 1,
    /// Federated aggregation cadence in episodes (0 disables federation).
    federation_every: usize = 10,
    /// Aggregation learning rate u in Z(t+1) = Z(t) + u·Σ weight·(Z - Z_m).
    agg_lr: f64 = -1.0,
    /// Outer meta-learning iterations run before training (0 skips the stage).
    meta_iterations: usize = 0,
    /// Tasks per meta-batch.
    meta_batch: usize = 4,
    /// Inner adaptation steps (0 bypasses the meta-learning stage).
    inner_steps: usize = 1,
    /// Inner learning rate α.
    inner_lr: f64 = 0.003,
    /// Outer learning rate β.
    outer_lr: f64 = 0.01,
    /// Trajectories per task and split (K).
    maml_trajectories: usize = 4,
    /// Parameter sets adapted by meta-learning.
    maml_target: MetaTarget = MetaTarget::Both,
    /// Fixed price range of meta-learning tasks.
    task_price_lo: f64 = 0.0,
    task_price_hi: f64 = 10.0,
    /// Oracle discretisation: CPU levels and block-size levels.
    oracle_freq_levels: usize = 8,
    oracle_block_levels: usize = 4,
    /// Sweep worker threads.
    workers: usize = 1,
    seed: u64 = 0,
}

/// One problem found while loading or validating a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub keys: Vec<String>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if !self.keys.is_empty() {
            write!(f, "{}: ", self.keys.join(", "))?;
        }
        f.write_str(&self.message)
    }
}

/// All problems found in a config, reported together.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigReport {
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem(s)):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

impl SimConfig {
    /// Parses config text, fills defaults and validates invariants.
    pub fn parse(text: &str) -> Result<Self, ConfigReport> {
        let mut cfg = SimConfig::default();
        let mut issues = Vec::new();
        let mut seen: Vec<(&str, usize)> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                issues.push(ConfigIssue {
                    line: Some(line_no),
                    keys: vec![],
                    message: format!("expected `key = value`, got `{line}`"),
                });
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            let Some(known) = SimConfig::KEYS.iter().find(|k| **k == key) else {
                issues.push(ConfigIssue {
                    line: Some(line_no),
                    keys: vec![key.to_string()],
                    message: "unknown key".into(),
                });
                continue;
            };
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == known) {
                issues.push(ConfigIssue {
                    line: Some(line_no),
                    keys: vec![key.to_string()],
                    message: format!("duplicate key (first set on line {first})"),
                });
                continue;
            }
            seen.push((known, line_no));
            if let Err(message) = cfg.set(key, value) {
                issues.push(ConfigIssue {
                    line: Some(line_no),
                    keys: vec![key.to_string()],
                    message,
                });
            }
        }
        if issues.is_empty() {
            issues.extend(cfg.invariant_issues());
        }
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigReport { issues })
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, crate::SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| crate::SimError::io(path, e))?;
        Ok(SimConfig::parse(&text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigReport> {
        let issues = self.invariant_issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigReport { issues })
        }
    }

    fn invariant_issues(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut fail = |keys: &[&str], message: String| {
            issues.push(ConfigIssue {
                line: None,
                keys: keys.iter().map(|k| k.to_string()).collect(),
                message,
            })
        };
        let counts = [
            ("n_mbs", self.n_mbs),
            ("followers_per_mbs", self.followers_per_mbs),
            ("n_leo", self.n_leo),
            ("n_channels", self.n_channels),
            ("delegates", self.delegates),
            ("batch_size", self.batch_size),
            ("replay_episodes", self.replay_episodes),
            ("slots", self.slots),
            ("meta_batch", self.meta_batch),
            ("maml_trajectories", self.maml_trajectories),
            ("oracle_freq_levels", self.oracle_freq_levels),
            ("oracle_block_levels", self.oracle_block_levels),
            ("workers", self.workers),
        ];
        for (key, value) in counts {
            if value < 1 {
                fail(&[key], "must be at least 1".into());
            }
        }
        let ranges = [
            ("arrival_lo", self.arrival_lo, "arrival_hi", self.arrival_hi),
            ("cycles_per_bit_lo", self.cycles_per_bit_lo, "cycles_per_bit_hi", self.cycles_per_bit_hi),
            ("x_lo", self.x_lo, "x_hi", self.x_hi),
            ("y_lo", self.y_lo, "y_hi", self.y_hi),
            ("eps_los_lo", self.eps_los_lo, "eps_los_hi", self.eps_los_hi),
            ("eps_nlos_lo", self.eps_nlos_lo, "eps_nlos_hi", self.eps_nlos_hi),
            ("block_min", self.block_min, "block_max", self.block_max),
            ("task_price_lo", self.task_price_lo, "task_price_hi", self.task_price_hi),
            ("explore_eps_end", self.explore_eps_end, "explore_eps_start", self.explore_eps_start),
            ("explore_sigma_end", self.explore_sigma_end, "explore_sigma_start", self.explore_sigma_start),
        ];
        for (lo_key, lo, hi_key, hi) in ranges {
            if lo > hi {
                fail(&[lo_key, hi_key], format!("{lo_key} ({lo}) exceeds {hi_key} ({hi})"));
            }
        }
        let positive = [
            ("slot_duration", self.slot_duration),
            ("noise_power", self.noise_power),
            ("cycles_per_bit_lo", self.cycles_per_bit_lo),
            ("x_lo", self.x_lo),
            ("y_lo", self.y_lo),
            ("carrier_freq", self.carrier_freq),
            ("light_speed", self.light_speed),
            ("channel_bandwidth", self.channel_bandwidth),
            ("mbs_cpu_freq", self.mbs_cpu_freq),
            ("uplink_rate", self.uplink_rate),
            ("downlink_rate", self.downlink_rate),
            ("workload_cycles_per_bit", self.workload_cycles_per_bit),
            ("bit_unit", self.bit_unit),
            ("freq_unit", self.freq_unit),
            ("follower_max_freq", self.follower_max_freq),
        ];
        for (key, value) in positive {
            if value <= 0.0 {
                fail(&[key], format!("must be positive, got {value}"));
            }
        }
        let non_negative = [
            ("arrival_lo", self.arrival_lo),
            ("tx_power", self.tx_power),
            ("i_max", self.i_max),
            ("v_lyapunov", self.v_lyapunov),
            ("unit_energy_cost", self.unit_energy_cost),
            ("price_cap", self.price_cap),
            ("baseline_price", self.baseline_price),
            ("model_tx_factor", self.model_tx_factor),
            ("model_size", self.model_size),
            ("block_min", self.block_min),
            ("mamcc_total_freq", self.mamcc_total_freq),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("leader_lr", self.leader_lr),
            ("inner_lr", self.inner_lr),
            ("outer_lr", self.outer_lr),
            ("task_price_lo", self.task_price_lo),
            ("explore_eps_end", self.explore_eps_end),
            ("explore_sigma_end", self.explore_sigma_end),
            ("b1", self.b1),
        ];
        for (key, value) in non_negative {
            if value < 0.0 {
                fail(&[key], format!("must be non-negative, got {value}"));
            }
        }
        let unit_interval = [
            ("tamper_prob", self.tamper_prob),
            ("explore_eps_start", self.explore_eps_start),
            ("throughput_ewma", self.throughput_ewma),
        ];
        for (key, value) in unit_interval {
            if !(0.0..=1.0).contains(&value) {
                fail(&[key], format!("must lie in [0, 1], got {value}"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            fail(&["gamma"], format!("must lie in [0, 1), got {}", self.gamma));
        }
        if self.baseline_price > self.price_cap {
            fail(&["baseline_price", "price_cap"], "baseline_price exceeds price_cap".into());
        }
        if self.task_price_hi > self.price_cap {
            fail(&["task_price_hi", "price_cap"], "task_price_hi exceeds price_cap".into());
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            fail(&["hidden_layers"], "needs at least one layer, each of width >= 1".into());
        }
        issues
    }

    /// Renders every key with its resolved value, one `key = value` per line.
    pub fn to_config_string(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (key, value) in self.entries() {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    pub fn total_followers(&self) -> usize {
        self.n_mbs * self.followers_per_mbs
    }
}
