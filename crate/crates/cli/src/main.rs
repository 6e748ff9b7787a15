use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use satdt_core::ledger::audit_export;
use satdt_core::oracle::verify_policy;
use satdt_core::output::{create_dir, write_csv, write_run, write_text};
use satdt_core::sim::{run_policy, PolicyKind};
use satdt_core::sweep::{run_sweep, SweepAxis, SweepSpec};
use satdt_core::{SimConfig, SimError};

#[derive(Parser)]
#[command(name = "satdt", version, about = "Satellite-ground digital-twin network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "madfrl", value_parser = parse_policy)]
    policy: PolicyKind,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train (for madfrl) and evaluate one policy.
    Run(Common),
    /// Repeat `run` over the values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Check an evaluation trace slot by slot against the grid oracle.
    OracleVerify(Common),
    /// Parse and check a config; write the resolved config.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the resolved config (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the integrity of an exported ledger.
    LedgerAudit {
        path: PathBuf,
    },
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    s.parse()
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SimConfig, SimError> {
    let mut cfg = match path {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<bool, SimError> {
    match cmd {
        Command::Run(c) => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let out = run_policy(&cfg, c.policy, cfg.seed)?;
            let art = write_run(&c.out, &cfg, cfg.seed, &out)?;
            println!("wrote {} records to {}", out.records.len(), art.records.display());
            Ok(true)
        }
        Command::Sweep { common: c, axis, values, repeats } => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let spec = SweepSpec { axis, values, repeats };
            let res = run_sweep(&spec, &cfg, c.policy, cfg.seed, &c.out, cfg.workers)?;
            for a in &res.aggregates {
                println!(
                    "{axis}={} runs={} throughput={:.6e} queue={:.6e} interference={:.6e} overhead={:.6e} profit={:.6e}",
                    a.axis_value, a.runs, a.mean_throughput, a.mean_queue, a.mean_interference, a.mean_overhead, a.mean_profit
                );
            }
            println!("wrote {}", res.summary_file.display());
            Ok(true)
        }
        Command::OracleVerify(c) => {
            let cfg = load_config(c.config.as_deref(), c.seed)?;
            let v = verify_policy(&cfg, c.policy, cfg.seed)?;
            create_dir(&c.out)?;
            write_csv(&c.out.join("oracle_verify.csv"), &[OracleRow::from(&v, c.policy, cfg.seed)])?;
            println!(
                "decisions={} oracle_violations={} policy_exceedances={} oracle_mean={:.6e} policy_mean={:.6e} ratio={:.4}",
                v.decisions,
                v.oracle_violations,
                v.policy_exceedances,
                v.mean_oracle_objective,
                v.mean_policy_objective,
                v.ratio()
            );
            Ok(v.oracle_violations == 0 && v.policy_exceedances == 0)
        }
        Command::ValidateConfig { config, out } => {
            let cfg = load_config(config.as_deref(), None)?;
            let text = cfg.to_config_string();
            match out {
                Some(p) => {
                    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                        create_dir(dir)?;
                    }
                    write_text(&p, &text)?;
                    println!("config ok; resolved config written to {}", p.display());
                }
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::LedgerAudit { path } => {
            let text = std::fs::read_to_string(&path).map_err(|e| SimError::io(&path, e))?;
            let s = audit_export(&text)?;
            println!("records={} committed={} closed={} height={}", s.records, s.committed, s.closed, s.height);
            Ok(true)
        }
    }
}

#[derive(serde::Serialize)]
struct OracleRow {
    policy: String,
    seed: u64,
    decisions: usize,
    oracle_violations: usize,
    policy_exceedances: usize,
    mean_oracle_objective: f64,
    mean_policy_objective: f64,
    ratio: f64,
}

impl OracleRow {
    fn from(v: &satdt_core::oracle::TraceVerification, policy: PolicyKind, seed: u64) -> Self {
        Self {
            policy: policy.to_string(),
            seed,
            decisions: v.decisions,
            oracle_violations: v.oracle_violations,
            policy_exceedances: v.policy_exceedances,
            mean_oracle_objective: v.mean_oracle_objective,
            mean_policy_objective: v.mean_policy_objective,
            ratio: v.ratio(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
