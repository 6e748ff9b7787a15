//! Criteria that train policies: oracle optimality, V trends, baseline
//! dominance, pricing, meta-learning, and CLI determinism.

use std::path::Path;

use satdt_core::baselines::BaselineKind;
use satdt_core::maml::{adaptation_trial, meta_initialisation};
use satdt_core::oracle::{oracle_profit, price_grid_search};
use satdt_core::output::{summarize, SummaryRow};
use satdt_core::sim::{initial_params, run_policy, train_madfrl, PolicyKind, Prices};
use satdt_core::SimConfig;

use crate::support::{budget, mean, satdt, spearman, tiny, write_config, Verdict, SEEDS};

fn summary(cfg: &SimConfig, policy: PolicyKind, seed: u64) -> SummaryRow {
    let out = run_policy(cfg, policy, seed).expect("run succeeds");
    summarize(&out.records, f64::NAN, seed)
}

/// `oracle-verify` on the tiny instance for five seeds: the enumerated action
/// must dominate its grid on every slot and the trained policy must reach
/// 90% of the oracle's mean per-slot objective.
pub fn oracle_optimality() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg_path = dir.path().join("tiny.cfg");
    write_config(&cfg_path, &tiny());
    let mut ok = true;
    let mut ratios = Vec::new();
    let mut violations = 0usize;
    let mut exceedances = 0usize;
    let mut decisions = 0usize;
    for seed in SEEDS {
        let out = dir.path().join(format!("seed{seed}"));
        let (code, _) = satdt(&[
            "oracle-verify",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--out",
            out.to_str().unwrap(),
        ]);
        let text = std::fs::read_to_string(out.join("oracle_verify.csv")).expect("verification written");
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().expect("header").clone();
        let row = rdr.records().next().expect("one row").expect("valid row");
        let field = |name: &str| -> f64 {
            let i = headers.iter().position(|h| h == name).expect("column present");
            row[i].parse().expect("number")
        };
        decisions += field("decisions") as usize;
        violations += field("oracle_violations") as usize;
        exceedances += field("policy_exceedances") as usize;
        let ratio = field("ratio");
        ratios.push(ratio);
        ok &= code == 0 && ratio >= 0.9;
    }
    ok &= violations == 0;
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    Verdict::new(
        ok,
        format!("{decisions} decisions, {violations} oracle violations, {exceedances} policy exceedances, min ratio {min:.4} over 5 seeds"),
    )
}

/// Mean throughput and mean queue against V, five seeds per value.
pub fn v_trends() -> Verdict {
    let base = budget(SimConfig { n_mbs: 2, followers_per_mbs: 4, n_leo: 2, n_channels: 4, ..SimConfig::default() }, 20);
    let vs = [1.0, 5.0, 10.0, 50.0, 100.0];
    let mut throughput = Vec::new();
    let mut queue = Vec::new();
    for &v in &vs {
        let cfg = SimConfig { v_lyapunov: v, ..base.clone() };
        let rows: Vec<SummaryRow> = SEEDS.iter().map(|&s| summary(&cfg, PolicyKind::Madfrl, s)).collect();
        throughput.push(mean(&rows.iter().map(|r| r.mean_throughput).collect::<Vec<_>>()));
        queue.push(mean(&rows.iter().map(|r| r.mean_queue).collect::<Vec<_>>()));
    }
    let rho_t = spearman(&vs, &throughput);
    let rho_q = spearman(&vs, &queue);
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ");
    Verdict::new(
        rho_t >= 0.9 && rho_q >= 0.9,
        format!("queue rho {rho_q:.2} [{}], throughput rho {rho_t:.2} [{}]", fmt(&queue), fmt(&throughput)),
    )
}

/// Trained MADFRL against every baseline on the default topology.
pub fn baseline_dominance() -> Verdict {
    let cfg = budget(SimConfig::default(), 30);
    let means = |policy: PolicyKind| -> [f64; 3] {
        let rows: Vec<SummaryRow> = SEEDS.iter().map(|&s| summary(&cfg, policy, s)).collect();
        let col = |f: fn(&SummaryRow) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
        [col(|r| r.mean_throughput), col(|r| r.mean_interference), col(|r| r.mean_overhead)]
    };
    let ours = means(PolicyKind::Madfrl);
    let mut ok = true;
    let mut parts = vec![format!("madfrl thr {:.3e} int {:.2e} ovh {:.3e}", ours[0], ours[1], ours[2])];
    for b in [BaselineKind::Marto, BaselineKind::Magcs, BaselineKind::Mamcc] {
        let theirs = means(PolicyKind::Baseline(b));
        let wins = ours[0] > theirs[0] && ours[1] < theirs[1] && ours[2] < theirs[2];
        ok &= wins;
        parts.push(format!("{b} thr {:.3e} int {:.2e} ovh {:.3e}", theirs[0], theirs[1], theirs[2]));
    }
    Verdict::new(ok, parts.join("; "))
}

/// Learned price against the price grid on the tiny instance, then the
/// profit trend as the unit cost rises.
pub fn stackelberg() -> Verdict {
    let cfg = tiny();
    let mut fractions = Vec::new();
    for seed in SEEDS {
        let trainer = train_madfrl(&cfg, seed).expect("training succeeds");
        let learned = oracle_profit(&cfg, seed, 0, &Prices::Learned(&trainer.leader));
        let (_, best) = price_grid_search(&cfg, seed, 0, 21);
        fractions.push(if best > 0.0 { learned / best } else if learned >= best { 1.0 } else { 0.0 });
    }
    let costs = [0.0, 1.0, 2.0, 4.0, 8.0];
    let profits: Vec<f64> = costs
        .iter()
        .map(|&c| {
            let cfg = SimConfig { unit_energy_cost: c, ..cfg.clone() };
            mean(&SEEDS.iter().map(|&s| summary(&cfg, PolicyKind::Madfrl, s).mean_profit).collect::<Vec<_>>())
        })
        .collect();
    let min_frac = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    let non_increasing = profits.windows(2).all(|w| w[1] <= w[0]);
    Verdict::new(
        min_frac >= 0.9 && non_increasing,
        format!(
            "min learned/grid profit {min_frac:.4}; profit at unit cost {costs:?}: [{}]",
            profits.iter().map(|p| format!("{p:.4e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

/// Fifty held-out adaptation trials from a meta-learned initialisation, and
/// the bypass producing plain training traces.
pub fn meta_learning() -> Verdict {
    let cfg = SimConfig { hidden_layers: vec![32, 32], meta_iterations: 2, ..SimConfig::default() };
    let meta = meta_initialisation(&cfg, 0).expect("meta phase enabled");
    let mut wins = 0;
    let mut gain = 0.0;
    for t in 0..50 {
        let r = adaptation_trial(&cfg, 0, t, &meta.actor);
        wins += (r.post >= r.pre) as usize;
        gain += (r.post - r.pre) / 50.0;
    }

    let plain = SimConfig { episodes: 3, slots: 50, ..tiny() };
    let bypassed = SimConfig { inner_steps: 0, meta_iterations: 3, ..plain.clone() };
    let a = run_policy(&plain, PolicyKind::Madfrl, 7).expect("plain run");
    let b = run_policy(&bypassed, PolicyKind::Madfrl, 7).expect("bypassed run");
    let identical = a.records == b.records
        && a.ledger.records() == b.ledger.records()
        && a.trainer.as_ref().map(|t| &t.global_actor) == b.trainer.as_ref().map(|t| &t.global_actor);
    let untouched = initial_params(&plain, 7).0 == initial_params(&bypassed, 7).0;
    Verdict::new(
        wins >= 40 && identical && untouched,
        format!("post >= pre in {wins}/50 trials (mean gain {gain:.4}); inner_steps = 0 traces identical: {identical}"),
    )
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("readable"))
        })
        .collect();
    files.sort();
    files
}

/// Every command twice with the same config and seed; outputs compared byte
/// for byte.
pub fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg_path = dir.path().join("small.cfg");
    write_config(&cfg_path, &SimConfig { episodes: 4, slots: 60, federation_every: 2, ..tiny() });
    let cfg = cfg_path.to_str().unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("run-madfrl", vec!["run", "--config", cfg, "--seed", "11"]),
        ("run-marto", vec!["run", "--config", cfg, "--policy", "marto", "--seed", "11"]),
        ("run-magcs", vec!["run", "--config", cfg, "--policy", "magcs", "--seed", "11"]),
        ("sweep", vec!["sweep", "--config", cfg, "--axis", "V", "--values", "1,10", "--repeats", "2", "--seed", "3"]),
        ("oracle", vec!["oracle-verify", "--config", cfg, "--seed", "5"]),
    ];
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for (name, args) in &commands {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}-{rep}"));
            let mut full = args.clone();
            let out_s = out.to_str().unwrap().to_string();
            full.extend(["--out", out_s.as_str()]);
            let (code, stdout) = satdt(&full);
            let stdout = stdout.replace(&out_s, "<out>");
            outputs.push((code, stdout, read_all(&out)));
        }
        compared += outputs[0].2.len();
        if outputs[0] != outputs[1] || outputs[0].2.is_empty() {
            mismatched.push(*name);
        }
    }
    let resolved: Vec<String> = (0..2)
        .map(|_| satdt(&["validate-config", "--config", cfg]).1)
        .collect();
    if resolved[0] != resolved[1] || resolved[0].is_empty() {
        mismatched.push("validate-config");
    }
    Verdict::new(mismatched.is_empty(), format!("{} commands, {compared} files compared, mismatches {mismatched:?}", commands.len() + 1))
}
