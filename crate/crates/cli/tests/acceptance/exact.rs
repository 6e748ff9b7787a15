//! Criteria with exact answers: closed forms, the queue law, federation and
//! gradients.

use std::f64::consts::{LN_2, PI};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;
use satdt_core::federation::{aggregate, aggregate_and_issue, aggregation_weight, aggregation_weights, compute_delta, FederationRound};
use satdt_core::ledger::{aggregation_overhead, flip_random_bit, total_overhead, transmission_overhead, verification_overhead, Ledger};
use satdt_core::maml::{inner_adapt, outer_update, TaskObjective};
use satdt_core::nn::PolicyParams;
use satdt_core::policy::{
    actor_anchors, actor_objective_grad, actor_surrogate, critic_loss_grad, FollowerState, NetCritic, Outcome, PolicyContext,
    Transition,
};
use satdt_core::queueing::{dpp_objective, drift_bound, penalty, queue_update};
use satdt_core::rng::{stream, SimRng, Stream};
use satdt_core::stackelberg::{leader_actor_grad, leader_critic_grad, LeaderContext, LeaderSample};
use satdt_core::topology::{
    free_space_loss, interference, local_bits, los_probability, offload_bits, offload_rate, path_loss, ChannelAssignment,
    LinkParams,
};
use satdt_core::SimConfig;

use crate::support::Verdict;

const DRAWS: usize = 10_000;

/// |a − b| ≤ 1e-12 · scale, where scale is the magnitude of the summed terms.
fn within(a: f64, b: f64, scale: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * scale
}

fn rel(a: f64, b: f64) -> bool {
    within(a, b, a.abs().max(b.abs()))
}

fn log2_1p(x: f64) -> f64 {
    if x < 1.0 {
        2.0 * (x / (x + 2.0)).atanh() / LN_2
    } else {
        (1.0 + x).log2()
    }
}

/// Draws 10^4 inputs per model function and counts mismatches against a
/// one-line reimplementation.
pub fn closed_forms() -> Verdict {
    let mut rng = stream(101, Stream::Init, 0);
    let mut bad: Vec<(&str, usize)> = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            match bad.iter_mut().find(|(n, _)| *n == name) {
                Some(e) => e.1 += 1,
                None => bad.push((name, 1)),
            }
        }
    };
    let c = 299_792_458.0f64;
    for _ in 0..DRAWS {
        let (f, w, t) = (rng.gen_range(0.0..5e9), rng.gen_range(1.0..1e4), rng.gen_range(1e-3..10.0));
        check("local bits", rel(local_bits(f, w, t).unwrap(), f / w * t));

        let (x, y, fc): (f64, f64, f64) = (rng.gen_range(1e3..5e6), rng.gen_range(1e3..5e6), rng.gen_range(1e8..5e10));
        let (el, en, b1, b2) = (rng.gen_range(0.0..10.0), rng.gen_range(10.0..40.0), rng.gen_range(1.0..20.0), rng.gen_range(0.01..1.0));
        let fs = 20.0 * (4.0 * PI).log10() + 20.0 * fc.log10() + 10.0 * (x * x + y * y).log10() - 20.0 * c.log10();
        let p = 1.0 / (1.0 + b1 * (-b2 * (y.atan2(x) * 180.0 / PI - b1)).exp());
        check("LoS probability", rel(los_probability(x, y, b1, b2).unwrap(), p));
        check("free-space loss", rel(free_space_loss(x, y, fc, c).unwrap(), fs));
        let link = LinkParams { carrier_freq: fc, light_speed: c, b1, b2 };
        check("path loss", rel(path_loss(x, y, &link, el, en).unwrap(), fs + el * p + en * (1.0 - p)));

        let mut a = ChannelAssignment::idle(3, 2, 3);
        let losses: Vec<f64> = (0..6).map(|_| rng.gen_range(60.0..140.0)).collect();
        for i in 0..6 {
            a.channel[i] = [None, Some(0), Some(1), Some(2)][rng.gen_range(0..4)];
            a.power[i] = rng.gen_range(0.0..2.0);
        }
        let (n, r) = (rng.gen_range(0..3), rng.gen_range(0..3));
        let brute: f64 = (0..6).filter(|&i| i / 2 != n && a.channel[i] == Some(r)).map(|i| a.power[i] * 10f64.powf(-losses[i] / 5.0)).sum();
        check("interference", rel(interference(&a, &losses, n, r), brute));

        let (b, pw, l, s2, i) = (rng.gen_range(1e5..1e8), rng.gen_range(0.01..10.0), rng.gen_range(20.0..140.0), rng.gen_range(1e-15..1e-10), rng.gen_range(0.0..1e-10));
        let rate = b * log2_1p(pw * 10f64.powf(-l / 5.0) / (s2 + i));
        check("offload rate", rel(offload_rate(b, true, pw, l, s2, i), rate));
        check("offload bits", rel(offload_bits(rate, t), t * rate));

        let (size, fm, delta, nm, m) = (rng.gen_range(1e3..1e8), rng.gen_range(1e9..1e11), rng.gen_range(0.0..2.0), rng.gen_range(1..16usize), rng.gen_range(1..16usize));
        let (up, sb, down) = (rng.gen_range(1e6..1e11), rng.gen_range(1e5..1e7), rng.gen_range(1e6..1e11));
        let freqs: Vec<f64> = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(1.0..4e9)).collect();
        let agg = size / fm;
        let tx = delta * (nm as f64).ln() / LN_2 * size / up;
        let ver = delta * ((m * nm) as f64).ln() / LN_2 * sb / down + sb / freqs.iter().cloned().fold(f64::INFINITY, f64::min);
        check("aggregation overhead", rel(aggregation_overhead(size, fm).unwrap(), agg));
        check("transmission overhead", rel(transmission_overhead(delta, nm, size, up).unwrap(), tx));
        check("verification overhead", rel(verification_overhead(delta, nm, m, sb, down, &freqs).unwrap(), ver));
        check("total overhead", rel(total_overhead(agg, tx, ver).total, agg + tx + ver));

        let (q, d, arr) = (rng.gen_range(0.0..1e10), rng.gen_range(0.0..1e10), rng.gen_range(0.0..1e10));
        let (lam, fr, cs, v, eta) = (rng.gen_range(0.0..10.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..100.0), rng.gen_range(0.0..1e12));
        check("queue update", queue_update(q, d, arr) == if q - d + arr > 0.0 { q - d + arr } else { 0.0 });
        check("drift bound", rel(drift_bound(eta, d), eta / 2.0 + d * d));
        let mag = d + cs + lam * fr;
        check("penalty", within(penalty(d, lam, fr, cs), d - cs - lam * fr, mag));
        check("drift-plus-penalty", within(dpp_objective(q, d, fr, lam, cs, v), q * d + v * (d - cs - lam * fr), q * d + v * mag));

        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let locals: Vec<Vec<f64>> = (0..rng.gen_range(1..5)).map(|_| (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let ws: Vec<f64> = locals.iter().map(|_| rng.gen_range(0.01..1.0)).collect();
        let u = rng.gen_range(-2.0..2.0);
        let g = PolicyParams { layout: vec![4], weights: z.clone() };
        let ls: Vec<PolicyParams> = locals.iter().map(|w| PolicyParams { layout: vec![4], weights: w.clone() }).collect();
        check("model delta", ls.iter().all(|l| compute_delta(&g, l).unwrap().weights.iter().enumerate().all(|(k, &dk)| dk == z[k] - l.weights[k])));
        let refs: Vec<&PolicyParams> = ls.iter().collect();
        let next = aggregate(&FederationRound::from_locals(&g, &refs, ws.clone(), u).unwrap()).unwrap();
        check("aggregation", (0..4).all(|k| {
            let s: f64 = locals.iter().zip(&ws).map(|(l, w)| w * (z[k] - l[k])).sum();
            let mag: f64 = z[k].abs() + locals.iter().zip(&ws).map(|(l, w)| (u * w * (z[k] - l[k])).abs()).sum::<f64>();
            within(next.weights[k], z[k] + u * s, mag)
        }));
        let (bits, tb, dist, td) = (rng.gen_range(0.0..1e9), rng.gen_range(1e9..1e10), rng.gen_range(0.0..1e6), rng.gen_range(1e6..1e7));
        check("aggregation weight", rel(aggregation_weight(bits, dist, tb, td), (bits / tb + dist / td) / 2.0));
    }
    let ok = bad.is_empty();
    Verdict::new(ok, if ok { format!("18 functions x {DRAWS} draws, all within 1e-12") } else { format!("mismatches {bad:?}") })
}

fn amount() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.0..1e3f64, 0.0..1e12f64, Just(f64::MAX / 4.0)]
}

/// Non-negativity under adversarial sequences and the exact telescoping
/// identity on non-clamping integer-valued traces.
pub fn queue_law() -> Verdict {
    let mut runner = TestRunner::new(Config { cases: 5_000, failure_persistence: None, ..Config::default() });
    let nonneg = runner.run(&proptest::collection::vec((amount(), amount()), 1..200), |steps| {
        let mut q = 0.0;
        for (d, a) in steps {
            q = queue_update(q, d, a);
            prop_assert!(q >= 0.0);
        }
        Ok(())
    });
    let mut runner = TestRunner::new(Config { cases: 5_000, failure_persistence: None, ..Config::default() });
    let telescoping = runner.run(&(0u32..1 << 20, proptest::collection::vec((0u32..1 << 20, 0u32..1 << 20), 1..100)), |(q0, steps)| {
        let mut q = q0 as f64;
        for (d, a) in steps {
            let (d, a) = (d as f64, a as f64);
            let next = queue_update(q, d, a);
            let lhs = 0.5 * next * next - 0.5 * q * q;
            let rhs = q * (a - d) + 0.5 * (a - d) * (a - d);
            if q - d + a < 0.0 {
                prop_assert!(lhs <= rhs);
            } else {
                prop_assert_eq!(lhs, rhs);
            }
            q = next;
        }
        Ok(())
    });
    let ok = nonneg.is_ok() && telescoping.is_ok();
    let detail = format!(
        "non-negativity {}, telescoping {} (5000 cases each)",
        if nonneg.is_ok() { "holds" } else { "violated" },
        if telescoping.is_ok() { "exact" } else { "violated" }
    );
    Verdict::new(ok, detail)
}

pub fn federation() -> Verdict {
    let mut rng = stream(107, Stream::Init, 0);
    let mut sum_fail = 0;
    for _ in 0..DRAWS {
        let n = rng.gen_range(1..64);
        let bits: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..1e9) }).collect();
        let dists: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3e6)).collect();
        let w = aggregation_weights(&bits, &dists);
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            sum_fail += 1;
        }
    }

    // With 1/n exactly representable the weighted sum equals the mean bit for bit.
    let mut mean_fail = 0;
    for n in [1usize, 2, 4, 8, 16, 32] {
        let layout = vec![3, 4, 2];
        let len = 3 * 4 + 4 + 4 * 2 + 2;
        let draw = |rng: &mut SimRng| PolicyParams { layout: layout.clone(), weights: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let global = draw(&mut rng);
        let locals: Vec<PolicyParams> = (0..n).map(|_| draw(&mut rng)).collect();
        let refs: Vec<&PolicyParams> = locals.iter().collect();
        let round = FederationRound::from_locals(&global, &refs, vec![1.0 / n as f64; n], 1.0).unwrap();
        let got = aggregate(&round).unwrap();
        for k in 0..len {
            let mean = round.deltas.iter().map(|d| d.weights[k]).sum::<f64>() / n as f64;
            if got.weights[k] != global.weights[k] + mean {
                mean_fail += 1;
            }
        }
    }

    let mut ledger = Ledger::new(7);
    let mut refused = 0;
    for trial in 0..1000u64 {
        let global = PolicyParams { layout: vec![4, 3], weights: (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let local = PolicyParams { layout: vec![4, 3], weights: (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let round = FederationRound::from_locals(&global, &[&local], vec![1.0], 1.0).unwrap();
        let mut flip = stream(107, Stream::Ledger, trial);
        if aggregate_and_issue(&round, &mut ledger, 1e6, |p| flip_random_bit(&mut flip, p)).is_err() {
            refused += 1;
        }
    }
    let ok = sum_fail == 0 && mean_fail == 0 && refused == 1000 && ledger.height() == 0;
    Verdict::new(
        ok,
        format!("weight-sum failures {sum_fail}/{DRAWS}, mean-update mismatches {mean_fail}, tampered aggregates refused {refused}/1000"),
    )
}

const H: f64 = 1e-6;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn finite_diff(p: &PolicyParams, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    (0..p.weights.len())
        .map(|i| {
            let mut a = p.clone();
            a.weights[i] += H;
            let mut b = p.clone();
            b.weights[i] -= H;
            (f(&a) - f(&b)) / (2.0 * H)
        })
        .collect()
}

fn random_state(rng: &mut SimRng, cfg: &SimConfig) -> FollowerState {
    FollowerState {
        arrival: rng.gen_range(cfg.arrival_lo..cfg.arrival_hi),
        leo_x: rng.gen_range(cfg.x_lo..cfg.x_hi),
        leo_y: rng.gen_range(cfg.y_lo..cfg.y_hi),
        price: rng.gen_range(0.0..cfg.price_cap),
        queue: rng.gen_range(1e6..4e8),
        cycles_per_bit: rng.gen_range(cfg.cycles_per_bit_lo..cfg.cycles_per_bit_hi),
    }
}

struct Regression {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl TaskObjective for Regression {
    fn loss_grad(&self, w: &PolicyParams) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; w.weights.len()];
        let mut loss = 0.0;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            let cache = w.forward_cached(x);
            let e = cache.output()[0] - y;
            loss += e * e;
            w.backward(&cache, &[2.0 * e], Some(&mut g));
        }
        (loss, g)
    }
}

/// Worst relative error of actor, critic, leader and meta-update gradients
/// over random small instances.
pub fn gradients() -> Verdict {
    let mut worst: Vec<(&str, f64)> = vec![("actor", 0.0), ("critic", 0.0), ("leader critic", 0.0), ("leader actor", 0.0), ("meta inner", 0.0), ("meta outer", 0.0)];
    let mut record = |name: &str, e: f64| {
        let slot = worst.iter_mut().find(|(n, _)| *n == name).unwrap();
        slot.1 = slot.1.max(e);
    };
    for seed in 0..10u64 {
        let mut rng = stream(seed, Stream::Init, 109);
        let cfg = SimConfig { n_channels: rng.gen_range(1..4), hidden_layers: vec![rng.gen_range(3..7), rng.gen_range(3..7)], ..SimConfig::default() };
        let ctx = PolicyContext::from_config(&cfg);

        let actor = PolicyParams::init(ctx.actor_layout(&cfg.hidden_layers), &mut rng, 0.5);
        let critic = PolicyParams::init(ctx.critic_layout(&cfg.hidden_layers), &mut rng, 1.0);
        let net = NetCritic { params: &critic, ctx: &ctx };
        let states: Vec<FollowerState> = (0..6).map(|_| random_state(&mut rng, &cfg)).collect();
        let anchors = actor_anchors(&actor, &net, &states, &ctx);
        let g = actor_objective_grad(&actor, &net, &states, &ctx).1;
        record("actor", rel_err(&g, &finite_diff(&actor, |p| actor_surrogate(p, &net, &states, &anchors, &ctx))));

        let trs: Vec<Transition> = (0..8)
            .map(|_| {
                let s = random_state(&mut rng, &cfg);
                let a = ctx.action_from_fractions(&s, rng.gen(), rng.gen(), rng.gen_range(0..ctx.n_channels), rng.gen());
                let outcome = Outcome {
                    queue: s.queue,
                    served: a.cpu_freq * ctx.slot / s.cycles_per_bit,
                    freq_used: a.cpu_freq,
                    price: s.price,
                    overhead: rng.gen_range(1e-4..3e-3),
                };
                Transition { state: s, action: a, outcome, reward: outcome.reward(&ctx), next_state: random_state(&mut rng, &cfg) }
            })
            .collect();
        let batch: Vec<&Transition> = trs.iter().collect();
        let conts: Vec<f64> = batch.iter().map(|_| rng.gen_range(-1e4..1e4)).collect();
        let g = critic_loss_grad(&critic, &batch, &conts, &ctx).1;
        record("critic", rel_err(&g, &finite_diff(&critic, |p| critic_loss_grad(p, &batch, &conts, &ctx).0)));

        let lctx = LeaderContext::from_config(&cfg);
        let la = PolicyParams::init(vec![2, 5, 4, 1], &mut rng, 0.5);
        let lc = PolicyParams::init(vec![3, 5, 4, 1], &mut rng, 1.0);
        let samples: Vec<LeaderSample> = (0..8)
            .map(|_| LeaderSample {
                freq_prev: rng.gen_range(0.0..cfg.follower_max_freq),
                unit_cost: rng.gen_range(0.0..3.0),
                price: rng.gen_range(0.0..cfg.price_cap),
                profit: rng.gen_range(-5.0..20.0),
            })
            .collect();
        let g = leader_critic_grad(&lc, &lctx, &samples).1;
        record("leader critic", rel_err(&g, &finite_diff(&lc, |p| leader_critic_grad(p, &lctx, &samples).0)));
        let g = leader_actor_grad(&la, &lc, &lctx, &samples).1;
        record("leader actor", rel_err(&g, &finite_diff(&la, |p| leader_actor_grad(p, &lc, &lctx, &samples).0)));

        let meta = PolicyParams::init(vec![3, 4, 1], &mut rng, 1.0);
        let tasks: Vec<Regression> = (0..3)
            .map(|_| Regression {
                xs: (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                ys: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let (alpha, beta) = (0.05, 0.1);
        let mut adapted_grads = Vec::new();
        let mut fd_sum = vec![0.0; meta.weights.len()];
        for t in &tasks {
            let adapted = inner_adapt(&meta, t, alpha, 1);
            let step: Vec<f64> = meta.weights.iter().zip(&adapted.weights).map(|(a, b)| (a - b) / alpha).collect();
            record("meta inner", rel_err(&step, &finite_diff(&meta, |p| t.loss_grad(p).0)));
            adapted_grads.push(t.loss_grad(&adapted).1);
            fd_sum.iter_mut().zip(finite_diff(&adapted, |p| t.loss_grad(p).0)).for_each(|(s, g)| *s += g);
        }
        let next = outer_update(&meta, &adapted_grads, beta);
        let step: Vec<f64> = meta.weights.iter().zip(&next.weights).map(|(a, b)| (a - b) / beta).collect();
        record("meta outer", rel_err(&step, &fd_sum));
    }
    let ok = worst.iter().all(|(_, e)| *e <= 1e-4);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Verdict::new(ok, format!("worst relative errors over 10 instances: {detail}"))
}
