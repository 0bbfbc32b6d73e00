//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fxdrqn::agent::{compute_loss_and_grads, AgentConfig, ReplayMemory};
use fxdrqn::analytics::{annualize, expectation, max_drawdown};
use fxdrqn::checkpoint;
use fxdrqn::env::{commission, Action, AugmentedTransition, PortfolioLedger, SimParams, TradingEnv};
use fxdrqn::features::MarketState;
use fxdrqn::market_data::Bar;
use fxdrqn::nn::network::{OUTPUT_INIT_VARIANCE, OUTPUT_SPARSITY};
use fxdrqn::nn::{gradcheck::rel_error, init_network, NetShape, QNetwork, Tensors};
use fxdrqn::synthetic::{random_walk_dataset, sinusoid_dataset, SinusoidSpec};
use fxdrqn::trainer::{self, RunConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let shape = NetShape::new(12, 8, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut online = QNetwork::zeros(shape);
    for t in online.params.slices_mut() {
        t.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let mut target = online.clone();
    for t in target.params.slices_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let seq: Vec<AugmentedTransition> = (0..5)
        .map(|time| {
            let core: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let next: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            AugmentedTransition {
                time,
                state: MarketState::from_core(&core, Action::from_index(rng.random_range(0..3))),
                rewards: [0.0; 3].map(|_: f64| rng.random_range(-0.01..0.01)),
                next_core: next,
                executed: Action::from_index(rng.random_range(0..3)),
            }
        })
        .collect();
    let refs: Vec<&AugmentedTransition> = seq.iter().collect();
    let out = compute_loss_and_grads(&online, &target, &refs, 0.99).map_err(|e| e.to_string())?;

    // Targets are constants of the loss; perturb the online network only.
    let xs: Vec<&[f64]> = seq.iter().map(|t| t.state.as_slice()).collect();
    let loss_at = |net: &QNetwork| -> f64 {
        let (q, _) = net.forward_sequence(&xs).unwrap();
        let n = (q.len() * 3) as f64;
        q.iter()
            .zip(&out.targets)
            .flat_map(|(qt, tt)| (0..3).map(move |a| (qt[a] - tt[a]).powi(2)))
            .sum::<f64>()
            / n
    };
    let eps = 1e-6;
    let mut probe = online.clone();
    let mut worst = (0.0f64, "");
    let mut checked = 0;
    for (ti, name) in Tensors::NAMES.iter().enumerate() {
        for k in 0..out.grads.grads.slices()[ti].len() {
            let orig = probe.params.slices()[ti][k];
            probe.params.slices_mut()[ti][k] = orig + eps;
            let plus = loss_at(&probe);
            probe.params.slices_mut()[ti][k] = orig - eps;
            let minus = loss_at(&probe);
            probe.params.slices_mut()[ti][k] = orig;
            let err = rel_error(out.grads.grads.slices()[ti][k], (plus - minus) / (2.0 * eps));
            if err > worst.0 {
                worst = (err, name);
            }
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst.0 < 1e-4 && secs < 10.0,
        format!(
            "{checked} params, max rel error {:.2e} ({}), {secs:.2}s",
            worst.0, worst.1
        ),
    )
}

fn eurusd(data: &fxdrqn::AlignedDataset) -> usize {
    data.pair_index(&"EURUSD".parse().unwrap()).unwrap()
}

fn random_actions(rng: &mut ChaCha8Rng) -> Action {
    Action::from_index(rng.random_range(0..3))
}

fn accounting_telescoping() -> Outcome {
    let data = random_walk_dataset(50_000 + 105, 5e-4, 3);
    let started = Instant::now();
    let mut env = TradingEnv::new(&data, eurusd(&data), SimParams::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v0 = env.ledger().value;
    let mut sum = 0.0;
    let mut steps = 0;
    while !env.is_done() && steps < 50_000 {
        sum += env.step(random_actions(&mut rng)).map_err(|e| e.to_string())?.reward;
        steps += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    let exact = (env.ledger().value / v0).ln();
    let rel = (sum - exact).abs() / exact.abs();
    check(
        steps == 50_000 && rel < 1e-9 && secs < 5.0,
        format!("{steps} steps, sum r {sum:.12}, ln ratio {exact:.12}, rel {rel:.1e}, {secs:.2}s"),
    )
}

fn augmentation_consistency() -> Outcome {
    let data = random_walk_dataset(10_000 + 105, 5e-4, 5);
    let params = SimParams::default();
    let mut env = TradingEnv::new(&data, eurusd(&data), params).map_err(|e| e.to_string())?;
    // A second environment fed different actions sees the same market.
    let mut shadow = TradingEnv::new(&data, eurusd(&data), params).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for step in 0..10_000 {
        let a = random_actions(&mut rng);
        let (out, tr) = env.step_augmented(a).map_err(|e| e.to_string())?;
        let (_, shadow_tr) = shadow
            .step_augmented(random_actions(&mut rng))
            .map_err(|e| e.to_string())?;
        if tr.rewards[a.index()].to_bits() != out.reward.to_bits() {
            return Err(format!("step {step}: augmented reward differs from executed reward"));
        }
        if tr.next_state(a) != out.next_state {
            return Err(format!("step {step}: executed next state differs"));
        }
        if Action::ALL
            .iter()
            .any(|&b| tr.next_state(b).core() != out.next_state.core())
        {
            return Err(format!("step {step}: next core differs across actions"));
        }
        if shadow_tr.next_core != tr.next_core {
            return Err(format!("step {step}: next core depends on the action path"));
        }
    }
    Ok("10000 steps, rewards bit-identical, next core shared".into())
}

fn commission_law() -> Outcome {
    let (c, s) = (100_000.0, 0.8e-4);
    let mut bad = Vec::new();
    for a in Action::ALL {
        if commission(a, a, c, s) != 0.0 {
            bad.push(format!("hold {a}"));
        }
    }
    for a in [Action::Long, Action::Short] {
        if commission(Action::Flat, a, c, s) != c * s || commission(a, Action::Flat, c, s) != c * s {
            bad.push(format!("open/close {a}"));
        }
    }
    if commission(Action::Long, Action::Short, c, s) != 2.0 * c * s
        || commission(Action::Short, Action::Long, c, s) != 2.0 * c * s
    {
        bad.push("reversal".into());
    }
    // Through the ledger on a bar with no price move.
    let bar = Bar {
        start: 0,
        open: 1.0,
        high: 1.0,
        low: 1.0,
        close: 1.0,
        tick_volume: 1,
    };
    let mut ledger = PortfolioLedger::new(SimParams {
        initial_cash: 100_000.0,
        trade_size: c,
        spread: s,
    });
    let mut v = ledger.value;
    for (a, mult) in [
        (Action::Long, 1.0),
        (Action::Long, 0.0),
        (Action::Short, 2.0),
        (Action::Flat, 1.0),
    ] {
        ledger.apply(a, &bar, 0).map_err(|e| e.to_string())?;
        if v - ledger.value != mult * c * s {
            bad.push(format!("ledger charge for {a}: {}", v - ledger.value));
        }
        v = ledger.value;
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            "hold 0, open c*spread, reversal 2c*spread".into()
        } else {
            bad.join(", ")
        },
    )
}

fn replay_properties() -> Outcome {
    let mut memory = ReplayMemory::new(480);
    for time in 0..600 {
        memory
            .store(AugmentedTransition {
                time,
                state: MarketState::from_core(&[0.0], Action::Flat),
                rewards: [0.0; 3],
                next_core: vec![0.0],
                executed: Action::Flat,
            })
            .map_err(|e| e.to_string())?;
        if time >= 480 && memory.len() != 480 {
            return Err(format!("size {} after {} inserts", memory.len(), time + 1));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let positions = 480 - 96 + 1;
    let mut counts = vec![0usize; positions];
    let first = memory.get(0).unwrap().time;
    let draws = 10_000;
    for _ in 0..draws {
        let w = memory.sample_sequence(96, &mut rng).ok_or("memory not ready")?;
        if w.len() != 96 || w.windows(2).any(|p| p[1].time != p[0].time + 1) {
            return Err("non-contiguous window".into());
        }
        counts[w[0].time - first] += 1;
    }
    // Pearson chi-square against uniform; df = positions - 1.
    let e = draws as f64 / positions as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let df = (positions - 1) as f64;
    let z = (chi2 - df) / (2.0 * df).sqrt();
    check(
        z.abs() < 3.0,
        format!("{positions} start positions, chi2 {chi2:.1} (df {df}), z {z:.2}"),
    )
}

fn initialization_audit() -> Outcome {
    let shape = NetShape::STANDARD;
    let h = shape.lstm;
    let (mut sum_sq, mut n) = (0.0, 0usize);
    for seed in 0..1000 {
        let net = init_network(shape, seed);
        let p = &net.params;
        if p.bl[h..2 * h].iter().any(|&b| b != 1.0) {
            return Err(format!("seed {seed}: forget bias not 1"));
        }
        for gate in 0..4 {
            for i in 0..h {
                for j in 0..h {
                    let w = p.wh[(gate * h + i) * h + j];
                    if w != if i == j { 1.0 } else { 0.0 } {
                        return Err(format!("seed {seed}: hidden-to-hidden not identity"));
                    }
                }
            }
        }
        for row in p.wo.chunks_exact(h) {
            let nz: Vec<f64> = row.iter().copied().filter(|&w| w != 0.0).collect();
            if nz.len() != OUTPUT_SPARSITY {
                return Err(format!("seed {seed}: output row has {} nonzeros", nz.len()));
            }
            sum_sq += nz.iter().map(|w| w * w).sum::<f64>();
            n += nz.len();
        }
    }
    let var = sum_sq / n as f64;
    let rel = (var - OUTPUT_INIT_VARIANCE).abs() / OUTPUT_INIT_VARIANCE;
    check(
        rel < 0.2,
        format!(
            "1000 seeds, output variance {var:.6} over {n} weights ({:.1}% off)",
            100.0 * rel
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let mut bad = Vec::new();
    let mut close = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-9 * want.abs().max(1e-12) {
            bad.push(format!("{name}: {got} vs {want}"));
        }
    };
    // Alternating m +- s has mean m and population std s; only m - s is negative.
    let (m, s) = (0.000643, 0.01023);
    let daily: Vec<f64> = (0..500).map(|k| if k % 2 == 0 { m + s } else { m - s }).collect();
    let a = annualize(&daily);
    close("annual return", a.annual_return, 252.0 * m);
    close("sharpe", a.sharpe.unwrap_or(f64::NAN), m / s * 252f64.sqrt());
    let downside = (m - s).abs() / 2f64.sqrt();
    close("sortino", a.sortino.unwrap_or(f64::NAN), m / downside * 252f64.sqrt());

    if max_drawdown(&[100.0, 110.0, 99.0, 105.0]) != (99.0 - 110.0) / 110.0
        || max_drawdown(&[100.0, 50.0]) != -0.5
        || max_drawdown(&[1.0, 2.0, 3.0]) != 0.0
    {
        bad.push("mdd hand cases".into());
    }
    let gbpusd = expectation(0.572, 70.25, -87.33);
    if (gbpusd - 2.83).abs() >= 0.05 {
        bad.push(format!("GBPUSD expectation {gbpusd:.3}"));
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "return {:.4}, sharpe {:.4}, mdd exact, GBPUSD expectation {gbpusd:.3}",
                a.annual_return,
                a.sharpe.unwrap()
            )
        } else {
            bad.join("; ")
        },
    )
}

fn determinism() -> Outcome {
    let data = random_walk_dataset(104 + 700, 5e-4, 8);
    let config = RunConfig {
        seed: 21,
        agent: AgentConfig {
            seq_len: 32,
            memory_capacity: 160,
            ..AgentConfig::default()
        },
        ..RunConfig::default()
    };
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for k in 0..2 {
        let dir = root.path().join(format!("run{k}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let out = trainer::run_in_dir(&config, &data, &dir).map_err(|e| e.to_string())?;
        let log = std::fs::read(dir.join(trainer::RUNLOG_FILE)).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(dir.join(trainer::CHECKPOINT_DIR).join(trainer::FINAL_CHECKPOINT))
            .map_err(|e| e.to_string())?;
        files.push((log, ckpt, out.log.training_events(), checkpoint::to_bytes(&out.agent)));
    }
    let (a, b) = (&files[0], &files[1]);
    check(
        a.0 == b.0 && a.1 == b.1 && a.3 == b.3 && a.2 > 0,
        format!(
            "700 steps, {} training events, run log and checkpoint bytes identical: {}",
            a.2,
            a.0 == b.0 && a.1 == b.1
        ),
    )
}

fn learning_sanity() -> Outcome {
    let data = sinusoid_dataset(&SinusoidSpec {
        slots: 20_000 + 104,
        ..SinusoidSpec::default()
    });
    let mut results = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..5 {
        let config = RunConfig {
            seed,
            spread_bp: 0.0,
            max_steps: Some(20_000),
            ..RunConfig::default()
        };
        let started = Instant::now();
        let out = trainer::run(&config, &data).map_err(|e| e.to_string())?;
        slowest = slowest.max(started.elapsed());
        if out.log.len() != 20_000 {
            return Err(format!("seed {seed}: {} steps ({:?})", out.log.len(), out.failure));
        }
        results.push(out.cumulative_log_return());
    }
    let wins = results.iter().filter(|&&r| r > 0.0).count();
    let summary: Vec<String> = results.iter().map(|r| format!("{r:+.4}")).collect();
    check(
        wins >= 4 && slowest < Duration::from_secs(300),
        format!(
            "{wins}/5 seeds positive [{}], slowest seed {:.0}s",
            summary.join(", "),
            slowest.as_secs_f64()
        ),
    )
}

fn target_update_law() -> Outcome {
    let shape = NetShape::new(6, 5, 4, 3);
    let online = init_network(shape, 1);
    let mut target = init_network(shape, 2);
    let initial = target.clone();
    let tau = 0.001;
    let mut worst = 0.0f64;
    for k in 1..=2000 {
        target.soft_update_from(&online, tau).map_err(|e| e.to_string())?;
        if k % 250 == 0 {
            let shrink = (1.0 - tau).powi(k);
            for ((t, t0), o) in target
                .params
                .iter()
                .zip(initial.params.iter())
                .zip(online.params.iter())
            {
                let want = shrink * (t0 - o);
                let scale = t0.abs().max(o.abs()).max(1e-300);
                worst = worst.max(((t - o) - want).abs() / scale);
            }
        }
    }
    check(
        worst < 1e-12,
        format!("2000 updates, max deviation from (1-tau)^k gap {worst:.1e} of parameter scale"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("accounting telescoping", accounting_telescoping),
        ("augmentation consistency", augmentation_consistency),
        ("commission law", commission_law),
        ("replay properties", replay_properties),
        ("initialization audit", initialization_audit),
        ("metrics oracle", metrics_oracle),
        ("determinism", determinism),
        ("learning sanity", learning_sanity),
        ("target update law", target_update_law),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
