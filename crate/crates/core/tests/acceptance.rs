//! Acceptance suite.  Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qavatar::algorithms::{npg_step, run, AlgoConfig, Algorithm, ErrorWindow, RunOutput};
use qavatar::environments::{build_scenario, ScenarioName};
use qavatar::harness::{log_to_csv, run_experiment, ExperimentConfig};
use qavatar::mapping::{search_maps, MapClass};
use qavatar::mdp::{random_mdp, random_policy, value_iteration, Policy, QTable, TabularMdp, Transition, TransitionBatch};
use qavatar::theory::{
    check_importance_ratio, check_occupancy_identity, check_performance_difference, check_regret_lemma, prop_bound,
    sample_complexity, BoundInputs, BoundKind, ComplexityParams,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn quartile_means(alphas: &[f64]) -> (f64, f64) {
    let q = (alphas.len() / 4).max(1);
    (mean(&alphas[..q]), mean(&alphas[alphas.len() - q..]))
}

fn toy_grid() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_qavatar"))
        .args(["toy", "--format", "json"])
        .output()
        .expect("run the toy subcommand");
    if !out.status.success() {
        return outcome(false, format!("toy exited with {}", out.status));
    }
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("toy prints JSON");
    let scale = v["reward_scale"].as_f64().unwrap();
    let row = |name: &str| v["rows"].as_array().unwrap().iter().find(|r| r["map"] == name).unwrap().clone();
    let (a, b) = (row("A"), row("B"));
    let f = |r: &serde_json::Value, k: &str| r[k].as_f64().unwrap();
    let a_ok = f(&a, "cd_loss").abs() <= 1e-9;
    let b_ok = (f(&b, "cd_loss") - scale).abs() <= 1e-9;
    let cycles_ok = f(&a, "cycle_loss").abs() <= 1e-9 && f(&b, "cycle_loss").abs() <= 1e-9;
    outcome(
        a_ok && b_ok && cycles_ok,
        format!(
            "A cd_loss {:.9} (paired {:.9}), B cd_loss {:.9} (paired {:.9}), expected B {scale}; cycle A {} B {}; selected {}",
            f(&a, "cd_loss"),
            f(&a, "cd_loss_paired"),
            f(&b, "cd_loss"),
            f(&b, "cd_loss_paired"),
            f(&a, "cycle_loss"),
            f(&b, "cycle_loss"),
            v["selected"]
        ),
    )
}

fn sweep_mdp(i: u64) -> TabularMdp {
    let ns = 2 + (i % 7) as usize;
    let na = 2 + (i % 2) as usize;
    random_mdp(ns, na, 0.9, 5000 + i)
}

fn bound_sweep() -> Outcome {
    let mut failures = Vec::new();
    let mut reports = 0;
    let mut worst_margin = f64::INFINITY;
    for i in 0..50u64 {
        let tar = sweep_mdp(i);
        tar.require_exploratory().expect("random MDPs have full-support starts");
        let src = random_mdp(tar.n_states(), tar.n_actions(), 0.9, 9000 + i);
        let q_src = value_iteration(&src, 1e-10).0;
        for (algorithm, kind) in [
            (Algorithm::QNpg, BoundKind::Npg),
            (Algorithm::Dqt, BoundKind::Dqt),
            (Algorithm::QAvatar, BoundKind::Qavatar),
        ] {
            let mut cfg = AlgoConfig::new(100, 16, i);
            cfg.keep_trace = true;
            let out = run(algorithm, &tar, std::slice::from_ref(&q_src), &cfg).expect("run");
            let trace = out.trace.expect("trace kept");
            let r = prop_bound(kind, &tar, &BoundInputs::from_trace(&trace)).expect("bound");
            reports += 1;
            worst_margin = worst_margin.min(r.term_a + r.term_b - r.lhs_avg_suboptimality);
            if !(r.satisfied && r.b_le_c) {
                failures.push(format!("mdp {i} {}", algorithm.name()));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{reports} reports, smallest bound margin {worst_margin:.4}, failures {failures:?}"),
    )
}

fn lemma_suites() -> Outcome {
    let mut fails = Vec::new();
    for i in 0..20u64 {
        let m = sweep_mdp(100 + i);
        let (ns, na) = (m.n_states(), m.n_actions());
        let c = check_performance_difference(&m, &random_policy(ns, na, 2.0, i), &random_policy(ns, na, 2.0, 50 + i)).unwrap();
        if !(c.holds && (c.lhs - c.rhs).abs() <= 1e-8) {
            fails.push(format!("pdl {i}"));
        }
    }
    for i in 0..10u64 {
        let m = sweep_mdp(200 + i);
        let pi = random_policy(m.n_states(), m.n_actions(), 2.0, 200 + i);
        for k in [1, 2, 5] {
            if !check_importance_ratio(&m, &pi, k).unwrap().holds {
                fails.push(format!("importance {i} k={k}"));
            }
        }
    }
    for i in 0..20u64 {
        let m = sweep_mdp(300 + i);
        let pi = random_policy(m.n_states(), m.n_actions(), 1.0, 300 + i);
        let c = check_occupancy_identity(&m, &pi, m.rewards(), 3000, 160, 300 + i).unwrap();
        if !c.holds {
            fails.push(format!("occupancy {i}: {:.5} +- {:.5} vs {:.5}", c.estimate, c.std_error, c.exact));
        }
    }
    for i in 0..20u64 {
        let m = sweep_mdp(400 + i);
        let (ns, na) = (m.n_states(), m.n_actions());
        let t_total = 5 + i as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(400 + i);
        let hi = m.max_value();
        let critics: Vec<QTable> = (0..t_total)
            .map(|_| QTable::from_values(ns, na, (0..ns * na).map(|_| rng.gen_range(-hi..=hi)).collect()).unwrap())
            .collect();
        let eta = (1.0 - m.gamma()) * (1.0 / t_total as f64).sqrt();
        if !check_regret_lemma(&m, &critics, eta).unwrap().holds {
            fails.push(format!("regret {i}"));
        }
    }
    outcome(fails.is_empty(), format!("110 cases, failures {fails:?}"))
}

fn paired_runs(name: ScenarioName, n: usize, t: usize, eta: f64, algorithms: &[Algorithm]) -> Vec<Vec<RunOutput>> {
    let sc = build_scenario(name, 0).unwrap();
    algorithms
        .iter()
        .map(|a| {
            (1..=5u64)
                .map(|seed| {
                    let mut cfg = AlgoConfig::new(t, n, seed);
                    cfg.learning_rate = Some(eta);
                    cfg.error_window = ErrorWindow::History;
                    cfg.map_class = sc.map_class.clone();
                    run(*a, &sc.target, &sc.source_critics, &cfg).unwrap()
                })
                .collect()
        })
        .collect()
}

fn positive_transfer() -> Outcome {
    let runs = paired_runs(ScenarioName::PerfectTransfer, 8, 300, 1.0, &[Algorithm::QNpg, Algorithm::QAvatar]);
    let (npg, qav) = (&runs[0], &runs[1]);
    let wins = npg
        .iter()
        .zip(qav)
        .filter(|(n, q)| q.final_suboptimality <= n.final_suboptimality)
        .count();
    let first: Vec<f64> = qav.iter().map(|r| quartile_means(&r.log.alphas()).0).collect();
    let last: Vec<f64> = qav.iter().map(|r| quartile_means(&r.log.alphas()).1).collect();
    let (a1, a4) = (mean(&first), mean(&last));
    outcome(
        wins >= 4 && a4 >= a1,
        format!("qavatar <= q-npg on {wins}/5 seeds; mean alpha first quartile {a1:.4}, last quartile {a4:.4}"),
    )
}

fn negative_transfer() -> Outcome {
    let runs = paired_runs(
        ScenarioName::ReversedGoal,
        32,
        300,
        1.0,
        &[Algorithm::QNpg, Algorithm::QAvatar, Algorithm::Dqt],
    );
    let v_star = runs[0][0].log.optimal_value;
    let sub = |k: usize| mean(&runs[k].iter().map(|r| r.final_suboptimality).collect::<Vec<_>>());
    let (npg, qav, dqt) = (sub(0), sub(1), sub(2));
    let last_alpha = mean(&runs[1].iter().map(|r| quartile_means(&r.log.alphas()).1).collect::<Vec<_>>());
    let ok = last_alpha < 0.3 && qav - npg <= 0.05 * v_star && dqt - npg >= 0.3 * v_star;
    outcome(
        ok,
        format!(
            "last-quartile alpha {last_alpha:.4}; suboptimality q-npg {npg:.4}, qavatar {qav:.4}, dqt {dqt:.4}; V* {v_star:.4}"
        ),
    )
}

fn time_to_threshold() -> Outcome {
    let runs = paired_runs(ScenarioName::PerfectTransfer, 8, 300, 1.0, &[Algorithm::QNpg, Algorithm::QAvatar]);
    // runs that never reach the threshold count as T + 1
    let ttt = |rs: &[RunOutput]| {
        mean(
            &rs.iter()
                .map(|r| r.log.time_to_threshold(0.9).unwrap_or(r.log.records.len() + 1) as f64)
                .collect::<Vec<_>>(),
        )
    };
    let (npg, qav) = (ttt(&runs[0]), ttt(&runs[1]));
    outcome(qav / npg < 1.0, format!("mean time to 0.9 V*: qavatar {qav:.1}, q-npg {npg:.1}, ratio {:.3}", qav / npg))
}

/// Minimal loss each source reaches on transitions starting in `cells`.
fn half_losses(sc: &qavatar::environments::Scenario, policy: &Policy, cells: &[usize]) -> Vec<f64> {
    let tar = &sc.target;
    let mut transitions = Vec::new();
    for &s in cells {
        for a in 0..tar.n_actions() {
            let row = tar.next_dist(s, a);
            let s_next = (0..row.len()).find(|k| row[*k] == 1.0).unwrap();
            transitions.push(Transition { s, a, r: tar.reward(s, a), s_next });
        }
    }
    let batch = TransitionBatch::from_transitions(transitions);
    let class = MapClass::exhaustive(1 << 20);
    sc.source_critics
        .iter()
        .map(|q| {
            let init = qavatar::mapping::DomainMap::new(vec![0; tar.n_states()], vec![0; tar.n_actions()], q.n_states(), q.n_actions()).unwrap();
            search_maps(&batch, q, policy, tar.gamma(), &class, &init, 0).unwrap().1
        })
        .collect()
}

fn multi_source() -> Outcome {
    let sc = build_scenario(ScenarioName::TwoSourceComplementary, 0).unwrap();
    let optimal = value_iteration(&sc.target, 1e-10).1;
    let left = half_losses(&sc, &optimal, &[1, 2]);
    let right = half_losses(&sc, &optimal, &[3, 4]);
    let halves_ok = left[0] < left[1] && right[1] < right[0];

    let mut cfg = AlgoConfig::new(60, 16, 3);
    cfg.map_class = sc.map_class.clone();
    cfg.error_window = ErrorWindow::History;
    let out = run(Algorithm::QAvatarMulti, &sc.target, &sc.source_critics, &cfg).unwrap();
    let mut norm_err: f64 = 0.0;
    let mut order_ok = true;
    let mut ties = 0;
    for r in &out.log.records {
        let td = r.eps_td_emp.unwrap();
        // independent recomputation of the inverse-error weights
        let inv: Vec<f64> = std::iter::once(td).chain(r.eps_cd_emp.iter().copied()).map(|e| 1.0 / e.max(1e-12)).collect();
        let z: f64 = inv.iter().sum();
        let total = (1.0 - r.alpha) + r.source_weights.iter().sum::<f64>();
        norm_err = norm_err.max((total - 1.0).abs()).max(((1.0 - r.alpha) - inv[0] / z).abs());
        for (w, i) in r.source_weights.iter().zip(&inv[1..]) {
            norm_err = norm_err.max((w - i / z).abs());
        }
        let (e0, e1) = (r.eps_cd_emp[0], r.eps_cd_emp[1]);
        let (w0, w1) = (r.source_weights[0], r.source_weights[1]);
        if e0 == e1 {
            ties += 1;
            order_ok &= w0 == w1;
        } else {
            order_ok &= (e0 < e1) == (w0 > w1);
        }
    }
    outcome(
        norm_err <= 1e-12 && order_ok && halves_ok,
        format!(
            "max weight deviation {norm_err:.2e}; lower error gets higher weight at all {} iterations ({ties} ties); \
             half losses left {left:?} right {right:?}",
            out.log.records.len()
        ),
    )
}

/// Six root states whose two actions lead to one of two absorbing
/// zero-reward states.  Every pair's value is its immediate reward, so the
/// source table is Bellman consistent under every policy and every sampled
/// residual is exactly zero.
fn fork_mdp() -> (TabularMdp, QTable) {
    let (roots, na) = (6, 2);
    let ns = roots + 2;
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let next = if s < roots { roots + a } else { s };
            p[(s * na + a) * ns + next] = 1.0;
            if s < roots {
                r[s * na + a] = (1 + s * na + a) as f64 / 16.0;
            }
        }
    }
    let mdp = TabularMdp::new(ns, na, p, r.clone(), 0.5, vec![1.0 / (ns * na) as f64; ns * na]).unwrap();
    (mdp, QTable::from_values(ns, na, r).unwrap())
}

fn reductions() -> Outcome {
    let mut notes = Vec::new();
    let sc = build_scenario(ScenarioName::PerfectTransfer, 0).unwrap();
    let mut cfg = AlgoConfig::new(60, 8, 11);
    cfg.learning_rate = Some(1.0);
    cfg.keep_trace = true;
    let npg = run(Algorithm::QNpg, &sc.target, &[], &cfg).unwrap();
    let mut forced = cfg.clone();
    forced.alpha_override = Some(0.0);
    let qav = run(Algorithm::QAvatar, &sc.target, &sc.source_critics, &forced).unwrap();
    let (tn, tq) = (npg.trace.unwrap(), qav.trace.unwrap());
    let alpha0 = tn.policies == tq.policies && tn.critics == tq.critics && npg.policy == qav.policy;
    notes.push(format!("alpha=0 replay {alpha0}"));

    let (fork, q_src) = fork_mdp();
    let mut cfg = AlgoConfig::new(40, 3, 5);
    cfg.keep_trace = true;
    cfg.error_window = ErrorWindow::History;
    let dqt = run(Algorithm::Dqt, &fork, std::slice::from_ref(&q_src), &cfg).unwrap();
    let qav = run(Algorithm::QAvatar, &fork, std::slice::from_ref(&q_src), &cfg).unwrap();
    let zero_cd = qav.log.records.iter().all(|r| r.eps_cd_emp[0] == 0.0);
    let (td, tq) = (dqt.trace.unwrap(), qav.trace.unwrap());
    // from iteration 2 on, applying the direct-transfer critics to QAvatar's
    // own iterates must reproduce them exactly
    let mut replayed = true;
    for t in 1..tq.policies.len() {
        let next = npg_step(&tq.policies[t], &td.critics[t], tq.eta).unwrap();
        let expected = tq.policies.get(t + 1).unwrap_or(&qav.policy);
        replayed &= &next == expected;
    }
    let cd0 = zero_cd && td.critics[1..] == tq.critics[1..] && tq.alphas[1..].iter().all(|a| *a == 1.0) && replayed;
    let moved = td.policies.last().unwrap() != &td.policies[0];
    notes.push(format!("zero cross-domain error replay {cd0} (policy moved {moved})"));

    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let text = |out: &Path| {
        format!(
            "seeds = [1, 2, 3, 4]\nalgorithms = [\"q-npg\", \"qavatar\", \"dqt\"]\noutput = \"{}\"\nexact_logging = true\n\
             [scenario]\nname = \"perfect-transfer\"\n[algo]\niterations = 40\nsamples_per_iter = 8\nlearning_rate = 1.0\n",
            out.display()
        )
    };
    let mut files = Vec::new();
    for (k, dir) in dirs.iter().enumerate() {
        let cfg = ExperimentConfig::from_text(&text(dir.path()), "acceptance").unwrap();
        run_experiment(&cfg, if k == 2 { 4 } else { 1 }).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        files.push(
            names
                .iter()
                .map(|n| (n.clone(), std::fs::read(dir.path().join(n)).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    let reproducible = files[0] == files[1];
    let parallel = files[0] == files[2];
    notes.push(format!("byte-identical reruns {reproducible}, parallel matches sequential {parallel} ({} files)", files[0].len()));
    let first_csv = log_to_csv(&npg.log);
    let ok = alpha0 && cd0 && moved && reproducible && parallel && first_csv.ends_with('\n');
    outcome(ok, notes.join("; "))
}

/// Sample-complexity expressions written out from scratch.
fn rederived(p: &ComplexityParams) -> (f64, f64, f64) {
    let h = 1.0 / (1.0 - p.gamma);
    let t_req = ((p.n_actions as f64).ln() + 1.0).powi(2) * h * h / (p.beta * p.beta * p.epsilon * p.epsilon);
    let c_tar = 1024.0 * h * h * ((4.0f64).ln() + p.q_class_size.ln() - p.delta.ln());
    let c_cd = 1024.0 * h * h * ((4.0f64).ln() + p.map_class_size.ln() - p.delta.ln());
    let gap = ((1.0 - p.beta) * p.epsilon / p.c1).powi(2) - 3.0 * p.kappa_max;
    let n_qnpg = if gap > 0.0 { c_tar / gap } else { f64::INFINITY };
    let n_qavatar = (c_cd / ((1.0 - p.beta) * p.epsilon / p.c1).powi(2)).min(n_qnpg);
    (t_req, n_qavatar, n_qnpg)
}

fn complexity() -> Outcome {
    let points = [
        (0.1, 0.5, 2, 0.9, 100.0, 0.0, 1e6, 1e3, 0.05),
        (0.05, 0.3, 4, 0.95, 10.0, 1e-6, 1e4, 1e2, 0.1),
        (0.2, 0.7, 3, 0.8, 50.0, 1e-3, 1e8, 1e8, 0.01),
        (0.01, 0.1, 5, 0.99, 1000.0, 0.0, 1e3, 10.0, 0.2),
        (0.3, 0.9, 2, 0.5, 2.0, 0.01, 1e5, 1e4, 0.5),
    ];
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    let rel = |a: f64, b: f64| if a.is_infinite() && b.is_infinite() { 0.0 } else { ((a - b) / b).abs() };
    for (epsilon, beta, n_actions, gamma, c1, kappa_max, q, f, delta) in points {
        let p = ComplexityParams {
            epsilon,
            beta,
            n_actions,
            gamma,
            c1,
            kappa_max,
            q_class_size: q,
            map_class_size: f,
            delta,
        };
        let got = sample_complexity(&p).unwrap();
        let (t, na, nq) = rederived(&p);
        worst = worst.max(rel(got.t_required, t)).max(rel(got.n_qavatar, na)).max(rel(got.n_qnpg, nq));
        let half = sample_complexity(&ComplexityParams { epsilon: epsilon / 2.0, ..p.clone() }).unwrap();
        monotone &= rel(half.t_required, 4.0 * got.t_required) < 1e-12;
        let clean = sample_complexity(&ComplexityParams {
            kappa_max: 0.0,
            map_class_size: q.min(f),
            q_class_size: q.max(f) * 10.0,
            ..p.clone()
        })
        .unwrap();
        monotone &= clean.c_cd < clean.c_tar && clean.n_qavatar < clean.n_qnpg && clean.n_qnpg.is_finite();
    }
    outcome(worst < 1e-12 && monotone, format!("max relative deviation {worst:.2e}; monotonicity {monotone}"))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "toy grid losses", toy_grid, Duration::from_secs(1)),
        (2, "bound validity sweep", bound_sweep, Duration::from_secs(300)),
        (3, "lemma suites", lemma_suites, Duration::from_secs(120)),
        (4, "positive transfer", positive_transfer, Duration::from_secs(120)),
        (5, "negative transfer", negative_transfer, Duration::from_secs(120)),
        (6, "time-to-threshold ratio", time_to_threshold, Duration::from_secs(120)),
        (7, "multi-source weights", multi_source, Duration::from_secs(60)),
        (8, "reduction identities", reductions, Duration::MAX),
        (9, "sample-complexity evaluator", complexity, Duration::MAX),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check, budget) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        let in_time = elapsed <= budget;
        let passed = result.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {n} {}: {name} [{:.2}s{}] {}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time budget" },
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
