//! Acceptance suite. Every criterion prints one PASS/FAIL line; a failing
//! criterion never aborts the others.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use p2p_trade::index::DecisionIndex;
use p2p_trade::io::load_bundled;
use p2p_trade::model::{gradient, objective, prosumer_cost};
use p2p_trade::oracle::{solve_centralized, OracleSolution};
use p2p_trade::pricing::{build_price_problem, solve_no_trade_baseline, solve_prices, PricingOptions};
use p2p_trade::problem::{check_neighbor_symmetry, neighbor_sets, SplitProblem};
use p2p_trade::projection::{Projector, DEFAULT_TOLERANCE};
use p2p_trade::scenario::CommunityScenario;
use p2p_trade::solver::*;
use p2p_trade::synth::{perturb, random_radial_topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

type Check = fn() -> Result<Verdict, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

struct Bus13 {
    sc: CommunityScenario,
    idx: DecisionIndex,
    problem: SplitProblem,
    oracle: OracleSolution,
}

fn thirteen_bus() -> Result<Bus13, String> {
    let (sc, _) = load_bundled("ieee13_p2p").map_err(err)?;
    let idx = DecisionIndex::new(&sc).map_err(err)?;
    let problem = SplitProblem::stage1(&sc, &idx).map_err(err)?;
    let oracle = solve_centralized(&problem).map_err(err)?;
    Ok(Bus13 {
        sc,
        idx,
        problem,
        oracle,
    })
}

fn mean_abs_error(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

fn index_count() -> Result<Verdict, String> {
    let start = Instant::now();
    let (sc, _) = load_bundled("ieee13_p2p").map_err(err)?;
    let n = DecisionIndex::new(&sc).map_err(err)?.total_len();
    let t = start.elapsed();
    Ok(verdict(n == 1176 && t < Duration::from_secs(1), format!("N_x = {n}")))
}

fn gradient_check() -> Result<Verdict, String> {
    let start = Instant::now();
    let b = thirteen_bus()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut x: Vec<f64> = (0..b.idx.total_len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let g = gradient(&x, &b.sc, &b.idx);
        for r in 0..x.len() {
            let v = x[r];
            x[r] = v + h;
            let up = objective(&x, &b.sc, &b.idx);
            x[r] = v - h;
            let down = objective(&x, &b.sc, &b.idx);
            x[r] = v;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[r]).abs() / g[r].abs().max(1.0));
        }
    }
    let baseline = solve_no_trade_baseline(&b.sc, &b.idx).map_err(err)?;
    let pp = build_price_problem(
        &b.sc,
        &b.idx,
        &b.oracle.x_star,
        &baseline.costs,
        PricingOptions {
            relax_benefit: true,
            ..PricingOptions::default()
        },
    )
    .map_err(err)?;
    let f2 = &pp.problem.objective;
    let mut worst2: f64 = 0.0;
    for _ in 0..100 {
        let mut lam: Vec<f64> = (0..f2.len()).map(|_| rng.gen_range(0.0..0.4)).collect();
        let g = f2.gradient(&lam);
        for k in 0..lam.len() {
            let v = lam[k];
            lam[k] = v + h;
            let up = f2.value(&lam);
            lam[k] = v - h;
            let down = f2.value(&lam);
            lam[k] = v;
            let fd = (up - down) / (2.0 * h);
            worst2 = worst2.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    let t = start.elapsed();
    Ok(verdict(
        worst <= 1e-6 && worst2 <= 1e-6 && t < Duration::from_secs(10),
        format!(
            "worst relative error stage 1 {worst:.1e}, stage 2 {worst2:.1e} ({} prices)",
            f2.len()
        ),
    ))
}

fn projection_correctness() -> Result<Verdict, String> {
    let start = Instant::now();
    let tol = DEFAULT_TOLERANCE;
    let (mut worst, mut idem, mut expand): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..200 {
        let m = micro_polyhedron(seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
        let mut proj = Projector::new(&m.poly, tol);
        let x = random_point(&mut rng, m.support.len(), 6.0);
        let y = random_point(&mut rng, m.support.len(), 6.0);
        let px = proj.project_local(&x).map_err(err)?.point;
        let py = proj.project_local(&y).map_err(err)?.point;
        let ppx = proj.project_local(&px).map_err(err)?.point;
        worst = worst.max(dist(&px, &enumerate_projection(&m.rows, &x)));
        idem = idem.max(dist(&px, &ppx));
        expand = expand.max(dist(&px, &py) - dist(&x, &y));
    }
    let t = start.elapsed();
    Ok(verdict(
        worst <= 1e-7 && idem <= 10.0 * tol && expand <= 10.0 * tol && t < Duration::from_secs(30),
        format!("max deviation {worst:.1e}, idempotence {idem:.1e}, expansion {expand:.1e}"),
    ))
}

fn fejer_suite() -> Result<Verdict, String> {
    let start = Instant::now();
    let b = thirteen_bus()?;
    let z = &b.oracle.x_star;
    let cfg = SolverConfig {
        lipschitz: default_learning_rate(&b.sc, false),
        ..SolverConfig::default()
    };
    let mut sim = Simulation::new(&b.problem, &cfg).map_err(err)?;
    sim.gradient_round().map_err(err)?;
    let mut prev = dist(&sim.state(), z);
    let mut worst_increase = f64::NEG_INFINITY;
    for _ in 0..100 {
        sim.inner_round().map_err(err)?;
        let d = dist(&sim.state(), z);
        worst_increase = worst_increase.max(d - prev);
        prev = d;
    }
    let t = start.elapsed();
    Ok(verdict(
        worst_increase <= 1e-10 && t < Duration::from_secs(120),
        format!("largest per-round change of |w - z| = {worst_increase:.2e}, final distance {prev:.3}"),
    ))
}

fn inner_rate() -> Result<Verdict, String> {
    let b = thirteen_bus()?;
    let cfg = SolverConfig {
        lipschitz: default_learning_rate(&b.sc, false),
        n_outer: 3,
        ..SolverConfig::default()
    };
    let out = run(&b.problem, &cfg, None).map_err(err)?;
    let mut etas = Vec::new();
    let mut ok = true;
    for residuals in &out.trace.inner_residuals {
        let fit = estimate_eta(residuals).map_err(err)?;
        ok &= (0.5..1.0).contains(&fit.eta);
        etas.push(fit.eta);
    }
    let (mut toy_fit, mut toy_fast) = (0, 0);
    for seed in 0..10 {
        let (p, _) = toy_split(seed, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = SolverConfig {
            initial: Some(random_point(&mut rng, 5, 6.0)),
            inner: InnerSchedule::Constant(60),
            n_outer: 1,
            ..SolverConfig::default()
        };
        let out = run(&p, &cfg, None).map_err(err)?;
        match estimate_eta(&out.trace.inner_residuals[0]) {
            Ok(fit) => {
                ok &= (0.5..1.0).contains(&fit.eta);
                toy_fit += 1;
            }
            // Exact convergence within a handful of rounds: faster than any
            // rate in the range, so the bound holds at its floor.
            Err(_) => toy_fast += 1,
        }
    }
    Ok(verdict(
        ok,
        format!(
            "13-bus eta {:?}; toys: {toy_fit} fitted in [0.5, 1), {toy_fast} converged exactly in < 5 rounds",
            etas.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>()
        ),
    ))
}

fn decentral_equals_central() -> Result<Verdict, String> {
    let b = thirteen_bus()?;
    let cfg = SolverConfig {
        lipschitz: default_learning_rate(&b.sc, false),
        ..SolverConfig::default()
    };
    let mut sim = Simulation::new(&b.problem, &cfg).map_err(err)?;
    let mut central = CentralReplay::new(&b.problem, &cfg).map_err(err)?;
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    let mut rounds = 0;
    for k in 0..20 {
        sim.gradient_round().map_err(err)?;
        central.gradient_step();
        if !same(&sim.state(), central.state()) {
            return Ok(verdict(false, format!("gradient step {k} differs")));
        }
        for d in 0..100 {
            sim.inner_round().map_err(err)?;
            central.inner_step().map_err(err)?;
            rounds += 1;
            if !same(&sim.state(), central.state()) {
                return Ok(verdict(false, format!("outer {k} inner {d} differs")));
            }
        }
    }
    Ok(verdict(true, format!("{rounds} inner rounds and 20 gradient steps bitwise identical")))
}

fn case_study() -> Result<Verdict, String> {
    let start = Instant::now();
    let b = thirteen_bus()?;
    let cfg = SolverConfig {
        lipschitz: default_learning_rate(&b.sc, true),
        inner: InnerSchedule::Constant(100),
        n_outer: 100,
        ..SolverConfig::default()
    };
    let out = run(&b.problem, &cfg, Some(&b.oracle.x_star)).map_err(err)?;
    let last = out.trace.last().ok_or("empty trace")?;
    let gap = last.objective_gap.unwrap_or(f64::NAN).abs();
    let mae = mean_abs_error(&out.solution, &b.oracle.x_star);
    let t = start.elapsed();
    Ok(verdict(
        gap <= 5e-3 && mae <= 0.2 && t < Duration::from_secs(600),
        format!(
            "objective gap {:.3}% (f = {:.4}, f* = {:.4}), mean |x - x*| = {mae:.3} kW, max violation {:.2e}, {:.0} s",
            100.0 * gap,
            last.objective,
            b.oracle.objective,
            last.max_violation,
            t.as_secs_f64()
        ),
    ))
}

fn tuning_free() -> Result<Verdict, String> {
    let start = Instant::now();
    let (base, _) = load_bundled("ieee13_p2p").map_err(err)?;
    let mut gaps = Vec::new();
    for seed in 0..10 {
        let sc = perturb(&base, 0.5, seed);
        let idx = DecisionIndex::new(&sc).map_err(err)?;
        let p = SplitProblem::stage1(&sc, &idx).map_err(err)?;
        let oracle = solve_centralized(&p).map_err(err)?;
        let cfg = SolverConfig {
            lipschitz: default_learning_rate(&sc, false),
            inner: InnerSchedule::Constant(100),
            n_outer: 100,
            workers: 4,
            ..SolverConfig::default()
        };
        let out = run(&p, &cfg, Some(&oracle.x_star)).map_err(err)?;
        gaps.push(out.trace.last().and_then(|r| r.objective_gap).unwrap_or(f64::NAN).abs());
    }
    let t = start.elapsed();
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    Ok(verdict(
        gaps.iter().all(|g| *g <= 1e-2) && t < Duration::from_secs(1800),
        format!(
            "gaps % [{}], worst {:.2}%, {:.0} s",
            gaps.iter().map(|g| format!("{:.2}", 100.0 * g)).collect::<Vec<_>>().join(", "),
            100.0 * worst,
            t.as_secs_f64()
        ),
    ))
}

fn message_locality() -> Result<Verdict, String> {
    let b = thirteen_bus()?;
    // The bus rejects any out-of-set delivery, so a completed run is itself
    // the audit; a logged run is then re-checked message by message.
    let cfg = SolverConfig {
        lipschitz: default_learning_rate(&b.sc, false),
        ..SolverConfig::default()
    };
    let full = run(&b.problem, &cfg, None).map_err(err)?;
    let logged = run(
        &b.problem,
        &SolverConfig {
            n_outer: 5,
            record_messages: true,
            ..cfg
        },
        None,
    )
    .map_err(err)?;
    let bad = logged
        .messages
        .iter()
        .filter(|m| {
            m.payload
                .iter()
                .any(|&(r, _)| !b.problem.neighbors[r].contains(&m.to) || !b.problem.neighbors[r].contains(&m.from))
        })
        .count();
    let mut symmetric = 0;
    for seed in 0..50 {
        let mut sc = b.sc.clone();
        sc.topology = random_radial_topology(6, 3 + (seed as usize % 10), 100.0, seed);
        let idx = DecisionIndex::new(&sc).map_err(err)?;
        let p = SplitProblem::stage1(&sc, &idx).map_err(err)?;
        if neighbor_sets(&sc, &idx).map_err(err)? == p.neighbors && check_neighbor_symmetry(&sc, &idx, &p.neighbors).is_ok() {
            symmetric += 1;
        }
    }
    Ok(verdict(
        bad == 0 && symmetric == 50,
        format!(
            "{} messages in the full run, {} audited individually, {bad} outside their neighbor sets; neighbor sets symmetric on {symmetric}/50 random feeders",
            full.trace.total_messages(),
            logged.messages.len()
        ),
    ))
}

fn stage2_properties() -> Result<Verdict, String> {
    let b = thirteen_bus()?;
    let baseline = solve_no_trade_baseline(&b.sc, &b.idx).map_err(err)?;
    let x = &b.oracle.x_star;
    let sol = solve_prices(&b.sc, &b.idx, x, &baseline.costs, None, PricingOptions::default()).map_err(err)?;
    let (lo, hi) = (b.sc.tariffs.lambda_min, b.sc.tariffs.lambda_max);
    let mut asym: f64 = 0.0;
    for k in 0..sol.index.len() {
        asym = asym.max((sol.values[k] - sol.values[sol.index.mirror(k)]).abs());
    }
    let bounds = sol.values.iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6);
    let mut worst_benefit = f64::NEG_INFINITY;
    for i in 0..b.sc.num_prosumers() {
        worst_benefit = worst_benefit.max(sol.prosumer_cost(&b.sc, &b.idx, x, i) - baseline.costs[i]);
    }
    let pp = build_price_problem(&b.sc, &b.idx, x, &baseline.costs, PricingOptions::default()).map_err(err)?;
    let exact = solve_centralized(&pp.problem).map_err(err)?;
    let decentral = pp.problem.objective.value(&sol.values);
    let rel = (decentral - exact.objective).abs() / exact.objective.abs().max(1e-12);

    // Single active pair with slack benefit rows: clears at the band midpoint.
    let mut pair = b.sc.clone();
    pair.prosumers.truncate(2);
    pair.topology = p2p_trade::scenario::Topology::unconstrained(2);
    let pidx = DecisionIndex::new(&pair).map_err(err)?;
    let mut sale = vec![0.0; pidx.total_len()];
    use p2p_trade::index::Variable;
    sale[pidx.locate(Variable::PeerSell { prosumer: 0, peer: 1, t: 3 })] = 2.0;
    sale[pidx.locate(Variable::PeerBuy { prosumer: 1, peer: 0, t: 3 })] = 2.0;
    let slack: Vec<f64> = (0..2).map(|i| prosumer_cost(&sale, &pair, &pidx, i).non_trade() + 10.0).collect();
    let single = solve_prices(&pair, &pidx, &sale, &slack, None, PricingOptions::default()).map_err(err)?;
    let mid = 0.5 * (lo + hi);
    let mid_err = single.values.iter().map(|v| (v - mid).abs()).fold(0.0, f64::max);

    Ok(verdict(
        asym <= 1e-6 && bounds && worst_benefit <= 1e-6 && mid_err <= 1e-4 && rel <= 5e-3,
        format!(
            "{} prices; asymmetry {asym:.1e}; bounds {}; worst benefit excess {worst_benefit:.2e} $; midpoint error {mid_err:.1e}; objective {decentral:.6} vs oracle {:.6} ({:.3}%)",
            sol.values.len(),
            if bounds { "ok" } else { "violated" },
            exact.objective,
            100.0 * rel
        ),
    ))
}

fn price_invariance() -> Result<Verdict, String> {
    let (base, _) = load_bundled("ieee13_p2p").map_err(err)?;
    let mut non_trade = Vec::new();
    for price in [0.0, 0.5 * (base.tariffs.lambda_gs + base.tariffs.lambda_gb)] {
        let mut sc = base.clone();
        sc.stage1_trade_price = price;
        let idx = DecisionIndex::new(&sc).map_err(err)?;
        let p = SplitProblem::stage1(&sc, &idx).map_err(err)?;
        let cfg = SolverConfig {
            lipschitz: default_learning_rate(&sc, false),
            workers: 4,
            ..SolverConfig::default()
        };
        let out = run(&p, &cfg, None).map_err(err)?;
        let total: f64 = (0..sc.num_prosumers())
            .map(|i| prosumer_cost(&out.solution, &sc, &idx, i).non_trade())
            .sum();
        non_trade.push(total);
    }
    let rel = (non_trade[0] - non_trade[1]).abs() / non_trade[0].abs().max(1e-12);
    Ok(verdict(
        rel <= 1e-3,
        format!(
            "non-trade cost {:.4} vs {:.4} ({:.3}% apart)",
            non_trade[0],
            non_trade[1],
            100.0 * rel
        ),
    ))
}

#[test]
fn acceptance() {
    let criteria: [(&str, Check); 11] = [
        ("index count", index_count),
        ("gradient check", gradient_check),
        ("projection correctness", projection_correctness),
        ("fejer monotonicity", fejer_suite),
        ("inner rate", inner_rate),
        ("decentralized equals centralized", decentral_equals_central),
        ("case-study reproduction", case_study),
        ("tuning-free robustness", tuning_free),
        ("message locality", message_locality),
        ("stage-2 properties", stage2_properties),
        ("stage-1 price invariance", price_invariance),
    ];
    let mut out = std::io::stdout();
    let mut passed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        passed += usize::from(pass);
        let _ = writeln!(out, "{} {name} [{secs:.1}s]: {detail}", if pass { "PASS" } else { "FAIL" });
        let _ = out.flush();
    }
    let _ = writeln!(out, "acceptance: {passed}/11 criteria passed");
}
