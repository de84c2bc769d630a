//! Acceptance suite. Each test checks one criterion and prints a single
//! `criterion N ... PASS|FAIL` line before asserting.

use std::path::PathBuf;
use std::sync::OnceLock;

use poolfund::artifact::write_solution;
use poolfund::ingest::{fit_return_model, load_market_file, real_returns};
use poolfund::simulate::{
    liquidity_check, simulate_success_probability, ConstantWeight, Estimate, FnPolicy, SimConfig,
};
use poolfund::solver::{last_step_closed_form, max_pool_gap};
use poolfund::table::{num, Table};
use poolfund::{
    cohort, solve, CohortMortality, FloorMatrix, MortalityTable, ReturnModel, Solution, SolverConfig,
    WithdrawalPlan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn retiree_cohort() -> CohortMortality {
    cohort(&MortalityTable::bundled(), 65).unwrap()
}

fn retiree_plan(contribution: f64, pool: u32) -> WithdrawalPlan {
    WithdrawalPlan::level(contribution, pool, 55, 0.0, 65).unwrap()
}

/// Age 65, level unit withdrawals, pools up to 7.
fn small_pools() -> &'static Solution {
    static S: OnceLock<Solution> = OnceLock::new();
    S.get_or_init(|| {
        solve(
            &retiree_plan(18.0, 7),
            &retiree_cohort(),
            &ReturnModel::baseline(),
            &SolverConfig::with_max_pool(7),
        )
        .unwrap()
    })
}

/// Age 65, level unit withdrawals, pools up to 50.
fn large_pools() -> &'static Solution {
    static S: OnceLock<Solution> = OnceLock::new();
    S.get_or_init(|| {
        solve(
            &retiree_plan(15.0, 50),
            &retiree_cohort(),
            &ReturnModel::baseline(),
            &SolverConfig::with_max_pool(50),
        )
        .unwrap()
    })
}

#[test]
fn criterion_01_floors() {
    let floors = FloorMatrix::new(&[1.0; 55], 0.0, 100);
    let mut worst: f64 = 0.0;
    for a in 1..=100u32 {
        for i in 0..=55usize {
            let exact = (a as usize * (55 - i)) as f64;
            let got = floors.floor(a, i);
            let err = if exact == 0.0 { got.abs() } else { ((got - exact) / exact).abs() };
            worst = worst.max(err);
        }
    }
    report(1, "riskless floors", worst <= 1e-12, format!("max relative error {worst:e}"));
}

#[test]
fn criterion_02_last_stage_closed_form() {
    let sol = small_pools();
    let k = sol.horizon();
    let floors = sol.values.floors();
    let op = sol.stage_operator(k - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = rng.random_range(1..=7u32);
        let x = rng.random_range(1e-3..1.0) * floors.floor(a, k - 1);
        let q = 1.0 - rng.random_range(0.0..1.0);
        let h = op.h_value(x, a, q);
        worst = worst.max((h - last_step_closed_form(x, a, q, sol.model(), floors)).abs());
    }
    report(2, "last-stage closed form", worst <= 1e-3, format!("max |h - closed form| {worst:e}"));
}

#[test]
fn criterion_03_dp_matches_simulation() {
    let c = cohort(&MortalityTable::bundled(), 100).unwrap();
    let model = ReturnModel::baseline();
    let template = WithdrawalPlan::level(1.0, 3, 20, 0.0, 100).unwrap();
    let sol = solve(&template, &c, &model, &SolverConfig::with_max_pool(3)).unwrap();
    let cfg = SimConfig::new(1_000_000, 3).unwrap();
    let mut pass = true;
    let mut worst = (0.0, String::new());
    for a in 1..=3u32 {
        for j in [5usize, 10, 20, 30, 45] {
            let x = sol.values.wealth(0, a, j);
            let plan = template.with_pool_size(a).unwrap().with_contribution(x / a as f64).unwrap();
            let v = sol.values.stored(0, a, j);
            let est = simulate_success_probability(&plan, &c, &model, &sol.policy, &cfg).unwrap();
            let diff = (v - est.probability).abs();
            let tol = f64::max(0.01, 4.0 * est.std_error);
            pass &= diff <= tol;
            if diff > worst.0 {
                worst = (diff, format!("a={a} P={} v0={v:.4} sim={:.4}", x / a as f64, est.probability));
            }
        }
    }
    report(3, "value vs simulation", pass, format!("largest gap {:.4} at {}", worst.0, worst.1));
}

#[test]
fn criterion_04_reference_anchors() {
    let sol = small_pools();
    let three = sol.initial_value(3.0 * 18.0, 3);
    let seven = sol.initial_value(7.0 * 15.0, 7);
    let three_lb = sol.values.value_at(3.0 * 18.0, 3, 0);
    let seven_lb = sol.values.value_at(7.0 * 15.0, 7, 0);
    let pass = (three - 0.95).abs() <= 0.02 && (seven - 0.90).abs() <= 0.02;
    report(
        4,
        "reference anchors",
        pass,
        format!("v0(54,3)={three:.4} v0(105,7)={seven:.4}; grid lower bounds {three_lb:.4} {seven_lb:.4}"),
    );
}

#[test]
fn criterion_05_pooling_benefit() {
    let sol = large_pools();
    let gap20 = max_pool_gap(sol, 20, 1);
    let inc5 = max_pool_gap(sol, 5, 4);
    let inc50 = max_pool_gap(sol, 50, 49);
    let pass = (0.11..=0.18).contains(&gap20) && inc50 < inc5;
    report(
        5,
        "pooling benefit",
        pass,
        format!("gap(20)={gap20:.4} increment(5)={inc5:.5} increment(50)={inc50:.5}"),
    );
}

#[test]
fn criterion_06_monotonicity() {
    const TIE: f64 = 1e-12;
    let table = MortalityTable::bundled();
    let model = ReturnModel::baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    // (largest drop, value where it happens)
    let mut worst = (0.0f64, 0.0f64);
    for case in 0..20 {
        let s = rng.random_range(105..=118u32);
        let k = (120 - s) as usize;
        let a_max = rng.random_range(1..=5u32);
        let r = rng.random_range(0.0..0.02);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
        let plan = WithdrawalPlan::new(1.0, a_max, w, r, s).unwrap();
        let m = model.with_rate(r).unwrap();
        let sol = solve(&plan, &cohort(&table, s).unwrap(), &m, &SolverConfig::with_max_pool(a_max)).unwrap();
        let res = sol.config().resolution;
        for i in 0..k {
            for a in 1..=a_max {
                let v = sol.values.column(i, a);
                if v.windows(2).any(|p| p[1] < p[0] - TIE) {
                    failures.push(format!("case {case}: v not monotone in x at stage {i} pool {a}"));
                }
                if sol.policy.column(i, a).iter().any(|q| !(0.0..=1.0).contains(q)) {
                    failures.push(format!("case {case}: weight outside [0,1] at stage {i} pool {a}"));
                }
                let floor = sol.floor(a, i);
                if sol.values.value_at(floor, a, i) != 1.0
                    || sol.values.value_at(floor * 1.5 + 1.0, a, i) != 1.0
                    || sol.values.value_at(-1e-9, a, i) != 0.0
                {
                    failures.push(format!("case {case}: boundary values at stage {i} pool {a}"));
                }
            }
        }
        for a in 2..=a_max {
            let (big, small) = (sol.values.column(0, a), sol.values.column(0, a - 1));
            for j in 0..res - 1 {
                if small[j] - big[j] > worst.0 {
                    worst = (small[j] - big[j], small[j]);
                }
            }
            if let Some(j) = (0..res - 1).find(|&j| big[j] < small[j] - TIE) {
                failures.push(format!("case {case}: v0 decreases from pool {} to {a} at j={}", a - 1, j + 1));
            }
        }
    }
    let detail = if failures.is_empty() {
        "20 random plans".to_string()
    } else {
        format!(
            "{} violations, first: {}; largest drop in pool size {:.4} at v0={:.4}",
            failures.len(),
            failures[0],
            worst.0,
            worst.1
        )
    };
    report(6, "monotonicity", failures.is_empty(), detail);
}

#[test]
fn criterion_07_liquidity_bound() {
    let table = MortalityTable::bundled();
    let model = ReturnModel::baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut paths, mut violations) = (0, 0);
    for case in 0..10u64 {
        let s = rng.random_range(65..=100u32);
        let k = (120 - s) as usize;
        let a = rng.random_range(1..=30u32);
        let p = rng.random_range(5.0..25.0);
        let plan = WithdrawalPlan::level(p, a, k, 0.0, s).unwrap();
        let c = cohort(&table, s).unwrap();
        let cfg = SimConfig::new(10_000, 100 + case).unwrap();
        let report = if case % 2 == 0 {
            liquidity_check(&plan, &c, &model, &ConstantWeight(rng.random_range(0.0..=1.0)), &cfg)
        } else {
            // A state-dependent rule that de-risks as wealth per member grows.
            let policy = FnPolicy(|_stage: usize, wealth: f64, pool: u32| {
                Ok((1.0 - wealth / (20.0 * pool.max(1) as f64)).clamp(0.0, 1.0))
            });
            liquidity_check(&plan, &c, &model, &policy, &cfg)
        }
        .unwrap();
        paths += report.paths;
        violations += report.violations;
    }
    report(7, "liquidity bound", violations == 0, format!("{violations} violations in {paths} paths"));
}

#[test]
fn criterion_08_optimal_beats_all_stock() {
    let sol = large_pools();
    let c = retiree_cohort();
    let model = ReturnModel::baseline();
    let cfg = SimConfig::new(100_000, 8).unwrap();
    let mut ok = true;
    let mut best: f64 = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    for p in (10..=20).step_by(2) {
        let plan = retiree_plan(p as f64, 30);
        let opt = simulate_success_probability(&plan, &c, &model, &sol.policy, &cfg).unwrap();
        let stock = simulate_success_probability(&plan, &c, &model, &ConstantWeight(1.0), &cfg).unwrap();
        let diff = opt.probability - stock.probability;
        let se = opt.std_error.hypot(stock.std_error);
        ok &= diff >= -3.0 * se;
        best = best.max(diff);
        rows.push(format!("P={p}:{diff:+.4}"));
    }
    let pass = ok && best >= 0.02;
    report(8, "optimal vs all-stock", pass, format!("max gain {best:.4}; {}", rows.join(" ")));
}

fn shiller_path() -> PathBuf {
    std::env::var_os("POOLFUND_MARKET_CSV").map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sp_composite_annual.csv")
    })
}

#[test]
fn criterion_09_market_pipeline() {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/market_synthetic.csv");
    let returns = real_returns(&load_market_file(&fixture).unwrap()).unwrap();
    let expected = [11.0 / 10.0, 105.0 / 121.0, 61.0 / 50.0, 11.0 / 15.0];
    let fixture_ok =
        returns.len() == expected.len() && returns.iter().zip(&expected).all(|(r, e)| (r - e).abs() <= 1e-15);

    let path = shiller_path();
    let (history_ok, history) = match load_market_file(&path) {
        Ok(series) => {
            let fit = fit_return_model(&real_returns(&series).unwrap(), 0.0).unwrap();
            let ok = (fit.mu() - 1.083).abs() < 5e-4 && (fit.sigma() - 0.1753).abs() < 5e-4;
            (ok, format!("{} years fit mean {:.4} sd {:.4}", series.len(), fit.mu(), fit.sigma()))
        }
        Err(e) => (false, format!("historical series unavailable at {}: {e}", path.display())),
    };
    report(
        9,
        "market data pipeline",
        fixture_ok && history_ok,
        format!("fixture returns {}; {history}", if fixture_ok { "exact" } else { "wrong" }),
    );
}

fn estimate_table(estimates: &[(f64, Estimate)]) -> String {
    let mut t = Table::new(["contribution", "paths", "successes", "probability", "std_error"]);
    for (p, e) in estimates {
        t.push(vec![
            num(*p),
            e.paths.to_string(),
            e.successes.to_string(),
            num(e.probability),
            num(e.std_error),
        ]);
    }
    t.to_csv()
}

#[test]
fn criterion_10_determinism() {
    let c = cohort(&MortalityTable::bundled(), 95).unwrap();
    let model = ReturnModel::baseline();
    let template = WithdrawalPlan::level(6.0, 4, 25, 0.0, 95).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let sol = solve(&template, &c, &model, &SolverConfig::with_max_pool(4)).unwrap();
            let mut grid = Vec::new();
            write_solution(&sol, &mut grid).unwrap();
            let cfg = SimConfig::new(50_000, 10).unwrap();
            let estimates: Vec<(f64, Estimate)> = [4.0, 6.0, 8.0]
                .into_iter()
                .map(|p| {
                    let plan = template.with_contribution(p).unwrap();
                    (p, simulate_success_probability(&plan, &c, &model, &sol.policy, &cfg).unwrap())
                })
                .collect();
            (grid, estimate_table(&estimates))
        })
    };
    let (grid_a, table_a) = run(1);
    let (grid_b, table_b) = run(1);
    let (grid_c, table_c) = run(4);
    let single = grid_a == grid_b && table_a == table_b;
    let multi = grid_a == grid_c && table_a == table_c;
    report(
        10,
        "determinism",
        single && multi,
        format!("single-worker identical: {single}; multi-worker identical: {multi}"),
    );
}
