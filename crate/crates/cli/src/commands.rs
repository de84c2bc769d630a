use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use poolfund::artifact::{load_solution, save_solution, ArtifactMeta};
use poolfund::ingest::{fit_return_model, load_market_file, real_returns};
use poolfund::mortality::load_life_table_file;
use poolfund::simulate::{
    liquidity_check, simulate_all_annuitant, simulate_success_probability, trace_path, ConstantWeight,
    Estimate, Policy, SimConfig,
};
use poolfund::solver::{max_pool_gap, required_contribution, solve_objective};
use poolfund::table::{num, Table};
use poolfund::{
    cohort, CohortMortality, MortalityTable, Objective, ReturnModel, Solution, SolverConfig, WithdrawalPlan,
};
use serde_json::json;

use crate::manifest::Run;
use crate::opts::{Command, Settings};
use crate::Failure;

const MAX_TRACE: usize = 1000;

pub fn run(command: Command, settings: &Settings) -> Result<Table, Failure> {
    let out = Path::new(settings.get("out").unwrap_or("."));
    let mut run = Run::new(command.name(), out, settings.values().clone())?;
    let table = match command {
        Command::Solve => solve(settings, &mut run)?,
        Command::Simulate => simulate(settings, &mut run)?,
        Command::Frontier => frontier(settings, &mut run)?,
        Command::PoolBenefit => pool_benefit(settings, &mut run)?,
        Command::Sensitivity => sensitivity(settings, &mut run)?,
        Command::FitMarket => fit_market(settings, &mut run)?,
    };
    run.finish()?;
    Ok(table)
}

enum Withdrawal {
    Level(f64),
    Schedule(Vec<f64>),
}

impl Withdrawal {
    fn parse(settings: &Settings, run: &mut Run) -> Result<Self, Failure> {
        let raw = settings.get("withdrawal").unwrap_or("1");
        if let Ok(w) = raw.trim().parse::<f64>() {
            return Ok(Withdrawal::Level(w));
        }
        let path = Path::new(raw);
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
                let w = tok.parse::<f64>().map_err(|_| {
                    Failure::Validation(format!("{} line {}: `{tok}` is not a number", path.display(), n + 1))
                })?;
                out.push(w);
            }
        }
        run.input(path)?;
        Ok(Withdrawal::Schedule(out))
    }

    fn schedule(&self, horizon: usize) -> Result<Vec<f64>, Failure> {
        match self {
            Withdrawal::Level(w) => Ok(vec![*w; horizon]),
            Withdrawal::Schedule(w) if w.len() == horizon => Ok(w.clone()),
            Withdrawal::Schedule(w) => Err(Failure::Validation(format!(
                "withdrawal file has {} entries but the horizon is {horizon} stages",
                w.len()
            ))),
        }
    }
}

/// Life table, withdrawals and return model shared by the modelling commands.
struct Inputs {
    table: MortalityTable,
    withdrawal: Withdrawal,
    rate: f64,
}

impl Inputs {
    fn load(settings: &Settings, run: &mut Run) -> Result<Self, Failure> {
        let table = match settings.get("life-table") {
            Some(p) => {
                let path = Path::new(p);
                let t = load_life_table_file(path)?;
                run.input(path)?;
                t
            }
            None => MortalityTable::bundled(),
        };
        run.detail("life_table", settings.get("life-table").unwrap_or("bundled"));
        Ok(Self { table, withdrawal: Withdrawal::parse(settings, run)?, rate: settings.f64("rate")? })
    }

    fn cohort(&self, age: u32, run: &mut Run) -> Result<CohortMortality, Failure> {
        let c = cohort(&self.table, age)?;
        run.detail(&format!("cohort_{age}"), json!({ "start_age": age, "digest": c.digest() }));
        Ok(c)
    }

    fn plan(&self, c: &CohortMortality, pool: u32, contribution: f64) -> Result<WithdrawalPlan, Failure> {
        let w = self.withdrawal.schedule(c.horizon())?;
        Ok(WithdrawalPlan::new(contribution, pool, w, self.rate, c.start_age())?)
    }
}

fn model(settings: &Settings, rate: f64, run: &mut Run) -> Result<ReturnModel, Failure> {
    let m = if let Some(p) = settings.get("market-csv") {
        if settings.is_explicit("mu") || settings.is_explicit("sigma") {
            return Err(Failure::Usage("--market-csv cannot be combined with --mu or --sigma".into()));
        }
        fit_market_file(Path::new(p), rate, run)?.0
    } else {
        ReturnModel::new(settings.single_f64("mu")?, settings.single_f64("sigma")?, rate)?
    };
    run.detail("model", model_json(&m));
    Ok(m)
}

fn model_json(m: &ReturnModel) -> serde_json::Value {
    json!({ "mu": m.mu(), "sigma": m.sigma(), "rate": m.rate() })
}

fn fit_market_file(path: &Path, rate: f64, run: &mut Run) -> Result<(ReturnModel, Vec<(i32, f64)>), Failure> {
    let series = load_market_file(path)?;
    let returns = real_returns(&series)?;
    let model = fit_return_model(&returns, rate)?;
    run.input(path)?;
    let years = series.rows()[1..].iter().map(|r| r.year);
    run.detail("market_fit", json!({ "returns": returns.len(), "mu": model.mu(), "sigma": model.sigma() }));
    Ok((model, years.zip(returns).collect()))
}

fn solver_config(settings: &Settings, max_pool: u32) -> Result<SolverConfig, Failure> {
    Ok(SolverConfig { resolution: settings.usize("grid")?, ..SolverConfig::with_max_pool(max_pool) })
}

fn solve_logged(
    label: &str,
    plan: &WithdrawalPlan,
    c: &CohortMortality,
    model: &ReturnModel,
    cfg: &SolverConfig,
    objective: Objective,
) -> Result<Solution, Failure> {
    let k = plan.horizon();
    let done = AtomicUsize::new(0);
    let sol = solve_objective(plan, c, model, cfg, objective, &|stage| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!("{label}: stage {stage} done ({n}/{k})");
    })?;
    Ok(sol)
}

fn max_of(pools: &[u32]) -> u32 {
    pools.iter().copied().max().unwrap_or(1)
}

fn objective(settings: &Settings) -> Result<Objective, Failure> {
    Ok(if settings.flag("all-members")? { Objective::AllMembers } else { Objective::Focal })
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Focal => "focal",
        Objective::AllMembers => "all-members",
    }
}

fn solve(settings: &Settings, run: &mut Run) -> Result<Table, Failure> {
    let inputs = Inputs::load(settings, run)?;
    let age = settings.single_u32("age")?;
    let pools = settings.u32_list("pool")?;
    let contributions = settings.f64_list("contribution")?;
    let objective = objective(settings)?;
    let model = model(settings, inputs.rate, run)?;
    let c = inputs.cohort(age, run)?;
    let max_pool = max_of(&pools);
    let plan = inputs.plan(&c, max_pool, contributions[0])?;
    let cfg = solver_config(settings, max_pool)?;
    let sol = solve_logged("solve", &plan, &c, &model, &cfg, objective)?;

    let path = run.path("grid.csv");
    save_solution(&sol, &path)?;
    let meta = ArtifactMeta::of(&sol);
    if load_solution(&path)?.0 != meta {
        return Err(Failure::Runtime(format!("{} did not read back as written", path.display())));
    }
    run.record(&path)?;
    run.detail("policy_digest", meta.digest());

    let mut table =
        Table::new(["objective", "age", "pool", "contribution", "initial_wealth", "value", "weight"]);
    for &a in &pools {
        for &p in &contributions {
            let plan = plan.with_pool_size(a)?.with_contribution(p)?;
            let (v, q) = sol.initial_decision(plan.initial_wealth(), a);
            table.push(vec![
                objective_name(objective).into(),
                age.to_string(),
                a.to_string(),
                num(p),
                num(plan.initial_wealth()),
                num(v),
                num(q),
            ]);
        }
    }
    run.write("summary.csv", table.to_csv().as_bytes())?;
    Ok(table)
}

fn estimate(
    plan: &WithdrawalPlan,
    c: &CohortMortality,
    model: &ReturnModel,
    policy: &dyn Policy,
    cfg: &SimConfig,
    event: Objective,
) -> Result<Estimate, Failure> {
    Ok(match event {
        Objective::Focal => simulate_success_probability(plan, c, model, policy, cfg)?,
        Objective::AllMembers => simulate_all_annuitant(plan, c, model, policy, cfg)?,
    })
}

fn simulate(settings: &Settings, run: &mut Run) -> Result<Table, Failure> {
    let constant = settings.get("constant-q");
    let artifact = settings.get("policy");
    if constant.is_some() == artifact.is_some() {
        return Err(Failure::Usage("simulate needs exactly one of --policy FILE or --constant-q Q".into()));
    }
    let inputs = Inputs::load(settings, run)?;
    let age = settings.single_u32("age")?;
    let pools = settings.u32_list("pool")?;
    let contributions = settings.f64_list("contribution")?;
    let cfg = SimConfig::new(settings.u64("paths")?, settings.u64("seed")?)?;
    let liquidity = settings.flag("liquidity")?;
    let traces = settings.usize("trace")?;
    if traces > MAX_TRACE {
        return Err(Failure::Usage(format!("--trace is capped at {MAX_TRACE} paths")));
    }
    run.set_seed(cfg.seed);
    let c = inputs.cohort(age, run)?;

    let loaded = match artifact {
        Some(p) => {
            let path = Path::new(p);
            let (meta, sol) = load_solution(path)?;
            run.input(path)?;
            run.detail("policy_digest", meta.digest());
            Some((meta, sol))
        }
        None => None,
    };
    let from_artifact = loaded.is_some()
        && !settings.is_explicit("mu")
        && !settings.is_explicit("sigma")
        && settings.get("market-csv").is_none();
    let model = match &loaded {
        Some((_, sol)) if from_artifact => {
            let m = *sol.model();
            run.detail("model", model_json(&m));
            m
        }
        _ => model(settings, inputs.rate, run)?,
    };
    let constant_policy = match constant {
        Some(q) => {
            let q: f64 = q
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid value `{q}` for --constant-q")))?;
            if !(0.0..=1.0).contains(&q) {
                return Err(Failure::Validation(format!("constant weight {q} must lie in [0, 1]")));
            }
            Some(ConstantWeight(q))
        }
        None => None,
    };
    let (policy, label, event): (&dyn Policy, String, Objective) = match (&loaded, &constant_policy) {
        (Some((meta, sol)), _) => {
            let event = if settings.flag("all-members")? { Objective::AllMembers } else { meta.objective };
            (&sol.policy, format!("grid:{}", &meta.digest()[..12]), event)
        }
        (None, Some(w)) => (w, format!("constant:{}", num(w.0)), objective(settings)?),
        (None, None) => unreachable!("one policy source is required"),
    };

    let mut header = vec![
        "policy",
        "event",
        "age",
        "pool",
        "contribution",
        "paths",
        "seed",
        "estimate",
        "std_error",
        "solved_value",
    ];
    if liquidity {
        header.push("liquidity_violations");
    }
    let mut table = Table::new(header);
    let mut trace = Table::new([
        "pool",
        "contribution",
        "path",
        "stage",
        "focal_alive",
        "alive",
        "focal_wealth",
        "pool_wealth",
        "solo_wealth",
        "weight",
    ]);
    for &a in &pools {
        for &p in &contributions {
            let plan = inputs.plan(&c, a, p)?;
            let solved = match &loaded {
                Some((meta, sol)) => {
                    meta.check_compatible(&plan, &c)?;
                    if event == meta.objective && model == *sol.model() {
                        num(sol.initial_value(plan.initial_wealth(), a))
                    } else {
                        String::new()
                    }
                }
                None => String::new(),
            };
            let est = estimate(&plan, &c, &model, policy, &cfg, event)?;
            let mut row = vec![
                label.clone(),
                objective_name(event).into(),
                age.to_string(),
                a.to_string(),
                num(p),
                est.paths.to_string(),
                cfg.seed.to_string(),
                num(est.probability),
                num(est.std_error),
                solved,
            ];
            if liquidity {
                row.push(liquidity_check(&plan, &c, &model, policy, &cfg)?.violations.to_string());
            }
            table.push(row);
            for path in 0..traces as u64 {
                for s in trace_path(&plan, &c, &model, policy, cfg.seed, path)? {
                    trace.push(vec![
                        a.to_string(),
                        num(p),
                        path.to_string(),
                        s.stage.to_string(),
                        s.focal_alive.to_string(),
                        s.alive.to_string(),
                        num(s.focal_wealth),
                        num(s.pool_wealth),
                        num(s.solo_wealth),
                        s.weight.map(num).unwrap_or_default(),
                    ]);
                }
            }
        }
    }
    run.write("estimates.csv", table.to_csv().as_bytes())?;
    if traces > 0 {
        run.write("trace.csv", trace.to_csv().as_bytes())?;
    }
    Ok(table)
}

fn frontier(settings: &Settings, run: &mut Run) -> Result<Table, Failure> {
    let inputs = Inputs::load(settings, run)?;
    let ages = settings.u32_list("age")?;
    let pools = settings.u32_list("pool")?;
    let confidences = settings.f64_list("confidence")?;
    let model = model(settings, inputs.rate, run)?;
    let max_pool = max_of(&pools);
    let cfg = solver_config(settings, max_pool)?;
    let mut table = Table::new(["age", "pool", "confidence", "contribution", "floor_per_member"]);
    for &age in &ages {
        let c = inputs.cohort(age, run)?;
        let plan = inputs.plan(&c, max_pool, 1.0)?;
        let sol = solve_logged(&format!("frontier s={age}"), &plan, &c, &model, &cfg, Objective::Focal)?;
        for &a in &pools {
            for &conf in &confidences {
                let p = required_contribution(&sol, a, conf)?;
                table.push(vec![
                    age.to_string(),
                    a.to_string(),
                    num(conf),
                    num(p),
                    num(sol.floor(a, 0) / a as f64),
                ]);
            }
        }
    }
    run.write("frontier.csv", table.to_csv().as_bytes())?;
    Ok(table)
}

fn pool_benefit(settings: &Settings, run: &mut Run) -> Result<Table, Failure> {
    let inputs = Inputs::load(settings, run)?;
    let age = settings.single_u32("age")?;
    let pools = settings.u32_list("pool")?;
    let model = model(settings, inputs.rate, run)?;
    let max_pool = max_of(&pools);
    let c = inputs.cohort(age, run)?;
    let plan = inputs.plan(&c, max_pool, 1.0)?;
    let sol = solve_logged(
        "pool-benefit",
        &plan,
        &c,
        &model,
        &solver_config(settings, max_pool)?,
        Objective::Focal,
    )?;
    let mut table = Table::new(["pool", "gap_vs_one", "increment", "log10_increment"]);
    for &a in &pools {
        if a == 0 {
            return Err(Failure::Validation("pool sizes start at 1".into()));
        }
        let gap = if a == 1 { 0.0 } else { max_pool_gap(&sol, a, 1) };
        let (inc, log) = if a == 1 {
            (String::new(), String::new())
        } else {
            let inc = max_pool_gap(&sol, a, a - 1);
            (num(inc), if inc > 0.0 { num(inc.log10()) } else { String::new() })
        };
        table.push(vec![a.to_string(), num(gap), inc, log]);
    }
    run.write("pool-benefit.csv", table.to_csv().as_bytes())?;
    Ok(table)
}

fn sensitivity(settings: &Settings, run: &mut Run) -> Result<Table, Failure> {
    let inputs = Inputs::load(settings, run)?;
    let age = settings.single_u32("age")?;
    let pools = settings.u32_list("pool")?;
    let contributions = settings.f64_list("contribution")?;
    let mus = settings.f64_list("mu")?;
    let sigmas = settings.f64_list("sigma")?;
    let cfg = SimConfig::new(settings.u64("paths")?, settings.u64("seed")?)?;
    run.set_seed(cfg.seed);
    let baseline =
        ReturnModel::new(settings.f64("baseline-mu")?, settings.f64("baseline-sigma")?, inputs.rate)?;
    run.detail("baseline_model", model_json(&baseline));
    let c = inputs.cohort(age, run)?;
    let max_pool = max_of(&pools);
    let plan = inputs.plan(&c, max_pool, contributions[0])?;
    let solver = solver_config(settings, max_pool)?;
    let base = solve_logged("sensitivity baseline", &plan, &c, &baseline, &solver, Objective::Focal)?;

    let mut table = Table::new([
        "mu",
        "sigma",
        "pool",
        "contribution",
        "solved_value",
        "baseline_policy_estimate",
        "std_error",
    ]);
    for &mu in &mus {
        for &sigma in &sigmas {
            let m = ReturnModel::new(mu, sigma, inputs.rate)?;
            let matched;
            let sol = if m == baseline {
                &base
            } else {
                let label = format!("sensitivity mu={} sigma={}", num(mu), num(sigma));
                matched = solve_logged(&label, &plan, &c, &m, &solver, Objective::Focal)?;
                &matched
            };
            for &a in &pools {
                for &p in &contributions {
                    let plan = plan.with_pool_size(a)?.with_contribution(p)?;
                    let est = simulate_success_probability(&plan, &c, &m, &base.policy, &cfg)?;
                    table.push(vec![
                        num(mu),
                        num(sigma),
                        a.to_string(),
                        num(p),
                        num(sol.initial_value(plan.initial_wealth(), a)),
                        num(est.probability),
                        num(est.std_error),
                    ]);
                }
            }
        }
    }
    run.write("sensitivity.csv", table.to_csv().as_bytes())?;
    Ok(table)
}

fn fit_market(settings: &Settings, run: &mut Run) -> Result<Table, Failure> {
    let path = settings.get("market-csv").ok_or_else(|| Failure::Usage("--market-csv is required".into()))?;
    let (model, returns) = fit_market_file(Path::new(path), settings.f64("rate")?, run)?;
    let mut series = Table::new(["year", "real_return"]);
    for (year, x) in &returns {
        series.push(vec![year.to_string(), num(*x)]);
    }
    let mut fit = Table::new(["first_year", "last_year", "returns", "mu", "sigma"]);
    fit.push(vec![
        returns.first().map(|r| r.0.to_string()).unwrap_or_default(),
        returns.last().map(|r| r.0.to_string()).unwrap_or_default(),
        returns.len().to_string(),
        num(model.mu()),
        num(model.sigma()),
    ]);
    run.write("returns.csv", series.to_csv().as_bytes())?;
    run.write("market-fit.csv", fit.to_csv().as_bytes())?;
    Ok(fit)
}
