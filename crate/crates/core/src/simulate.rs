//! Forward Monte-Carlo of the pooled wealth recursions under a weight policy.
//!
//! Each path owns two ChaCha streams derived from the run seed and the path
//! index, one for stock returns and one for deaths, so estimates do not
//! depend on how paths are spread across worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::ReturnModel;
use crate::mortality::{sample_deaths, CohortMortality};
use crate::schedule::WithdrawalPlan;
use crate::solver::PolicyGrid;

/// Stock weight as a function of stage, wealth and living pool size.
pub trait Policy: Sync {
    fn weight(&self, stage: usize, wealth: f64, pool: u32) -> Result<f64>;
}

impl Policy for PolicyGrid {
    fn weight(&self, stage: usize, wealth: f64, pool: u32) -> Result<f64> {
        PolicyGrid::weight(self, wealth, pool, stage)
    }
}

/// The same stock weight in every state.
#[derive(Debug, Clone, Copy)]
pub struct ConstantWeight(pub f64);

impl Policy for ConstantWeight {
    fn weight(&self, _stage: usize, _wealth: f64, _pool: u32) -> Result<f64> {
        Ok(self.0)
    }
}

/// Wraps a closure as a policy.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(usize, f64, u32) -> Result<f64> + Sync,
{
    fn weight(&self, stage: usize, wealth: f64, pool: u32) -> Result<f64> {
        (self.0)(stage, wealth, pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimConfig {
    pub paths: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(paths: u64, seed: u64) -> Result<Self> {
        if paths == 0 {
            return Err(Error::validation("need at least one simulated path"));
        }
        Ok(Self { paths, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub paths: u64,
    pub successes: u64,
    pub probability: f64,
    pub std_error: f64,
}

impl Estimate {
    fn from_counts(successes: u64, paths: u64) -> Self {
        let p = successes as f64 / paths as f64;
        Self { paths, successes, probability: p, std_error: (p * (1.0 - p) / paths as f64).sqrt() }
    }
}

/// State of one path at a rebalancing date, after that date's withdrawals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathState {
    pub stage: usize,
    pub focal_alive: bool,
    pub alive: u32,
    /// Pooled wealth counted only while the focal member lives.
    pub focal_wealth: f64,
    /// Pooled wealth of the whole fund.
    pub pool_wealth: f64,
    /// Wealth of one member investing alone with the fund's weights.
    pub solo_wealth: f64,
    /// Stock weight chosen at this date; `None` once the path is finished.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Steer by focal wealth, stop once the focal outcome is settled.
    Focal,
    /// Steer by pool wealth, stop once the pool outcome is settled.
    AllMembers,
    /// Steer by pool wealth and run until nobody is left.
    Full,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    focal_success: bool,
    pool_success: bool,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Simulator<'a, P: Policy + ?Sized> {
    plan: &'a WithdrawalPlan,
    cohort: &'a CohortMortality,
    model: &'a ReturnModel,
    policy: &'a P,
}

impl<'a, P: Policy + ?Sized> Simulator<'a, P> {
    fn new(
        plan: &'a WithdrawalPlan,
        cohort: &'a CohortMortality,
        model: &'a ReturnModel,
        policy: &'a P,
    ) -> Result<Self> {
        if plan.horizon() != cohort.horizon() {
            return Err(Error::validation(format!(
                "withdrawal schedule has {} steps but the cohort horizon is {}",
                plan.horizon(),
                cohort.horizon()
            )));
        }
        Ok(Self { plan, cohort, model, policy })
    }

    fn run(
        &self,
        seed: u64,
        path: u64,
        mode: Mode,
        mut trace: Option<&mut Vec<PathState>>,
    ) -> Result<Outcome> {
        let mut returns = stream(seed, 2 * path);
        let mut deaths = stream(seed, 2 * path + 1);
        let mut focal_alive = true;
        let mut alive = self.plan.pool_size();
        let mut focal_wealth = self.plan.initial_wealth();
        let mut pool_wealth = focal_wealth;
        let mut solo_wealth = self.plan.contribution();

        for stage in 0..self.plan.horizon() {
            let settled = match mode {
                Mode::Focal => !focal_alive || focal_wealth < 0.0,
                Mode::AllMembers => alive == 0 || pool_wealth < 0.0,
                Mode::Full => alive == 0,
            };
            if settled {
                break;
            }
            // Steering uses the focal member's view of the fund while they
            // live; it coincides with the pooled wealth until their death.
            let steer = if mode == Mode::Focal { focal_wealth } else { pool_wealth };
            let q = self.policy.weight(stage, steer, alive)?;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::PolicyUndefined { stage, wealth: steer, pool: alive });
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(PathState {
                    stage,
                    focal_alive,
                    alive,
                    focal_wealth,
                    pool_wealth,
                    solo_wealth,
                    weight: Some(q),
                });
            }

            let growth = self.model.portfolio_return(q, self.model.sample_return(&mut returns));
            let d = self.cohort.death(stage);
            let mut died = 0;
            if focal_alive {
                // the focal member is the first of the living members drawn
                if deaths.random::<f64>() < d {
                    focal_alive = false;
                    died += 1;
                }
                died += sample_deaths(d, alive - 1, &mut deaths);
            } else {
                died = sample_deaths(d, alive, &mut deaths);
            }
            alive -= died;

            let w = self.plan.withdrawal(stage + 1);
            let focal_draw = if focal_alive { alive as f64 * w } else { 0.0 };
            focal_wealth = growth * focal_wealth - focal_draw;
            pool_wealth = growth * pool_wealth - alive as f64 * w;
            solo_wealth = growth * solo_wealth - w;
        }
        if let Some(t) = trace {
            let stage = t.last().map_or(0, |s| s.stage + 1);
            t.push(PathState {
                stage,
                focal_alive,
                alive,
                focal_wealth,
                pool_wealth,
                solo_wealth,
                weight: None,
            });
        }
        Ok(Outcome { focal_success: focal_wealth >= 0.0, pool_success: pool_wealth >= 0.0 })
    }

    fn estimate(&self, cfg: &SimConfig, mode: Mode) -> Result<Estimate> {
        let successes = (0..cfg.paths)
            .into_par_iter()
            .map(|p| {
                let o = self.run(cfg.seed, p, mode, None)?;
                let ok = if mode == Mode::Focal { o.focal_success } else { o.pool_success };
                Ok::<u64, Error>(ok as u64)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))?;
        Ok(Estimate::from_counts(successes, cfg.paths))
    }
}

/// Estimates `P(W^_k >= 0)`: the focal member completes every withdrawal
/// due while they are alive.
pub fn simulate_success_probability<P: Policy + ?Sized>(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    policy: &P,
    cfg: &SimConfig,
) -> Result<Estimate> {
    Simulator::new(plan, cohort, model, policy)?.estimate(cfg, Mode::Focal)
}

/// Estimates `P(W_k >= 0)`: the fund covers every member until the last death.
pub fn simulate_all_annuitant<P: Policy + ?Sized>(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    policy: &P,
    cfg: &SimConfig,
) -> Result<Estimate> {
    Simulator::new(plan, cohort, model, policy)?.estimate(cfg, Mode::AllMembers)
}

/// Full trajectory of path `path`, steered by pooled wealth until every
/// member has died.
pub fn trace_path<P: Policy + ?Sized>(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    policy: &P,
    seed: u64,
    path: u64,
) -> Result<Vec<PathState>> {
    let sim = Simulator::new(plan, cohort, model, policy)?;
    let mut out = Vec::with_capacity(plan.horizon() + 1);
    sim.run(seed, path, Mode::Full, Some(&mut out))?;
    Ok(out)
}

/// Trajectory as the focal estimator sees it: steered by focal wealth and
/// stopped once the focal outcome is decided.
pub fn trace_focal_path<P: Policy + ?Sized>(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    policy: &P,
    seed: u64,
    path: u64,
) -> Result<(Vec<PathState>, bool)> {
    let sim = Simulator::new(plan, cohort, model, policy)?;
    let mut out = Vec::with_capacity(plan.horizon() + 1);
    let o = sim.run(seed, path, Mode::Focal, Some(&mut out))?;
    Ok((out, o.focal_success))
}

/// True iff at every date with a living member, solo wealth `W~ >= 0`
/// implies pooled wealth `W >= 0`.
pub fn check_liquidity_bound(trajectory: &[PathState]) -> bool {
    trajectory.iter().filter(|s| s.alive >= 1).all(|s| s.solo_wealth < 0.0 || s.pool_wealth >= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiquidityReport {
    pub paths: u64,
    pub violations: u64,
}

/// Runs `cfg.paths` full trajectories and counts those breaking the bound.
pub fn liquidity_check<P: Policy + ?Sized>(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    policy: &P,
    cfg: &SimConfig,
) -> Result<LiquidityReport> {
    let sim = Simulator::new(plan, cohort, model, policy)?;
    let violations = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut t = Vec::with_capacity(plan.horizon() + 1);
            sim.run(cfg.seed, p, Mode::Full, Some(&mut t))?;
            Ok::<u64, Error>((!check_liquidity_bound(&t)) as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(LiquidityReport { paths: cfg.paths, violations })
}
