//! Backward induction for the maximal withdrawal-success probability of a
//! closed pool investing in a stock and a bond.
//!
//! Stage `i` is computed from stage `i + 1` on the wealth grids `D_{a,i}`.
//! At each grid point the stock weight is chosen by a coarse search over
//! `G1`, a refinement around the coarse maximiser, and a comparison with the
//! all-bond portfolio, which is evaluated from a stepwise lower bound of the
//! next stage.

mod grid;
mod search;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::ReturnModel;
use crate::mortality::CohortMortality;
use crate::schedule::{FloorMatrix, WithdrawalPlan};

pub use grid::{PolicyGrid, ValueGrid};
pub use search::{max_pool_gap, pool_gap_curve, required_contribution};

/// Binomial mixture weights below this are dropped.
const WEIGHT_CUTOFF: f64 = 1e-15;

/// Objective values closer than this count as a tie in the weight search.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Grid resolution `M`; each stage stores `M - 1` wealth points per pool size.
    pub resolution: usize,
    /// Coarse stock-weight grid.
    pub coarse_weights: Vec<f64>,
    /// Spacing of the refinement grid around the coarse maximiser.
    pub refine_step: f64,
    /// Refinement offsets, in steps, relative to the coarse maximiser.
    pub refine_span: (i32, i32),
    /// Largest pool size solved.
    pub max_pool: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            resolution: 100,
            coarse_weights: (1..=9).map(|j| j as f64 / 10.0).collect(),
            refine_step: 0.01,
            refine_span: (-9, 10),
            max_pool: 1,
        }
    }
}

impl SolverConfig {
    pub fn with_max_pool(max_pool: u32) -> Self {
        Self { max_pool, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::validation("grid resolution must be at least 2"));
        }
        if self.coarse_weights.is_empty() || self.coarse_weights.iter().any(|q| !(*q > 0.0 && *q <= 1.0)) {
            return Err(Error::validation("coarse weights must be non-empty and lie in (0, 1]"));
        }
        if !(self.refine_step > 0.0) || self.refine_span.0 > self.refine_span.1 {
            return Err(Error::validation("invalid refinement grid"));
        }
        if self.max_pool == 0 {
            return Err(Error::validation("max pool size must be at least 1"));
        }
        Ok(())
    }
}

/// Which success event is optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// A distinguished member completes every withdrawal until their death.
    Focal,
    /// Every member completes every withdrawal until the last death.
    AllMembers,
}

/// `v_k(x, a)`: success iff terminal wealth is non-negative.
pub fn terminal_value(wealth: f64, _pool: u32) -> f64 {
    if wealth >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One-step-to-go success probability with stock weight `q != 0`:
/// `P(X / (1+r) >= 1 + (m_{a,k-1}/x - 1) / q)`. With `q = 0` the outcome is
/// deterministic, `x >= m_{a,k-1}`.
pub fn last_step_closed_form(
    wealth: f64,
    pool: u32,
    q: f64,
    model: &ReturnModel,
    floors: &FloorMatrix,
) -> f64 {
    let k = floors.horizon();
    let floor = floors.floor(pool, k - 1);
    if q == 0.0 {
        return terminal_value(wealth - floor, pool);
    }
    let growth = model.bond_gross();
    let threshold = growth * (1.0 + (floor / wealth - 1.0) / q);
    model.sf(threshold)
}

/// Mixture weights of `Binomial(n, d)` for every `n` up to a bound, with
/// negligible terms removed. Entry `(l, p)` is the probability of `l` deaths.
struct BinomialTable {
    rows: Vec<Vec<(u32, f64)>>,
}

impl BinomialTable {
    fn new(max_n: u32, d: f64) -> Self {
        let mut ln_fact = vec![0.0f64; max_n as usize + 1];
        for n in 1..=max_n as usize {
            ln_fact[n] = ln_fact[n - 1] + (n as f64).ln();
        }
        let rows = (0..=max_n)
            .map(|n| {
                if d <= 0.0 {
                    return vec![(0, 1.0)];
                }
                if d >= 1.0 {
                    return vec![(n, 1.0)];
                }
                let (ld, ls) = (d.ln(), (-d).ln_1p());
                let mut row: Vec<(u32, f64)> = (0..=n)
                    .filter_map(|l| {
                        let lw = ln_fact[n as usize] - ln_fact[l as usize] - ln_fact[(n - l) as usize]
                            + l as f64 * ld
                            + (n - l) as f64 * ls;
                        let w = lw.exp();
                        (w >= WEIGHT_CUTOFF).then_some((l, w))
                    })
                    .collect();
                let total: f64 = row.iter().map(|(_, w)| w).sum();
                row.iter_mut().for_each(|(_, w)| *w /= total);
                row
            })
            .collect();
        Self { rows }
    }

    fn row(&self, n: u32) -> &[(u32, f64)] {
        &self.rows[n as usize]
    }
}

/// Everything needed to evaluate stage `i` from a grid whose stage `i + 1`
/// is already solved.
pub struct StageOperator<'g> {
    next: &'g ValueGrid,
    model: ReturnModel,
    stage: usize,
    withdrawal: f64,
    death: f64,
    objective: Objective,
    binomial: BinomialTable,
    config: &'g SolverConfig,
}

impl<'g> StageOperator<'g> {
    pub fn new(
        next: &'g ValueGrid,
        model: ReturnModel,
        stage: usize,
        withdrawal: f64,
        death: f64,
        objective: Objective,
        config: &'g SolverConfig,
    ) -> Self {
        assert!(stage < next.horizon());
        Self {
            next,
            model,
            stage,
            withdrawal,
            death,
            objective,
            binomial: BinomialTable::new(next.max_pool(), death),
            config,
        }
    }

    fn floors(&self) -> &FloorMatrix {
        self.next.floors()
    }

    /// Expected next-stage value `h_{i+1}(x, a~, q)` when `a~` members
    /// survive and the fund holds stock weight `q > 0`.
    ///
    /// The probability that next-step wealth lands strictly between zero and
    /// the floor is spread over the grid points of `D_{a~,i+1}` in proportion
    /// to the density of the stock return that carries `x` onto each point;
    /// the probability of landing on or above the floor contributes 1.
    pub fn h_value(&self, wealth: f64, survivors: u32, q: f64) -> f64 {
        let next_stage = self.stage + 1;
        let demand = survivors as f64 * self.withdrawal;
        if wealth <= 0.0 || q == 0.0 {
            let growth = if wealth <= 0.0 { 0.0 } else { self.model.bond_gross() };
            return self.next.value_at(growth * wealth - demand, survivors, next_stage);
        }
        let growth = self.model.bond_gross();
        let qx = q * wealth;
        let b = growth - growth / q + demand / qx;
        let floor = self.floors().floor(survivors, next_stage);
        let upper = b + floor / qx;
        let tail = self.model.sf(upper);
        if floor <= 0.0 {
            return tail;
        }
        let mass = self.model.mass_between(b, upper);
        if mass <= 0.0 {
            return tail;
        }

        let m = self.next.resolution();
        let (mu, sigma) = (self.model.mu(), self.model.sigma());
        let t0 = (b - mu) / sigma;
        let dt = floor / (m as f64 * qx * sigma);
        // Rescale by the largest density on the grid so the sums cannot underflow.
        let j_star = ((-t0 / dt).round()).clamp(1.0, (m - 1) as f64) as usize;
        let t_star = t0 + j_star as f64 * dt;
        let column = self.next.column(next_stage, survivors);
        // Walk outward from the peak node; successive density ratios differ
        // by the constant factor exp(-dt^2).
        let decay = (-dt * dt).exp();
        let (mut num, mut den) = (column[j_star - 1], 1.0);
        let (mut f, mut ratio) = (1.0, (-(t_star * dt + 0.5 * dt * dt)).exp());
        for v in &column[j_star..] {
            f *= ratio;
            ratio *= decay;
            num += v * f;
            den += f;
        }
        let (mut f, mut ratio) = (1.0, (t_star * dt - 0.5 * dt * dt).exp());
        for v in column[..j_star - 1].iter().rev() {
            f *= ratio;
            ratio *= decay;
            num += v * f;
            den += f;
        }
        let average = if den > 0.0 { num / den } else { 0.0 };
        (mass * average + tail).min(1.0)
    }

    /// Stepwise lower bound of `v_{i+1}` used by the all-bond branch.
    fn next_lower_bound(&self, theta: f64, survivors: u32) -> f64 {
        self.next.value_at(theta, survivors, self.stage + 1)
    }

    /// Mixture over the number of deaths in the coming step of `term(a~)`,
    /// plus the focal member's own death for the focal objective. Failure
    /// probabilities are mixed so that certain success stays exactly 1.
    fn mix(&self, wealth: f64, pool: u32, mut term: impl FnMut(u32) -> f64) -> f64 {
        let (row, dead) = match self.objective {
            Objective::Focal => (self.binomial.row(pool - 1), terminal_value(wealth, 0)),
            Objective::AllMembers => (self.binomial.row(pool), 0.0),
        };
        let shortfall: f64 = row.iter().map(|&(l, p)| p * (1.0 - term(pool - l))).sum();
        let alive = (1.0 - shortfall).clamp(0.0, 1.0);
        match self.objective {
            Objective::Focal => dead + (1.0 - self.death) * (alive - dead),
            Objective::AllMembers => alive,
        }
    }

    /// `g_{i+1}(x, a, q)` for `q > 0`.
    pub fn objective_value(&self, wealth: f64, pool: u32, q: f64) -> f64 {
        assert!(q > 0.0, "route q = 0 through q_zero_value");
        self.mix(wealth, pool, |s| self.h_value(wealth, s, q))
    }

    /// `g_{i+1}(x, a, 0)` with every next-stage value replaced by its
    /// stepwise lower bound from the grid.
    pub fn q_zero_value(&self, wealth: f64, pool: u32) -> f64 {
        let growth = self.model.bond_gross();
        let v = self
            .mix(wealth, pool, |s| self.next_lower_bound(growth * wealth - s as f64 * self.withdrawal, s));
        v.min(1.0)
    }

    /// Best value and stock weight at wealth `x` for pool size `a`.
    pub fn stage_value(&self, wealth: f64, pool: u32) -> (f64, f64) {
        assert!(pool >= 1, "stage_value needs a living pool");
        if wealth < 0.0 {
            return (0.0, 1.0);
        }
        if wealth >= self.floors().floor(pool, self.stage) {
            return (1.0, 0.0);
        }
        let bond_only = self.q_zero_value(wealth, pool);
        if wealth == 0.0 {
            return (bond_only, 1.0);
        }

        let argmax = |candidates: &mut dyn Iterator<Item = f64>| {
            let mut best = (f64::NEG_INFINITY, 0.0);
            for q in candidates {
                let g = self.objective_value(wealth, pool, q);
                if g > best.0 + TIE_TOLERANCE {
                    best = (g, q);
                }
            }
            best
        };

        let cfg = self.config;
        let (_, q1) = argmax(&mut cfg.coarse_weights.iter().copied());
        let base = (q1 / cfg.refine_step).round() as i64;
        let mut refined = (cfg.refine_span.0..=cfg.refine_span.1)
            .map(|j| (base + j as i64) as f64 * cfg.refine_step)
            .filter(|q| *q > 1e-12 && *q <= 1.0 + 1e-12)
            .map(|q| q.min(1.0));
        let (best, q2) = argmax(&mut refined);
        if bond_only < best - TIE_TOLERANCE {
            (best.min(1.0), q2)
        } else {
            (bond_only, 0.0)
        }
    }
}

/// Solved value and policy grids together with the inputs that produced them.
#[derive(Debug, Clone)]
pub struct Solution {
    pub values: ValueGrid,
    pub policy: PolicyGrid,
    model: ReturnModel,
    cohort: CohortMortality,
    withdrawals: Vec<f64>,
    config: SolverConfig,
    objective: Objective,
}

impl Solution {
    pub(crate) fn from_parts(
        values: ValueGrid,
        policy: PolicyGrid,
        model: ReturnModel,
        cohort: CohortMortality,
        withdrawals: Vec<f64>,
        config: SolverConfig,
        objective: Objective,
    ) -> Self {
        Self { values, policy, model, cohort, withdrawals, config, objective }
    }

    pub fn model(&self) -> &ReturnModel {
        &self.model
    }

    pub fn cohort(&self) -> &CohortMortality {
        &self.cohort
    }

    pub fn withdrawals(&self) -> &[f64] {
        &self.withdrawals
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn horizon(&self) -> usize {
        self.withdrawals.len()
    }

    pub fn floor(&self, pool: u32, stage: usize) -> f64 {
        self.values.floors().floor(pool, stage)
    }

    /// Operator for stage `i`, reading stage `i + 1` from the solved grid.
    pub fn stage_operator(&self, stage: usize) -> StageOperator<'_> {
        StageOperator::new(
            &self.values,
            self.model,
            stage,
            self.withdrawals[stage],
            self.cohort.death(stage),
            self.objective,
            &self.config,
        )
    }

    /// Value and weight at stage 0 evaluated directly at `wealth` rather
    /// than read off the grid, so an off-grid `A0 * P` gets the same
    /// treatment as a grid point.
    pub fn initial_decision(&self, wealth: f64, pool: u32) -> (f64, f64) {
        self.stage_operator(0).stage_value(wealth, pool)
    }

    /// `v_0(x, a)` at arbitrary pooled wealth `x`.
    pub fn initial_value(&self, wealth: f64, pool: u32) -> f64 {
        self.initial_decision(wealth, pool).0
    }
}

/// Solves the focal-member problem.
pub fn solve(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    cfg: &SolverConfig,
) -> Result<Solution> {
    solve_objective(plan, cohort, model, cfg, Objective::Focal, &|_| {})
}

/// Solves for the probability that every member completes the schedule.
pub fn solve_all_annuitant(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    cfg: &SolverConfig,
) -> Result<Solution> {
    solve_objective(plan, cohort, model, cfg, Objective::AllMembers, &|_| {})
}

/// Backward sweep from stage `k - 1` to 0. `progress` is called with each
/// stage index once that stage is stored.
pub fn solve_objective(
    plan: &WithdrawalPlan,
    cohort: &CohortMortality,
    model: &ReturnModel,
    cfg: &SolverConfig,
    objective: Objective,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<Solution> {
    cfg.validate()?;
    let k = plan.horizon();
    if cohort.horizon() != k {
        return Err(Error::validation(format!(
            "withdrawal schedule has {k} steps but the cohort horizon is {}",
            cohort.horizon()
        )));
    }
    if model.rate() != plan.rate() {
        return Err(Error::validation("return model and plan disagree on the bond rate"));
    }
    if cfg.max_pool < plan.pool_size() {
        return Err(Error::validation(format!(
            "max pool {} is below the initial pool size {}",
            cfg.max_pool,
            plan.pool_size()
        )));
    }

    let m = cfg.resolution;
    let floors = FloorMatrix::new(plan.withdrawals(), plan.rate(), cfg.max_pool);
    let mut values = ValueGrid::new(floors.clone(), m)?;
    let mut policy = PolicyGrid::new(floors.clone(), m)?;
    let pools: Vec<u32> = (1..=cfg.max_pool).collect();

    for stage in (0..k).rev() {
        let op = StageOperator::new(
            &values,
            *model,
            stage,
            plan.withdrawal(stage + 1),
            cohort.death(stage),
            objective,
            cfg,
        );
        let columns: Vec<(Vec<f64>, Vec<f64>)> = pools
            .par_iter()
            .map(|&pool| {
                let floor = floors.floor(pool, stage);
                (1..m).map(|j| op.stage_value(grid::grid_point(floor, m, j), pool)).unzip()
            })
            .collect();
        drop(op);
        for (pool, (v, q)) in pools.iter().zip(columns) {
            values.store(stage, *pool, &v);
            policy.store(stage, *pool, &q);
        }
        // pool size 0: everyone has died, success iff wealth is non-negative
        values.store(stage, 0, &vec![1.0; m - 1]);
        progress(stage);
    }

    Ok(Solution::from_parts(
        values,
        policy,
        *model,
        cohort.clone(),
        plan.withdrawals().to_vec(),
        cfg.clone(),
        objective,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_instance(k: usize, pool: u32) -> (WithdrawalPlan, CohortMortality, ReturnModel) {
        let mut death: Vec<f64> = (0..k).map(|i| 0.05 + 0.04 * i as f64).collect();
        death[k - 1] = 1.0;
        (
            WithdrawalPlan::level(3.0, pool, k, 0.0, 110).unwrap(),
            CohortMortality::from_probabilities(110, death).unwrap(),
            ReturnModel::baseline(),
        )
    }

    #[test]
    fn terminal_value_boundary() {
        assert_eq!(terminal_value(0.0, 5), 1.0);
        assert_eq!(terminal_value(-0.001, 1), 0.0);
        assert_eq!(terminal_value(1e3, 0), 1.0);
    }

    #[test]
    fn binomial_rows_sum_to_one() {
        let t = BinomialTable::new(100, 0.3);
        for n in [0, 1, 7, 100] {
            let s: f64 = t.row(n).iter().map(|(_, p)| p).sum();
            assert!((s - 1.0).abs() < 1e-12, "n={n} sum={s}");
        }
        assert_eq!(BinomialTable::new(5, 1.0).row(5), &[(5, 1.0)]);
        assert_eq!(BinomialTable::new(5, 0.0).row(5), &[(0, 1.0)]);
    }

    #[test]
    fn closed_form_at_the_floor() {
        let model = ReturnModel::baseline();
        let floors = FloorMatrix::new(&[1.0; 5], 0.0, 3);
        let m = floors.floor(2, 4);
        // threshold equals 1 + r = 1
        let expected = 1.0 - model.cdf(1.0);
        assert!((last_step_closed_form(m, 2, 0.7, &model, &floors) - expected).abs() < 1e-15);
        assert!((expected - 0.682_062_5).abs() < 1e-7);
        // q = 1, r = 0, x = m/2: threshold m/x = 2
        let v = last_step_closed_form(m / 2.0, 2, 1.0, &model, &floors);
        assert!((v - model.sf(2.0)).abs() < 1e-15);
        assert_eq!(last_step_closed_form(m, 2, 0.0, &model, &floors), 1.0);
        assert_eq!(last_step_closed_form(0.99 * m, 2, 0.0, &model, &floors), 0.0);
        let mut prev = 0.0;
        for x in [0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 10.0] {
            let v = last_step_closed_form(x * m, 2, 0.6, &model, &floors);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn certain_death_stage_is_terminal() {
        let (plan, cohort, model) = short_instance(4, 3);
        let sol = solve(&plan, &cohort, &model, &SolverConfig::with_max_pool(3)).unwrap();
        let last = plan.horizon() - 1;
        for a in 1..=3 {
            for (idx, v) in sol.values.column(last, a).iter().enumerate() {
                assert_eq!(*v, 1.0, "a={a} j={}", idx + 1);
            }
        }
    }

    #[test]
    fn single_step_horizon_above_floor() {
        let plan = WithdrawalPlan::level(1.0, 1, 1, 0.0, 119).unwrap();
        let cohort = CohortMortality::from_probabilities(119, vec![1.0]).unwrap();
        let sol = solve(&plan, &cohort, &ReturnModel::baseline(), &SolverConfig::default()).unwrap();
        assert_eq!(sol.initial_value(1.0, 1), 1.0);
        assert_eq!(sol.values.value_at(1.0, 1, 0), 1.0);
    }

    #[test]
    fn stage_value_dominates_its_components() {
        let (plan, cohort, model) = short_instance(6, 3);
        let cfg = SolverConfig::with_max_pool(3);
        let sol = solve(&plan, &cohort, &model, &cfg).unwrap();
        for stage in 0..5 {
            let op = sol.stage_operator(stage);
            for a in 1..=3u32 {
                for j in (5..100).step_by(11) {
                    let x = sol.values.wealth(stage, a, j);
                    let (v, q) = op.stage_value(x, a);
                    assert_eq!(v, sol.values.stored(stage, a, j));
                    assert_eq!(q, sol.policy.stored(stage, a, j));
                    assert!(v >= op.q_zero_value(x, a));
                    for &c in &cfg.coarse_weights {
                        assert!(v >= op.objective_value(x, a, c) - TIE_TOLERANCE);
                    }
                    assert!((0.0..=1.0).contains(&v));
                    assert!((0.0..=1.0).contains(&q));
                }
            }
        }
    }

    #[test]
    fn single_member_pool_ignores_binomial() {
        let (plan, cohort, model) = short_instance(5, 1);
        let sol = solve(&plan, &cohort, &model, &SolverConfig::default()).unwrap();
        let op = sol.stage_operator(1);
        let d = cohort.death(1);
        for j in [10, 50, 90] {
            let x = sol.values.wealth(1, 1, j);
            let direct = (1.0 - d) * op.h_value(x, 1, 0.4) + d;
            assert!((op.objective_value(x, 1, 0.4) - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn bond_branch_single_member_no_death() {
        let k = 4;
        let death = vec![0.0, 0.0, 0.0, 1.0];
        let plan = WithdrawalPlan::level(2.0, 1, k, 0.0, 116).unwrap();
        let cohort = CohortMortality::from_probabilities(116, death).unwrap();
        let sol = solve(&plan, &cohort, &ReturnModel::baseline(), &SolverConfig::default()).unwrap();
        let op = sol.stage_operator(0);
        for x in [0.5, 1.37, 2.0, 2.9] {
            let expect = sol.values.value_at(x - 1.0, 1, 1);
            assert_eq!(op.q_zero_value(x, 1), expect);
        }
        assert_eq!(op.q_zero_value(4.0, 1), 1.0);
        // after the withdrawal wealth is below the first grid point
        assert_eq!(op.q_zero_value(1.0 + 0.5 * 3.0 / 100.0, 1), 0.0);
    }

    #[test]
    fn certain_death_everywhere_gives_one() {
        let plan = WithdrawalPlan::level(1.0, 2, 3, 0.0, 117).unwrap();
        let cohort = CohortMortality::from_probabilities(117, vec![1.0, 1.0, 1.0]).unwrap();
        let sol = solve(&plan, &cohort, &ReturnModel::baseline(), &SolverConfig::with_max_pool(2)).unwrap();
        for a in 1..=2 {
            assert!(sol.values.column(0, a).iter().all(|v| *v == 1.0));
        }
        let all =
            solve_all_annuitant(&plan, &cohort, &ReturnModel::baseline(), &SolverConfig::with_max_pool(2))
                .unwrap();
        for a in 1..=2 {
            assert!(all.values.column(0, a).iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let (plan, cohort, model) = short_instance(4, 3);
        assert!(solve(&plan, &cohort, &model, &SolverConfig::with_max_pool(2)).is_err());
        let other = CohortMortality::from_probabilities(110, vec![0.1, 1.0]).unwrap();
        assert!(solve(&plan, &other, &model, &SolverConfig::with_max_pool(3)).is_err());
        let bad = SolverConfig { resolution: 1, ..SolverConfig::with_max_pool(3) };
        assert!(solve(&plan, &cohort, &model, &bad).is_err());
    }
}
