use super::Solution;
use crate::error::{Error, Result};

/// Smallest per-member contribution `P*` with `v_0(a * P*, a) >= confidence`.
///
/// The stage-0 grid is scanned for the first point that reaches the target;
/// the crossing is then bisected inside that cell using direct stage-0
/// evaluations. If no point below the floor reaches the target, the riskless
/// floor `m_{a,0} / a` is returned.
pub fn required_contribution(solution: &Solution, pool: u32, confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence {confidence} must lie in (0, 1)")));
    }
    if pool == 0 || pool > solution.values.max_pool() {
        return Err(Error::Domain(format!("pool size {pool} was not solved")));
    }
    let floor = solution.floor(pool, 0);
    let column = solution.values.column(0, pool);
    let Some(idx) = column.iter().position(|v| *v >= confidence) else {
        return Ok(floor / pool as f64);
    };
    let j = idx + 1;
    let mut hi = solution.values.wealth(0, pool, j);
    let mut lo = solution.values.wealth(0, pool, j - 1);
    if solution.initial_value(lo, pool) >= confidence {
        return Ok(lo / pool as f64);
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if solution.initial_value(mid, pool) >= confidence {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi / pool as f64)
}

/// `max_j [v_0(x_j, a) - v_0(x'_j, b)]` over the stage-0 grid points, where
/// `x_j` and `x'_j` carry the same per-member wealth.
pub fn max_pool_gap(solution: &Solution, pool: u32, baseline: u32) -> f64 {
    let top = solution.values.column(0, pool);
    let bottom = solution.values.column(0, baseline);
    top.iter().zip(bottom).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
}

/// One row per pool size `a` in `2..=max`: the largest gain over a single
/// member and the largest gain over a pool of `a - 1`.
pub fn pool_gap_curve(solution: &Solution, max_pool: u32) -> Vec<(u32, f64, f64)> {
    (1..=max_pool.min(solution.values.max_pool()))
        .map(|a| {
            if a == 1 {
                (1, 0.0, 0.0)
            } else {
                (a, max_pool_gap(solution, a, 1), max_pool_gap(solution, a, a - 1))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ReturnModel;
    use crate::mortality::CohortMortality;
    use crate::schedule::WithdrawalPlan;
    use crate::solver::{solve, SolverConfig};

    fn small() -> Solution {
        let c = CohortMortality::from_probabilities(114, vec![0.1, 0.2, 0.3, 0.5, 0.7, 1.0]).unwrap();
        let plan = WithdrawalPlan::level(3.0, 2, 6, 0.0, 114).unwrap();
        let cfg = SolverConfig { resolution: 30, ..SolverConfig::with_max_pool(2) };
        solve(&plan, &c, &ReturnModel::baseline(), &cfg).unwrap()
    }

    #[test]
    fn unreachable_target_returns_floor() {
        let mut sol = small();
        let capped: Vec<f64> = sol.values.column(0, 2).iter().map(|v| v.min(0.5)).collect();
        sol.values.store(0, 2, &capped);
        assert_eq!(required_contribution(&sol, 2, 0.9).unwrap(), sol.floor(2, 0) / 2.0);
    }

    #[test]
    fn bisection_lands_on_the_target() {
        let sol = small();
        let x = required_contribution(&sol, 1, 0.8).unwrap();
        assert!(sol.initial_value(x, 1) >= 0.8);
        assert!(sol.initial_value(x - 1e-6, 1) < 0.8);
        assert!(required_contribution(&sol, 3, 0.8).is_err());
        assert!(required_contribution(&sol, 1, 0.0).is_err());
    }

    #[test]
    fn gap_of_a_pool_with_itself_is_zero() {
        let sol = small();
        assert_eq!(max_pool_gap(&sol, 2, 2), 0.0);
        let curve = pool_gap_curve(&sol, 2);
        assert_eq!(curve[0], (1, 0.0, 0.0));
        assert!(curve[1].1 > 0.0);
    }
}
