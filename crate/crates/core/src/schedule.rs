//! Withdrawal plans and the riskless bond floors they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contribution and withdrawal schedule shared by every member of the pool.
///
/// `withdrawals[i]` is the amount each living member takes at step `i + 1`,
/// so the horizon is `withdrawals.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithdrawalPlan {
    contribution: f64,
    pool_size: u32,
    withdrawals: Vec<f64>,
    rate: f64,
    start_age: u32,
}

impl WithdrawalPlan {
    pub fn new(
        contribution: f64,
        pool_size: u32,
        withdrawals: Vec<f64>,
        rate: f64,
        start_age: u32,
    ) -> Result<Self> {
        if !(contribution.is_finite() && contribution > 0.0) {
            return Err(Error::validation(format!("contribution must be positive, got {contribution}")));
        }
        if pool_size == 0 {
            return Err(Error::validation("pool must start with at least one member"));
        }
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::validation(format!("bond rate must be >= 0, got {rate}")));
        }
        match withdrawals.last() {
            None => return Err(Error::validation("withdrawal schedule is empty")),
            Some(&w) if !(w > 0.0) => return Err(Error::validation("the final withdrawal must be positive")),
            _ => {}
        }
        if let Some(w) = withdrawals.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::validation(format!("withdrawal {w} is negative")));
        }
        Ok(Self { contribution, pool_size, withdrawals, rate, start_age })
    }

    /// Unit withdrawals at every step for `horizon` steps.
    pub fn level(
        contribution: f64,
        pool_size: u32,
        horizon: usize,
        rate: f64,
        start_age: u32,
    ) -> Result<Self> {
        Self::new(contribution, pool_size, vec![1.0; horizon], rate, start_age)
    }

    pub fn contribution(&self) -> f64 {
        self.contribution
    }

    pub fn pool_size(&self) -> u32 {
        self.pool_size
    }

    pub fn withdrawals(&self) -> &[f64] {
        &self.withdrawals
    }

    /// Withdrawal taken at step `step` (1-based, `1..=horizon`).
    pub fn withdrawal(&self, step: usize) -> f64 {
        self.withdrawals[step - 1]
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn start_age(&self) -> u32 {
        self.start_age
    }

    pub fn horizon(&self) -> usize {
        self.withdrawals.len()
    }

    /// Initial pooled wealth `A0 * P`.
    pub fn initial_wealth(&self) -> f64 {
        self.pool_size as f64 * self.contribution
    }

    pub fn with_contribution(&self, contribution: f64) -> Result<Self> {
        Self::new(contribution, self.pool_size, self.withdrawals.clone(), self.rate, self.start_age)
    }

    pub fn with_pool_size(&self, pool_size: u32) -> Result<Self> {
        Self::new(self.contribution, pool_size, self.withdrawals.clone(), self.rate, self.start_age)
    }
}

/// Riskless floors `m[a][i]`: the wealth at step `i` from which `a` living
/// members can fund every remaining withdrawal from bonds alone.
///
/// `m[a][k] = 0` and `m[a][i] = (m[a][i+1] + a * w_{i+1}) / (1 + r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorMatrix {
    horizon: usize,
    max_pool: u32,
    // row-major by pool size, `horizon + 1` entries per row
    m: Vec<f64>,
}

impl FloorMatrix {
    pub fn new(withdrawals: &[f64], rate: f64, max_pool: u32) -> Self {
        let k = withdrawals.len();
        let mut m = vec![0.0; (max_pool as usize + 1) * (k + 1)];
        let growth = 1.0 + rate;
        for a in 0..=max_pool as usize {
            let row = &mut m[a * (k + 1)..(a + 1) * (k + 1)];
            for i in (0..k).rev() {
                row[i] = (row[i + 1] + a as f64 * withdrawals[i]) / growth;
            }
        }
        Self { horizon: k, max_pool, m }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn max_pool(&self) -> u32 {
        self.max_pool
    }

    /// `m_{a,i}`; panics when `a` exceeds the pool sizes this matrix covers.
    pub fn floor(&self, pool: u32, stage: usize) -> f64 {
        assert!(pool <= self.max_pool, "pool size {pool} beyond {}", self.max_pool);
        self.m[pool as usize * (self.horizon + 1) + stage]
    }
}

/// Floors for pool sizes `0..=A0` of the plan.
pub fn compute_floors(plan: &WithdrawalPlan) -> FloorMatrix {
    FloorMatrix::new(plan.withdrawals(), plan.rate(), plan.pool_size())
}

/// Wealth of one member investing alone under the given gross portfolio
/// returns: `W~_0 = P`, `W~_j = Y_{j-1} W~_{j-1} - w_j`.
pub fn present_value_individual(plan: &WithdrawalPlan, path: &[f64]) -> Vec<f64> {
    assert_eq!(path.len(), plan.horizon(), "need one portfolio return per step");
    let mut out = Vec::with_capacity(path.len() + 1);
    let mut w = plan.contribution();
    out.push(w);
    for (j, y) in path.iter().enumerate() {
        w = y * w - plan.withdrawal(j + 1);
        out.push(w);
    }
    out
}
