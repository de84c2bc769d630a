//! Maximal withdrawal-success probabilities for closed pooled annuity funds.
//!
//! A pool of `A0` members of the same age each contribute `P` and withdraw a
//! fixed schedule while alive. The fund holds a stock with iid Normal gross
//! real returns and a bond. [`solver`] finds the stock weight that maximises
//! the chance that a given member completes every withdrawal until death;
//! [`simulate`] checks any weight policy by forward Monte-Carlo.

pub mod artifact;
pub mod error;
pub mod ingest;
pub mod market;
pub mod mortality;
pub mod schedule;
pub mod simulate;
pub mod solver;
pub mod table;

pub use error::{Error, Result};
pub use market::ReturnModel;
pub use mortality::{cohort, load_life_table, CohortMortality, MortalityTable};
pub use schedule::{compute_floors, FloorMatrix, WithdrawalPlan};
pub use solver::{solve, solve_all_annuitant, Objective, Solution, SolverConfig};
