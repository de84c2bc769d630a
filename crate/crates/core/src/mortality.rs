//! Period life tables and the per-step death probabilities of a cohort.

use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Age at which death is certain for every cohort.
pub const TERMINAL_AGE: u32 = 120;

/// SSA female period death probabilities (calendar year 2007), ages 0..=119.
pub const BUNDLED_FEMALE_TABLE: &str = include_str!("../../../data/ssa_female_period_2007.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityTable {
    min_age: u32,
    rates: Vec<f64>,
}

impl MortalityTable {
    /// Builds a table from contiguous rates starting at `min_age`. Ages past
    /// [`TERMINAL_AGE`] are dropped and death at [`TERMINAL_AGE`] is certain.
    /// A table whose last rate is below one is padded with certain death.
    pub fn new(min_age: u32, mut rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::validation("life table has no rows"));
        }
        if let Some((i, q)) = rates.iter().enumerate().find(|(_, q)| !(0.0..=1.0).contains(*q)) {
            return Err(Error::validation(format!(
                "death rate {q} at age {} outside [0, 1]",
                min_age as usize + i
            )));
        }
        let keep = (TERMINAL_AGE + 1).saturating_sub(min_age) as usize;
        rates.truncate(keep);
        if rates.is_empty() {
            return Err(Error::validation("life table starts beyond the terminal age"));
        }
        if *rates.last().unwrap() < 1.0 {
            rates.resize(keep, 1.0);
        }
        if rates.len() == keep {
            rates[keep - 1] = 1.0;
        }
        Ok(Self { min_age, rates })
    }

    pub fn bundled() -> Self {
        load_life_table(BUNDLED_FEMALE_TABLE.as_bytes()).expect("bundled table is valid")
    }

    pub fn min_age(&self) -> u32 {
        self.min_age
    }

    pub fn max_age(&self) -> u32 {
        self.min_age + self.rates.len() as u32 - 1
    }

    /// Death probability at `age`; one past the end of the table.
    pub fn rate(&self, age: u32) -> Option<f64> {
        if age < self.min_age {
            return None;
        }
        Some(self.rates.get((age - self.min_age) as usize).copied().unwrap_or(1.0))
    }
}

/// Reads a two-column `age, qx` table. Blank lines and lines starting with
/// `#` are skipped, a leading non-numeric row is taken as a header, and
/// columns may be separated by commas, semicolons, tabs or spaces.
pub fn load_life_table<R: BufRead>(source: R) -> Result<MortalityTable> {
    let mut rows: Vec<(usize, u32, f64)> = Vec::new();
    let mut seen_data = false;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if !seen_data && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        if fields.len() < 2 {
            return Err(Error::Parse { line: line_no, msg: format!("expected `age, qx`, got {trimmed:?}") });
        }
        let age: u32 = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("age {:?} is not a non-negative integer", fields[0]),
        })?;
        let q: f64 = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("death rate {:?} is not a number", fields[1]),
        })?;
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::validation(format!(
                "line {line_no}: death rate {q} at age {age} outside [0, 1]"
            )));
        }
        rows.push((line_no, age, q));
    }
    let Some(&(_, min_age, _)) = rows.first() else {
        return Err(Error::validation("life table has no rows"));
    };
    for pair in rows.windows(2) {
        let (line, age, _) = pair[1];
        if age != pair[0].1 + 1 {
            return Err(Error::validation(format!(
                "line {line}: age {age} does not follow age {}",
                pair[0].1
            )));
        }
    }
    MortalityTable::new(min_age, rows.into_iter().map(|(_, _, q)| q).collect())
}

pub fn load_life_table_file(path: &Path) -> Result<MortalityTable> {
    let file = std::fs::File::open(path)?;
    load_life_table(std::io::BufReader::new(file))
}

/// Per-step death probabilities for a cohort entering at `start_age`.
/// `death[i]` is the probability that a member alive at step `i` dies before
/// step `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMortality {
    start_age: u32,
    death: Vec<f64>,
}

impl CohortMortality {
    /// Cohort with explicit per-step probabilities. The last entry must be 1.
    pub fn from_probabilities(start_age: u32, death: Vec<f64>) -> Result<Self> {
        if death.is_empty() {
            return Err(Error::validation("cohort needs at least one step"));
        }
        if death.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(Error::validation("cohort death probabilities must lie in [0, 1]"));
        }
        if *death.last().unwrap() != 1.0 {
            return Err(Error::validation("death must be certain at the final step"));
        }
        Ok(Self { start_age, death })
    }

    pub fn start_age(&self) -> u32 {
        self.start_age
    }

    /// Horizon `k`, the number of steps until death is certain.
    pub fn horizon(&self) -> usize {
        self.death.len()
    }

    pub fn death(&self, step: usize) -> f64 {
        self.death[step]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.death
    }

    /// Hex SHA-256 of the probabilities, used to tie artifacts to the
    /// mortality they were solved under.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.start_age.to_le_bytes());
        for d in &self.death {
            h.update(d.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Cohort of starting age `s`: horizon `k = 120 - s` and `d_i = q_{s+i}`,
/// with death at the final step forced to be certain.
pub fn cohort(table: &MortalityTable, start_age: u32) -> Result<CohortMortality> {
    if start_age >= TERMINAL_AGE {
        return Err(Error::Domain(format!("starting age {start_age} must be below {TERMINAL_AGE}")));
    }
    if start_age < table.min_age() {
        return Err(Error::Domain(format!(
            "life table starts at age {}, after starting age {start_age}",
            table.min_age()
        )));
    }
    let k = (TERMINAL_AGE - start_age) as usize;
    let mut death: Vec<f64> =
        (0..k as u32).map(|i| table.rate(start_age + i).expect("age covered")).collect();
    death[k - 1] = 1.0;
    Ok(CohortMortality { start_age, death })
}

/// Number of deaths among `alive` independent members with death
/// probability `d` each.
pub fn sample_deaths<R: Rng + ?Sized>(d: f64, alive: u32, rng: &mut R) -> u32 {
    if alive == 0 || d <= 0.0 {
        return 0;
    }
    if d >= 1.0 {
        return alive;
    }
    Binomial::new(alive as u64, d).expect("probability in (0, 1)").sample(rng) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimal_table() {
        let t = load_life_table("0, .005\n1, 1.0\n".as_bytes()).unwrap();
        assert_eq!(t.min_age(), 0);
        assert_eq!(t.max_age(), 1);
        assert_eq!(t.rate(0), Some(0.005));
        assert_eq!(t.rate(1), Some(1.0));
    }

    #[test]
    fn out_of_range_rate_is_rejected() {
        let err = load_life_table("age,qx\n64,0.01\n65,1.2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let err = load_life_table("# c\nage,qx\n60,0.01\n61,abc\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn gap_in_ages_is_rejected() {
        let err = load_life_table("60,0.01\n62,0.02\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn short_table_is_padded_to_terminal_age() {
        let t = load_life_table("100\t0.3\n101\t0.4\n".as_bytes()).unwrap();
        assert_eq!(t.max_age(), TERMINAL_AGE);
        assert_eq!(t.rate(102), Some(1.0));
        assert_eq!(t.rate(119), Some(1.0));
    }

    #[test]
    fn rows_past_terminal_age_dropped() {
        let text: String = (118..=125).map(|a| format!("{a},0.9\n")).collect();
        let t = load_life_table(text.as_bytes()).unwrap();
        assert_eq!(t.max_age(), TERMINAL_AGE);
        assert_eq!(t.rate(120), Some(1.0));
    }

    #[test]
    fn bundled_table_age_65_matches_file() {
        let t = MortalityTable::bundled();
        let line = BUNDLED_FEMALE_TABLE.lines().find(|l| l.starts_with("65,")).unwrap();
        let q: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(t.rate(65), Some(q));
        assert_eq!(t.min_age(), 0);
        assert_eq!(t.max_age(), TERMINAL_AGE);
    }

    #[test]
    fn cohort_horizon_and_indexing() {
        let t = MortalityTable::bundled();
        let c65 = cohort(&t, 65).unwrap();
        assert_eq!(c65.horizon(), 55);
        let c60 = cohort(&t, 60).unwrap();
        assert_eq!(c60.horizon(), 60);
        assert_eq!(c60.death(5), t.rate(65).unwrap());
        let c119 = cohort(&t, 119).unwrap();
        assert_eq!(c119.horizon(), 1);
        assert_eq!(c119.death(0), 1.0);
        assert!(cohort(&t, 120).is_err());
    }

    #[test]
    fn death_is_certain_by_the_horizon() {
        let t = MortalityTable::bundled();
        for s in [0, 30, 65, 100, 119] {
            let c = cohort(&t, s).unwrap();
            assert_eq!(c.horizon(), (120 - s) as usize);
            assert_eq!(*c.probabilities().last().unwrap(), 1.0);
            let mut alive = 1.0;
            let mut total = 0.0;
            for &d in c.probabilities() {
                total += alive * d;
                alive *= 1.0 - d;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn binomial_deaths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_deaths(0.0, 10, &mut rng), 0);
        assert_eq!(sample_deaths(1.0, 10, &mut rng), 10);
        assert_eq!(sample_deaths(0.4, 0, &mut rng), 0);
        let n = sample_deaths(0.5, 1_000_000, &mut rng);
        assert!((n as i64 - 500_000).abs() <= 3_000, "{n}");
    }
}
