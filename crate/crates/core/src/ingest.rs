//! Annual S&P Composite price, dividend and CPI series, turned into gross
//! real total returns.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::ReturnModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketRow {
    pub year: i32,
    /// Average monthly close of the index.
    pub index: f64,
    /// Dividend per share.
    pub dividend: f64,
    /// January consumer price index.
    pub cpi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    rows: Vec<MarketRow>,
}

impl MarketSeries {
    pub fn new(rows: Vec<MarketRow>) -> Result<Self> {
        for r in &rows {
            if !(r.index > 0.0) {
                return Err(Error::validation(format!("year {}: index level must be positive", r.year)));
            }
            if !(r.cpi > 0.0) {
                return Err(Error::validation(format!("year {}: CPI must be positive", r.year)));
            }
            if !(r.dividend >= 0.0) {
                return Err(Error::validation(format!("year {}: dividend must be non-negative", r.year)));
            }
        }
        for pair in rows.windows(2) {
            if pair[1].year != pair[0].year + 1 {
                return Err(Error::validation(format!(
                    "year {} does not follow year {}",
                    pair[1].year, pair[0].year
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[MarketRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Reads `year,I,D,C` rows. The header row is required; `#` lines are skipped.
pub fn load_market_series<R: BufRead>(source: R) -> Result<MarketSeries> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if !header_seen {
            let names: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
            if names != ["year", "i", "d", "c"] {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected header `year,I,D,C`, got {t:?}"),
                });
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 columns, got {}", fields.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("{:?} is not a number", fields[i]) })
        };
        let year = fields[0]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: format!("{:?} is not a year", fields[0]) })?;
        rows.push(MarketRow { year, index: num(1)?, dividend: num(2)?, cpi: num(3)? });
    }
    MarketSeries::new(rows)
}

pub fn load_market_file(path: &Path) -> Result<MarketSeries> {
    let file = std::fs::File::open(path)?;
    load_market_series(std::io::BufReader::new(file))
}

/// Gross real total return for each year but the last:
/// `(I_{k+1} + D_k) / I_k * C_k / C_{k+1}`.
pub fn real_returns(series: &MarketSeries) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::validation("need at least two years to form a return"));
    }
    Ok(series
        .rows()
        .windows(2)
        .map(|p| (p[1].index + p[0].dividend) / p[0].index * (p[0].cpi / p[1].cpi))
        .collect())
}

/// Normal model with the sample mean and (n - 1) sample standard deviation
/// of `returns`, paired with bond rate `rate`.
pub fn fit_return_model(returns: &[f64], rate: f64) -> Result<ReturnModel> {
    if returns.len() < 2 {
        return Err(Error::validation("need at least two returns to fit a model"));
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs() {
        return Err(Error::validation("returns have no dispersion"));
    }
    ReturnModel::new(mean, sd, rate)
}
