//! Delimited-text serialization of solved grids.
//!
//! ```text
//! # poolfund-grid 1
//! # meta {"objective":"focal", ...}
//! stage,pool,j,wealth,value,weight
//! 0,1,1,0.55,0.71,0.34
//! ...
//! ```
//!
//! The `meta` line records everything needed to rebuild the solution and to
//! check that a later simulation runs under the same schedule and mortality.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::market::ReturnModel;
use crate::mortality::CohortMortality;
use crate::schedule::{FloorMatrix, WithdrawalPlan};
use crate::solver::{Objective, PolicyGrid, Solution, SolverConfig, ValueGrid};
use crate::table::num;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "# poolfund-grid";
const COLUMNS: &str = "stage,pool,j,wealth,value,weight";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub objective: Objective,
    pub start_age: u32,
    pub withdrawals: Vec<f64>,
    pub rate: f64,
    pub cohort_digest: String,
    pub death: Vec<f64>,
    pub model: ReturnModel,
    pub solver: SolverConfig,
}

impl ArtifactMeta {
    pub fn of(solution: &Solution) -> Self {
        Self {
            objective: solution.objective(),
            start_age: solution.cohort().start_age(),
            withdrawals: solution.withdrawals().to_vec(),
            rate: solution.model().rate(),
            cohort_digest: solution.cohort().digest(),
            death: solution.cohort().probabilities().to_vec(),
            model: *solution.model(),
            solver: solution.config().clone(),
        }
    }

    /// Hex SHA-256 of the serialized metadata.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("metadata serializes");
        sha256_hex(json.as_bytes())
    }

    /// Checks that a policy solved under this metadata may steer `plan`
    /// under `cohort`. The return model is not compared, so a policy can be
    /// replayed under a different market on purpose.
    pub fn check_compatible(&self, plan: &WithdrawalPlan, cohort: &CohortMortality) -> Result<()> {
        let mismatch = |what: &str| {
            Err(Error::Artifact(format!(
                "policy artifact {} was solved for a different {what}",
                self.digest()
            )))
        };
        if self.withdrawals != plan.withdrawals() {
            return mismatch("withdrawal schedule");
        }
        if self.rate != plan.rate() {
            return mismatch("bond rate");
        }
        if self.cohort_digest != cohort.digest() {
            return mismatch("cohort mortality");
        }
        if self.solver.max_pool < plan.pool_size() {
            return mismatch("pool size (max pool too small)");
        }
        Ok(())
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_solution<W: Write>(solution: &Solution, mut out: W) -> Result<()> {
    let meta = ArtifactMeta::of(solution);
    writeln!(out, "{MAGIC} {FORMAT_VERSION}")?;
    writeln!(out, "# meta {}", serde_json::to_string(&meta).expect("metadata serializes"))?;
    writeln!(out, "{COLUMNS}")?;
    let m = solution.config().resolution;
    for stage in 0..solution.horizon() {
        for pool in 1..=solution.config().max_pool {
            let v = solution.values.column(stage, pool);
            let q = solution.policy.column(stage, pool);
            for j in 1..m {
                writeln!(
                    out,
                    "{stage},{pool},{j},{},{},{}",
                    num(solution.values.wealth(stage, pool, j)),
                    num(v[j - 1]),
                    num(q[j - 1])
                )?;
            }
        }
    }
    Ok(())
}

pub fn save_solution(solution: &Solution, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_solution(solution, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_solution<R: BufRead>(source: R) -> Result<(ArtifactMeta, Solution)> {
    let mut lines = source.lines().enumerate();
    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(Error::Artifact(format!("truncated artifact: missing {what}"))),
        }
    };
    let (_, magic) = next_line("format line")?;
    let version = magic
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Artifact("not a poolfund grid artifact".into()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Artifact(format!("unsupported artifact version {version}")));
    }
    let (line, meta_line) = next_line("metadata")?;
    let meta: ArtifactMeta = meta_line
        .strip_prefix("# meta ")
        .ok_or_else(|| Error::Parse { line, msg: "expected `# meta` line".into() })
        .and_then(|j| serde_json::from_str(j).map_err(|e| Error::Parse { line, msg: e.to_string() }))?;
    let (line, cols) = next_line("column header")?;
    if cols.trim() != COLUMNS {
        return Err(Error::Parse { line, msg: format!("expected `{COLUMNS}`") });
    }

    let cohort = CohortMortality::from_probabilities(meta.start_age, meta.death.clone())?;
    if cohort.digest() != meta.cohort_digest {
        return Err(Error::Artifact("cohort digest does not match stored probabilities".into()));
    }
    let m = meta.solver.resolution;
    let max_pool = meta.solver.max_pool;
    let k = meta.withdrawals.len();
    if m < 2 || k == 0 {
        return Err(Error::Artifact("degenerate grid dimensions".into()));
    }
    let floors = FloorMatrix::new(&meta.withdrawals, meta.rate, max_pool);
    let per_stage = (m - 1) * (max_pool as usize + 1);
    let mut values = vec![1.0; per_stage * k];
    let mut weights = vec![0.0; per_stage * k];
    let mut seen = vec![false; per_stage * k];

    for (i, l) in lines {
        let line = i + 1;
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        let bad = |msg: &str| Error::Parse { line, msg: msg.to_string() };
        if f.len() != 6 {
            return Err(bad("expected 6 columns"));
        }
        let stage: usize = f[0].parse().map_err(|_| bad("bad stage"))?;
        let pool: u32 = f[1].parse().map_err(|_| bad("bad pool"))?;
        let j: usize = f[2].parse().map_err(|_| bad("bad grid index"))?;
        let v: f64 = f[4].parse().map_err(|_| bad("bad value"))?;
        let q: f64 = f[5].parse().map_err(|_| bad("bad weight"))?;
        if stage >= k || pool == 0 || pool > max_pool || !(1..m).contains(&j) {
            return Err(bad("cell outside the grid"));
        }
        let idx = stage * per_stage + pool as usize * (m - 1) + (j - 1);
        values[idx] = v;
        weights[idx] = q;
        seen[idx] = true;
    }
    let missing = (0..k).any(|s| {
        (1..=max_pool as usize).any(|a| {
            let o = s * per_stage + a * (m - 1);
            seen[o..o + m - 1].iter().any(|x| !x)
        })
    });
    if missing {
        return Err(Error::Artifact("artifact is missing grid cells".into()));
    }

    let solution = Solution::from_parts(
        ValueGrid::from_values(floors.clone(), m, values),
        PolicyGrid::from_weights(floors, m, weights),
        meta.model,
        cohort,
        meta.withdrawals.clone(),
        meta.solver.clone(),
        meta.objective,
    );
    Ok((meta, solution))
}

pub fn load_solution(path: &Path) -> Result<(ArtifactMeta, Solution)> {
    let file = std::fs::File::open(path)?;
    read_solution(std::io::BufReader::new(file))
}
