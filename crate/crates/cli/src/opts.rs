use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use poolfund::table::num;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "poolfund", version, about = "Withdrawal-success probabilities for pooled annuity funds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve for the optimal stock weights and write the value/policy grid.
    Solve,
    /// Estimate success probabilities of a stored or constant policy by simulation.
    Simulate,
    /// Required contribution P* per member for each age, pool size and confidence.
    Frontier,
    /// Largest gain in success probability from pooling, per pool size.
    PoolBenefit,
    /// Solved values and baseline-policy simulations over a grid of return models.
    Sensitivity,
    /// Real total returns and the fitted Normal model from a market CSV.
    FitMarket,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Frontier => "frontier",
            Command::PoolBenefit => "pool-benefit",
            Command::Sensitivity => "sensitivity",
            Command::FitMarket => "fit-market",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Command::Solve => &[
                "age",
                "withdrawal",
                "rate",
                "grid",
                "mu",
                "sigma",
                "life-table",
                "market-csv",
                "out",
                "threads",
                "pool",
                "contribution",
                "all-members",
            ],
            Command::Simulate => &[
                "age",
                "withdrawal",
                "rate",
                "mu",
                "sigma",
                "life-table",
                "market-csv",
                "out",
                "threads",
                "pool",
                "contribution",
                "paths",
                "seed",
                "constant-q",
                "policy",
                "all-members",
                "liquidity",
                "trace",
            ],
            Command::Frontier => &[
                "age",
                "withdrawal",
                "rate",
                "grid",
                "mu",
                "sigma",
                "life-table",
                "market-csv",
                "out",
                "threads",
                "pool",
                "confidence",
            ],
            Command::PoolBenefit => &[
                "age",
                "withdrawal",
                "rate",
                "grid",
                "mu",
                "sigma",
                "life-table",
                "market-csv",
                "out",
                "threads",
                "pool",
            ],
            Command::Sensitivity => &[
                "age",
                "withdrawal",
                "rate",
                "grid",
                "mu",
                "sigma",
                "life-table",
                "out",
                "threads",
                "pool",
                "contribution",
                "paths",
                "seed",
                "baseline-mu",
                "baseline-sigma",
            ],
            Command::FitMarket => &["market-csv", "rate", "out", "threads"],
        }
    }

    fn default(self, key: &str) -> Option<&'static str> {
        Some(match key {
            "age" => "65",
            "withdrawal" => "1",
            "rate" => "0",
            "grid" => "100",
            "mu" | "baseline-mu" => "1.083",
            "sigma" | "baseline-sigma" => "0.1753",
            "out" => ".",
            "paths" => "100000",
            "seed" => "0",
            "confidence" => "0.95",
            "trace" => "0",
            "all-members" | "liquidity" => "false",
            "pool" if self == Command::PoolBenefit => "1:20",
            "pool" => "1",
            _ => return None,
        })
    }
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Key-value (TOML) file, or a run manifest, supplying any of the flags below.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Starting age s; a list (65,70) or range (65:80:5) for frontier.
    #[arg(long, global = true, value_name = "AGE")]
    pub age: Option<String>,
    /// Pool size A0; a list or range (1:20) where several are tabulated.
    #[arg(long, global = true, value_name = "A")]
    pub pool: Option<String>,
    /// Contribution P per member; a list or range sweeps it.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "P")]
    pub contribution: Option<String>,
    /// Level withdrawal per stage, or a file with one withdrawal per stage.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "W|FILE")]
    pub withdrawal: Option<String>,
    /// Real bond rate r.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "R")]
    pub rate: Option<String>,
    /// Wealth grid resolution M.
    #[arg(long, global = true, value_name = "M")]
    pub grid: Option<String>,
    /// Mean gross real stock return; a list for sensitivity.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "MU")]
    pub mu: Option<String>,
    /// Standard deviation of the stock return; a list for sensitivity.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "SIGMA")]
    pub sigma: Option<String>,
    /// Period life table (age,q_x); defaults to the bundled table.
    #[arg(long, global = true, value_name = "FILE")]
    pub life_table: Option<String>,
    /// Market CSV (year,I,D,C) to fit mu and sigma from.
    #[arg(long, global = true, value_name = "FILE")]
    pub market_csv: Option<String>,
    /// Number of simulated paths.
    #[arg(long, global = true, value_name = "N")]
    pub paths: Option<String>,
    /// Simulation seed.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed: Option<String>,
    /// Simulate a constant stock weight instead of a solved policy.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "Q")]
    pub constant_q: Option<String>,
    /// Grid artifact written by `solve`.
    #[arg(long, global = true, value_name = "FILE")]
    pub policy: Option<String>,
    /// Confidence levels for frontier.
    #[arg(long, global = true, value_name = "C")]
    pub confidence: Option<String>,
    /// Baseline mean whose policy is replayed by sensitivity.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "MU")]
    pub baseline_mu: Option<String>,
    /// Baseline standard deviation whose policy is replayed by sensitivity.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "SIGMA")]
    pub baseline_sigma: Option<String>,
    /// Target the probability that every member is paid until the last death.
    #[arg(long, global = true)]
    pub all_members: bool,
    /// Add a liquidity-bound check to each simulated row.
    #[arg(long, global = true)]
    pub liquidity: bool,
    /// Write the first N simulated trajectories.
    #[arg(long, global = true, value_name = "N")]
    pub trace: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<String>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<String>,
}

impl Flags {
    fn entries(&self) -> Vec<(&'static str, Option<String>)> {
        let on = |b: bool| b.then(|| "true".to_string());
        vec![
            ("age", self.age.clone()),
            ("pool", self.pool.clone()),
            ("contribution", self.contribution.clone()),
            ("withdrawal", self.withdrawal.clone()),
            ("rate", self.rate.clone()),
            ("grid", self.grid.clone()),
            ("mu", self.mu.clone()),
            ("sigma", self.sigma.clone()),
            ("life-table", self.life_table.clone()),
            ("market-csv", self.market_csv.clone()),
            ("paths", self.paths.clone()),
            ("seed", self.seed.clone()),
            ("constant-q", self.constant_q.clone()),
            ("policy", self.policy.clone()),
            ("confidence", self.confidence.clone()),
            ("baseline-mu", self.baseline_mu.clone()),
            ("baseline-sigma", self.baseline_sigma.clone()),
            ("all-members", on(self.all_members)),
            ("liquidity", on(self.liquidity)),
            ("trace", self.trace.clone()),
            ("out", self.out.clone()),
            ("threads", self.threads.clone()),
        ]
    }
}

/// Flag values after layering defaults, the config file and the command line.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

fn config_value(key: &str, v: &toml::Value) -> Result<String, Failure> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => num(*f),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => {
            items.iter().map(|i| config_value(key, i)).collect::<Result<Vec<_>, _>>()?.join(",")
        }
        _ => return Err(Failure::Usage(format!("config key `{key}` must be a scalar or a list"))),
    })
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let bad_file = |e: &dyn std::fmt::Display| Failure::Usage(format!("config {}: {e}", path.display()));
    let table: toml::Table = if path.extension().is_some_and(|e| e == "json") {
        // a run manifest: replay its resolved config
        let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad_file(&e))?;
        let config =
            manifest.get("config").and_then(|c| c.as_object()).ok_or_else(|| bad_file(&"no config block"))?;
        config
            .iter()
            .map(|(k, v)| {
                Ok((k.clone(), toml::Value::String(v.as_str().ok_or_else(|| bad_file(&k))?.to_string())))
            })
            .collect::<Result<_, Failure>>()?
    } else {
        toml::from_str(&text).map_err(|e| bad_file(&e))?
    };
    let known: BTreeSet<&str> = Flags::default().entries().into_iter().map(|(k, _)| k).collect();
    let mut out = BTreeMap::new();
    for (k, v) in &table {
        let key = k.replace('_', "-");
        if !known.contains(key.as_str()) {
            return Err(Failure::Usage(format!("config {}: unknown key `{k}`", path.display())));
        }
        out.insert(key.clone(), config_value(&key, v)?);
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(command: Command, flags: &Flags) -> Result<Self, Failure> {
        let keys = command.keys();
        let file = match &flags.config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        let mut values = BTreeMap::new();
        let mut explicit = BTreeSet::new();
        for (key, flag) in flags.entries() {
            let accepted = keys.contains(&key);
            if let Some(v) = flag {
                if !accepted {
                    return Err(Failure::Usage(format!("--{key} does not apply to `{}`", command.name())));
                }
                values.insert(key.to_string(), v);
                explicit.insert(key.to_string());
            } else if accepted {
                if let Some(v) = file.get(key) {
                    values.insert(key.to_string(), v.clone());
                    explicit.insert(key.to_string());
                } else if let Some(d) = command.default(key) {
                    values.insert(key.to_string(), d.to_string());
                }
            }
        }
        Ok(Self { values, explicit })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    fn required(&self, key: &str) -> Result<&str, Failure> {
        self.get(key).ok_or_else(|| Failure::Usage(format!("--{key} is required")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, Failure> {
        parse_f64(key, self.required(key)?)
    }

    pub fn u64(&self, key: &str) -> Result<u64, Failure> {
        let v = self.required(key)?;
        v.trim().parse().map_err(|_| bad(key, v))
    }

    pub fn usize(&self, key: &str) -> Result<usize, Failure> {
        let v = self.required(key)?;
        v.trim().parse().map_err(|_| bad(key, v))
    }

    pub fn flag(&self, key: &str) -> Result<bool, Failure> {
        match self.get(key).unwrap_or("false") {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(bad(key, v)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, Failure> {
        parse_list(
            key,
            self.required(key)?,
            |s| parse_f64(key, s),
            |lo, hi, step| float_range(key, lo, hi, step),
        )
    }

    pub fn u32_list(&self, key: &str) -> Result<Vec<u32>, Failure> {
        let int = |s: &str| s.trim().parse::<u32>().map_err(|_| bad(key, s));
        parse_list(key, self.required(key)?, int, |lo, hi, step| {
            let (lo, hi, step) = (int(lo)?, int(hi)?, step.map(int).transpose()?.unwrap_or(1));
            if step == 0 || lo > hi {
                return Err(bad(key, &format!("{lo}:{hi}:{step}")));
            }
            Ok((lo..=hi).step_by(step as usize).collect())
        })
    }

    /// A single value of a key that may hold a list elsewhere.
    pub fn single_u32(&self, key: &str) -> Result<u32, Failure> {
        match self.u32_list(key)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(Failure::Usage(format!("--{key} takes a single value here"))),
        }
    }

    pub fn single_f64(&self, key: &str) -> Result<f64, Failure> {
        match self.f64_list(key)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(Failure::Usage(format!("--{key} takes a single value here"))),
        }
    }
}

fn bad(key: &str, v: &str) -> Failure {
    Failure::Usage(format!("invalid value `{v}` for --{key}"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, Failure> {
    v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(key, v))
}

fn parse_list<T>(
    key: &str,
    v: &str,
    item: impl Fn(&str) -> Result<T, Failure>,
    range: impl Fn(&str, &str, Option<&str>) -> Result<Vec<T>, Failure>,
) -> Result<Vec<T>, Failure> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim) {
        let bits: Vec<&str> = part.split(':').collect();
        match bits.as_slice() {
            [one] => out.push(item(one)?),
            [lo, hi] => out.extend(range(lo, hi, None)?),
            [lo, hi, step] => out.extend(range(lo, hi, Some(step))?),
            _ => return Err(bad(key, v)),
        }
    }
    if out.is_empty() {
        return Err(bad(key, v));
    }
    Ok(out)
}

fn float_range(key: &str, lo: &str, hi: &str, step: Option<&str>) -> Result<Vec<f64>, Failure> {
    let (a, b) = (parse_f64(key, lo)?, parse_f64(key, hi)?);
    let h = step.map(|s| parse_f64(key, s)).transpose()?.unwrap_or(1.0);
    if !(h > 0.0) || a > b {
        return Err(bad(key, &format!("{lo}:{hi}")));
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((a + i as f64 * h) * 1e9).round() / 1e9).collect())
}
