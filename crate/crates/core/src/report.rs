//! Check reports and seeded run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("check {0:?} appears twice")]
    Duplicate(String),
    #[error("tolerance override {0:?} is not NAME=VALUE")]
    BadOverride(String),
}

/// Settings shared by every command of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub seed: u64,
    /// Keyed by check name or by check group (the part before `/`).
    pub tolerances: BTreeMap<String, f64>,
    pub verbosity: u8,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Parses `NAME=VALUE` and records the override.
    pub fn add_override(&mut self, spec: &str) -> Result<(), ReportError> {
        let (name, value) = spec.split_once('=').ok_or_else(|| ReportError::BadOverride(spec.into()))?;
        let value: f64 = value.trim().parse().map_err(|_| ReportError::BadOverride(spec.into()))?;
        if name.trim().is_empty() || !(value >= 0.0) {
            return Err(ReportError::BadOverride(spec.into()));
        }
        self.tolerances.insert(name.trim().to_string(), value);
        Ok(())
    }

    /// The tolerance for `check`: an exact-name override, then a group
    /// override, then `default`.
    pub fn tolerance(&self, check: &str, default: f64) -> f64 {
        if let Some(&t) = self.tolerances.get(check) {
            return t;
        }
        let group = check.split('/').next().unwrap_or(check);
        self.tolerances.get(group).copied().unwrap_or(default)
    }

    /// A seed for `check` that depends only on the run seed and the name.
    pub fn check_seed(&self, check: &str) -> u64 {
        check_seed(self.seed, check)
    }
}

/// FNV-1a over the name, mixed with the run seed by SplitMix64.
pub fn check_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
        })
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pass" => Ok(Self::Pass),
            "fail" => Ok(Self::Fail),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    /// Measured deviation; for exact checks, the number of violations.
    pub deviation: f64,
    pub tolerance: f64,
    /// Wall time. Not written to CSV, so reports stay reproducible.
    pub elapsed: Duration,
}

impl CheckResult {
    pub fn measured(name: impl Into<String>, deviation: f64, tolerance: f64, elapsed: Duration) -> Self {
        let status = if deviation <= tolerance { Status::Pass } else { Status::Fail };
        Self {
            name: name.into(),
            status,
            deviation,
            tolerance,
            elapsed,
        }
    }
}

/// Check results sorted by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    checks: Vec<CheckResult>,
}

pub const CSV_HEADER: &str = "name,status,deviation,tolerance";

impl Report {
    pub fn new(mut checks: Vec<CheckResult>) -> Result<Self, ReportError> {
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = checks.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(ReportError::Duplicate(w[0].name.clone()));
        }
        Ok(Self { checks })
    }

    pub fn checks(&self) -> &[CheckResult] {
        &self.checks
    }

    pub fn len(&self) -> usize {
        self.checks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checks.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status == Status::Pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| c.status == Status::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for c in &self.checks {
            out.push_str(&format!("{},{},{:e},{:e}\n", c.name, c.status, c.deviation, c.tolerance));
        }
        out
    }

    /// Reads what [`Report::to_csv`] writes. Elapsed times read back as zero.
    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(ReportError::Malformed {
                    line: 1,
                    message: format!("expected header {CSV_HEADER:?}"),
                })
            }
        }
        let mut checks = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| ReportError::Malformed { line: i + 1, message };
            let fields: Vec<&str> = line.split(',').collect();
            let [name, status, deviation, tolerance] = fields[..] else {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            };
            let number = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("not a number: {s:?}")));
            checks.push(CheckResult {
                name: name.to_string(),
                status: status.parse().map_err(bad)?,
                deviation: number(deviation)?,
                tolerance: number(tolerance)?,
                elapsed: Duration::ZERO,
            });
        }
        Self::new(checks)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(
                f,
                "{:<width$}  {}  deviation {:.3e}  tolerance {:.3e}  ({:.1?})",
                c.name, c.status, c.deviation, c.tolerance, c.elapsed
            )?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} passed, {} failed", self.len(), self.len() - failed, failed)
    }
}
