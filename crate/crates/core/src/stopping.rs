//! Termination rules evaluated at iteration boundaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal quantile for 95% intervals.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoppingRule {
    /// Stop once `SE < threshold`.
    AbsoluteSe { threshold: f64 },
    /// Stop once the 95% interval half-width is below `half_width`.
    Rope { half_width: f64 },
    /// Stop once `SE < percent/100 · |value|`.
    Cv { percent: f64 },
    /// Stop once this many simulator invocations have been spent.
    Budget { max_sims: u64 },
    MaxIterations { iterations: u64 },
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StoppingRule::AbsoluteSe { threshold } => threshold > 0.0,
            StoppingRule::Rope { half_width } => half_width > 0.0,
            StoppingRule::Cv { percent } => percent > 0.0,
            StoppingRule::Budget { max_sims } => max_sims > 0,
            StoppingRule::MaxIterations { iterations } => iterations > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("stopping threshold must be positive: {self}")))
        }
    }

    /// True when the rule fires. Precision rules never fire on a NaN estimate.
    pub fn triggered(&self, value: f64, se: f64, sims_used: u64, iteration: u64) -> bool {
        match *self {
            StoppingRule::AbsoluteSe { threshold } => se < threshold,
            StoppingRule::Rope { half_width } => Z_95 * se < half_width,
            StoppingRule::Cv { percent } => value != 0.0 && se < percent / 100.0 * value.abs(),
            StoppingRule::Budget { max_sims } => sims_used >= max_sims,
            StoppingRule::MaxIterations { iterations } => iteration >= iterations,
        }
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StoppingRule::AbsoluteSe { threshold } => write!(f, "absolute_se<{threshold}"),
            StoppingRule::Rope { half_width } => write!(f, "rope<{half_width}"),
            StoppingRule::Cv { percent } => write!(f, "cv<{percent}%"),
            StoppingRule::Budget { max_sims } => write!(f, "budget>={max_sims}"),
            StoppingRule::MaxIterations { iterations } => write!(f, "iterations>={iterations}"),
        }
    }
}

/// Why a loop ended.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    Rule(StoppingRule),
    Exhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::Rule(r) => r.fmt(f),
            StopReason::Exhausted => f.write_str("exhausted"),
        }
    }
}

/// First rule in `rules` that fires, if any.
pub fn should_stop(
    rules: &[StoppingRule],
    value: f64,
    se: f64,
    sims_used: u64,
    iteration: u64,
) -> Option<StopReason> {
    rules
        .iter()
        .find(|r| r.triggered(value, se, sims_used, iteration))
        .map(|r| StopReason::Rule(*r))
}
