use std::fmt;

use serde::{Deserialize, Serialize};

/// A non-fatal condition recorded while processing data.
///
/// Rendered on the diagnostic stream as `WARN <code> unit=<id> detail=<text>`,
/// with `unit=-` when the warning is not tied to a single unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: String,
    pub unit: Option<String>,
    pub detail: String,
}

impl Warning {
    pub fn new(code: &str, unit: Option<&str>, detail: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            unit: unit.map(str::to_string),
            detail: detail.into(),
        }
    }

    pub fn global(code: &str, detail: impl Into<String>) -> Self {
        Self::new(code, None, detail)
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "WARN {} unit={} detail={}",
            self.code,
            self.unit.as_deref().unwrap_or("-"),
            self.detail
        )
    }
}

pub mod codes {
    pub const DROPPED_COLUMN: &str = "DROPPED_COLUMN";
    pub const BAD_KEY: &str = "BAD_KEY";
    pub const NEGATIVE_DIFF: &str = "NEGATIVE_DIFF";
    pub const NON_CONVERGENCE: &str = "NON_CONVERGENCE";
    pub const DEGENERATE_TARGET: &str = "DEGENERATE_TARGET";
    pub const EMPTY_CATEGORY: &str = "EMPTY_CATEGORY";
    pub const UNSELECTED_MAPPED: &str = "UNSELECTED_MAPPED";
    pub const UNCATEGORIZED: &str = "UNCATEGORIZED";
    pub const EMBED_FAILED: &str = "EMBED_FAILED";
    pub const UNMODELED_BOUNDARY: &str = "UNMODELED_BOUNDARY";
    pub const MISSING_BOUNDARY: &str = "MISSING_BOUNDARY";
    pub const DROPPED_UNIT: &str = "DROPPED_UNIT";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_structured_line() {
        let w = Warning::new(codes::NEGATIVE_DIFF, Some("10001"), "day 2020-04-05 clamped");
        assert_eq!(w.to_string(), "WARN NEGATIVE_DIFF unit=10001 detail=day 2020-04-05 clamped");
        let g = Warning::global(codes::DEGENERATE_TARGET, "all equal");
        assert_eq!(g.to_string(), "WARN DEGENERATE_TARGET unit=- detail=all equal");
    }
}
