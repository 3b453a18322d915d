//! Average daily increase rate (IR) of new cases per geo-unit.
//!
//! For a series of `N` daily new-case counts `c_1..c_N`,
//!
//! ```text
//! IR = sum_{d=1}^{N-1} (c_{d+1} - c_d) / N
//! ```
//!
//! The divisor is the number of recorded days `N`, not the number of
//! differences. The sum is accumulated without intermediate rounding, so the
//! result is bit-identical to `(c_N - c_1) / N`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CaseSeries, GeoUnitId};
use crate::stats::exact_sum;

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error("series for {unit} has {len} days, need at least 2")]
    SeriesTooShort { unit: String, len: usize },
    #[error("no case series for unit {0}")]
    MissingSeries(String),
    #[error("unit {unit} has {got} days, expected {expected}")]
    InconsistentWindow { unit: String, expected: usize, got: usize },
    #[error("no units")]
    NoUnits,
}

/// IR per geo-unit, in the unit order of the feature table it will be paired with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    pub units: Vec<GeoUnitId>,
    pub ir: Vec<f64>,
    pub n_days: usize,
}

impl TargetVector {
    pub fn len(&self) -> usize {
        self.ir.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ir.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["unit", "ir"])?;
        for (u, ir) in self.units.iter().zip(&self.ir) {
            w.write_record([u.as_str(), &ir.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// IR of a raw count sequence.
pub fn increase_rate(new_cases: &[f64]) -> Option<f64> {
    if new_cases.len() < 2 {
        return None;
    }
    // Each difference is split into its rounded value and rounding error
    // (two-sum), so the total below is the exact telescoped sum.
    let terms = new_cases.windows(2).flat_map(|w| {
        let (prev, next) = (w[0], w[1]);
        let d = next - prev;
        let b = d - next;
        let err = (next - (d - b)) + (-prev - b);
        [d, err]
    });
    Some(exact_sum(terms) / new_cases.len() as f64)
}

pub fn compute_ir(series: &CaseSeries) -> Result<f64, TargetError> {
    increase_rate(series.new_cases()).ok_or_else(|| TargetError::SeriesTooShort {
        unit: series.unit().to_string(),
        len: series.n_days(),
    })
}

pub fn compute_target(
    series_map: &BTreeMap<GeoUnitId, CaseSeries>,
    units: &[GeoUnitId],
) -> Result<TargetVector, TargetError> {
    let first = units.first().ok_or(TargetError::NoUnits)?;
    let n_days = series_map
        .get(first)
        .ok_or_else(|| TargetError::MissingSeries(first.to_string()))?
        .n_days();
    let ir = units
        .iter()
        .map(|u| {
            let s = series_map
                .get(u)
                .ok_or_else(|| TargetError::MissingSeries(u.to_string()))?;
            if s.n_days() != n_days {
                return Err(TargetError::InconsistentWindow {
                    unit: u.to_string(),
                    expected: n_days,
                    got: s.n_days(),
                });
            }
            compute_ir(s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TargetVector {
        units: units.to_vec(),
        ir,
        n_days,
    })
}
