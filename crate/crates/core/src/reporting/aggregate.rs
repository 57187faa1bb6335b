//! Averaging part scores over many instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attribution::{ExplanationReport, Method};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAggregate {
    pub name: String,
    /// Absent when the part was never active.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAggregate {
    pub abstraction: u8,
    pub method: Method,
    pub instances: usize,
    /// One entry per vocabulary name, in vocabulary order.
    pub parts: Vec<PartAggregate>,
}

impl GlobalAggregate {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }
}

/// Mean score per part name over the reports in which the part was active.
///
/// Scores are summed in sorted order, so the result does not depend on the
/// order of `reports`. Methods may differ between reports; the first one is
/// recorded.
pub fn aggregate_global(reports: &[ExplanationReport], vocabulary: &[String]) -> Result<GlobalAggregate> {
    let first = reports.first().ok_or(Error::EmptyInput)?;
    if let Some(other) = reports.iter().find(|r| r.abstraction != first.abstraction) {
        return Err(Error::MixedAbstraction(first.abstraction, other.abstraction));
    }
    let mut values: BTreeMap<&str, Vec<f64>> =
        vocabulary.iter().map(|n| (n.as_str(), Vec::new())).collect();
    for report in reports {
        for part in &report.parts {
            values
                .get_mut(part.name.as_str())
                .ok_or_else(|| {
                    Error::PartMismatch(format!(
                        "{:?} is not in the level {} vocabulary",
                        part.name, report.abstraction
                    ))
                })?
                .push(part.score);
        }
    }
    let parts = vocabulary
        .iter()
        .map(|name| {
            let mut v = values.remove(name.as_str()).unwrap_or_default();
            v.sort_by(f64::total_cmp);
            PartAggregate {
                name: name.clone(),
                mean: (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64),
                count: v.len(),
            }
        })
        .collect();
    Ok(GlobalAggregate {
        abstraction: first.abstraction,
        method: first.method,
        instances: reports.len(),
        parts,
    })
}
