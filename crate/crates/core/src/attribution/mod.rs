//! Relevance estimators and the explanation pipeline.
//!
//! Two sampling estimators share one interface: draw presence vectors, run
//! the detector on the correspondingly masked images, and regress detection
//! quality on presence.
//!
//! * [`kernel`]: binary coalitions weighted by the Shapley kernel, solved
//!   with the efficiency constraints enforced exactly.
//! * [`beta`]: continuous Beta-distributed presences solved by ordinary
//!   least squares, with [`bootstrap`] error bars.
//!
//! [`oracle::exact_shapley`] enumerates all coalitions and is the ground
//! truth both are validated against.

pub mod beta;
pub mod bootstrap;
pub mod explain;
pub mod kernel;
pub mod oracle;
pub mod regression;

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::PartLabel;

pub use beta::{sample_beta, solve_beta, BetaParams};
pub use bootstrap::{bootstrap_errors, BootstrapConfig, BootstrapResult, BootstrapSolver};
pub use explain::{explain_instance, ExplainConfig, Explanation, ExplanationReport, Instance, PartScore};
pub use kernel::{sample_coalitions, shapley_kernel_weight, solve_kernelshap, CoalitionSet};
pub use oracle::{exact_shapley, MAX_EXACT_PARTS};

/// Presence value per active part, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PresenceVector(pub Vec<f64>);

impl Deref for PresenceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PresenceVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleWeight {
    Finite(f64),
    /// Full or empty coalition; enforced as an equality constraint.
    Constraint,
}

/// One evaluated perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub presence: PresenceVector,
    pub weight: SampleWeight,
    pub q: f64,
}

/// Output of a single regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub scores: Vec<f64>,
    pub intercept: f64,
    /// The ridge fallback was needed.
    pub regularized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "kernelshap")]
    KernelShap,
    #[serde(rename = "beta")]
    BetaSampling,
    #[serde(rename = "exact")]
    ExactOracle,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::KernelShap => "kernelshap",
            Method::BetaSampling => "beta",
            Method::ExactOracle => "exact",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernelshap" => Ok(Method::KernelShap),
            "beta" => Ok(Method::BetaSampling),
            "exact" => Ok(Method::ExactOracle),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected kernelshap|beta)"
            ))),
        }
    }
}

/// Relevance scores for the active parts of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationResult {
    pub method: Method,
    /// Active parts, in presence-vector order.
    pub parts: Vec<PartLabel>,
    pub scores: Vec<f64>,
    pub intercept: f64,
    /// Bootstrap standard deviations, when a bootstrap ran.
    pub errors: Option<Vec<f64>>,
    pub n_samples: usize,
    pub seed: u64,
    pub regularized: bool,
}
