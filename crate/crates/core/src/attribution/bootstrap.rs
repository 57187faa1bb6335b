//! Error bars from repeated fits on random subsets.

use serde::{Deserialize, Serialize};

use super::beta::solve_beta;
use super::kernel::solve_kernelshap;
use super::{Fit, SampleRecord, SampleWeight};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub rounds: usize,
    /// Fraction of the records drawn (without replacement) for each fit.
    pub fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            fraction: 0.75,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "bootstrap needs rounds >= 1 and fraction in (0, 1], got {} and {}",
                self.rounds, self.fraction
            )));
        }
        Ok(())
    }

    fn subset_size(&self, n: usize) -> usize {
        (self.fraction * n as f64).floor() as usize
    }
}

/// Which regression each bootstrap round runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BootstrapSolver {
    Beta,
    KernelShap { q_empty: f64, q_full: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub means: Vec<f64>,
    /// Population standard deviation across rounds.
    pub stds: Vec<f64>,
    pub intercept: f64,
    pub regularized: bool,
    pub fits: Vec<Fit>,
}

/// Runs `config.rounds` fits, each on a fresh uniform subset of the
/// finite-weight records, and summarises them per part.
pub fn bootstrap_errors(
    parts: usize,
    records: &[SampleRecord],
    solver: BootstrapSolver,
    config: BootstrapConfig,
    seed: u64,
) -> Result<BootstrapResult> {
    config.validate()?;
    let pool: Vec<&SampleRecord> = records
        .iter()
        .filter(|r| matches!(r.weight, SampleWeight::Finite(_)))
        .collect();
    let k = config.subset_size(pool.len());
    if solver == BootstrapSolver::Beta && k < parts + 1 {
        return Err(Error::Underdetermined {
            have: pool.len(),
            need: ((parts + 1) as f64 / config.fraction).ceil() as usize,
        });
    }
    let mut rng = rng::seeded(seed);
    let mut fits = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let mut idx = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        idx.sort_unstable();
        let subset: Vec<SampleRecord> = idx.iter().map(|&i| pool[i].clone()).collect();
        let fit = match solver {
            BootstrapSolver::Beta => solve_beta(parts, &subset)?,
            BootstrapSolver::KernelShap { q_empty, q_full } => {
                solve_kernelshap(parts, &subset, q_empty, q_full)?
            }
        };
        fits.push(fit);
    }
    let rounds = fits.len() as f64;
    let means: Vec<f64> = (0..parts)
        .map(|i| fits.iter().map(|f| f.scores[i]).sum::<f64>() / rounds)
        .collect();
    let stds = (0..parts)
        .map(|i| {
            let var = fits
                .iter()
                .map(|f| (f.scores[i] - means[i]).powi(2))
                .sum::<f64>()
                / rounds;
            var.sqrt()
        })
        .collect();
    Ok(BootstrapResult {
        intercept: fits.iter().map(|f| f.intercept).sum::<f64>() / rounds,
        regularized: fits.iter().any(|f| f.regularized),
        means,
        stds,
        fits,
    })
}
