//! KernelSHAP: Shapley-kernel coalition sampling and the constrained
//! weighted regression that turns sampled qualities into Shapley values.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::regression::weighted_least_squares;
use super::{Fit, PresenceVector, SampleRecord, SampleWeight};
use crate::error::{Error, Result};
use crate::rng;

fn binomial_u128(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    match binomial_u128(n, k) {
        Some(v) => v as f64,
        None => {
            let k = k.min(n - k);
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
    }
}

/// Shapley kernel `(M-1) / (C(M,s) * s * (M-s))` for a coalition of size `s`.
///
/// The endpoints `s = 0` and `s = M` have infinite weight and are enforced
/// as constraints instead.
pub fn shapley_kernel_weight(parts: usize, size: usize) -> Result<f64> {
    if parts < 2 || size == 0 || size >= parts {
        return Err(Error::DegenerateCoalition { parts, size });
    }
    let tail = (size * (parts - size)) as u128;
    let denom = binomial_u128(parts, size)
        .and_then(|c| c.checked_mul(tail))
        .filter(|&d| d < (1u128 << 53));
    Ok(match denom {
        // exact integer operands give a correctly rounded quotient
        Some(d) => (parts - 1) as f64 / d as f64,
        None => (parts - 1) as f64 / (binomial_f64(parts, size) * tail as f64),
    })
}

/// Total kernel mass of all coalitions of size `s`: `(M-1) / (s (M-s))`.
fn size_mass(parts: usize, size: usize) -> f64 {
    (parts - 1) as f64 / (size * (parts - size)) as f64
}

/// Coalitions for one KernelSHAP run. The first two vectors are always the
/// all-ones input and the all-zeros baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionSet {
    pub parts: usize,
    pub vectors: Vec<PresenceVector>,
    /// Every coalition enumerated exactly once.
    pub exact: bool,
}

impl CoalitionSet {
    /// Regression weight of every vector. Exact enumeration uses the kernel
    /// itself; sampled coalitions were already drawn in proportion to the
    /// kernel, so each carries the same importance weight (the kernel's total
    /// mass divided by the number of draws).
    pub fn weights(&self) -> Vec<SampleWeight> {
        let m = self.parts;
        let drawn = self.vectors.len().saturating_sub(2);
        let uniform = if drawn > 0 && m >= 2 {
            (1..m).map(|s| size_mass(m, s)).sum::<f64>() / drawn as f64
        } else {
            0.0
        };
        self.vectors
            .iter()
            .map(|v| {
                let size = v.iter().filter(|&&p| p == 1.0).count();
                if size == 0 || size == m {
                    SampleWeight::Constraint
                } else if self.exact {
                    SampleWeight::Finite(
                        shapley_kernel_weight(m, size).expect("0 < size < parts"),
                    )
                } else {
                    SampleWeight::Finite(uniform)
                }
            })
            .collect()
    }
}

fn from_mask(parts: usize, mask: u64) -> PresenceVector {
    PresenceVector((0..parts).map(|i| ((mask >> i) & 1) as f64).collect())
}

/// Draws `budget` coalitions over `parts` features.
///
/// When `2^parts <= budget` every coalition is enumerated once instead.
/// Otherwise, after the two endpoints, each draw picks a size `s` with
/// probability proportional to the kernel mass `(M-1)/(s(M-s))` and then a
/// uniformly random subset of that size. Duplicates are kept.
pub fn sample_coalitions(parts: usize, budget: usize, seed: u64) -> Result<CoalitionSet> {
    if budget < 2 {
        return Err(Error::BudgetTooSmall(budget));
    }
    if parts == 0 {
        return Err(Error::NoActiveParts);
    }
    let ones = PresenceVector(vec![1.0; parts]);
    let zeros = PresenceVector(vec![0.0; parts]);
    if parts < 64 && (1u64 << parts) <= budget as u64 {
        let full = (1u64 << parts) - 1;
        let mut vectors = vec![ones, zeros];
        vectors.extend((1..full).map(|mask| from_mask(parts, mask)));
        return Ok(CoalitionSet {
            parts,
            vectors,
            exact: true,
        });
    }

    // parts >= 2 here, since 2^1 <= budget always holds
    let masses: Vec<f64> = (1..parts).map(|s| size_mass(parts, s)).collect();
    let total: f64 = masses.iter().sum();
    let mut rng = rng::seeded(seed);
    let mut vectors = Vec::with_capacity(budget);
    vectors.push(ones);
    vectors.push(zeros);
    for _ in 2..budget {
        let mut u = rng.random::<f64>() * total;
        let mut size = parts - 1;
        for (i, m) in masses.iter().enumerate() {
            if u < *m {
                size = i + 1;
                break;
            }
            u -= m;
        }
        let mut v = vec![0.0; parts];
        for i in rand::seq::index::sample(&mut rng, parts, size) {
            v[i] = 1.0;
        }
        vectors.push(PresenceVector(v));
    }
    Ok(CoalitionSet {
        parts,
        vectors,
        exact: false,
    })
}

/// Solves the KernelSHAP regression.
///
/// Minimises `sum_j w_j (q_j - phi_0 - sum_i phi_i z_ji)^2` over the
/// finite-weight records subject to `phi_0 = q_empty` and
/// `phi_0 + sum_i phi_i = q_full`. The sum constraint is eliminated by
/// substituting the last coefficient, leaving `parts - 1` unknowns.
pub fn solve_kernelshap(
    parts: usize,
    records: &[SampleRecord],
    q_empty: f64,
    q_full: f64,
) -> Result<Fit> {
    if parts == 0 {
        return Err(Error::NoActiveParts);
    }
    let delta = q_full - q_empty;
    if parts == 1 {
        return Ok(Fit {
            scores: vec![delta],
            intercept: q_empty,
            regularized: false,
        });
    }
    let rows: Vec<(&SampleRecord, f64)> = records
        .iter()
        .filter_map(|r| match r.weight {
            SampleWeight::Finite(w) => Some((r, w)),
            SampleWeight::Constraint => None,
        })
        .collect();
    if let Some((r, _)) = rows.iter().find(|(r, _)| r.presence.len() != parts) {
        return Err(Error::LengthMismatch {
            expected: parts,
            got: r.presence.len(),
        });
    }
    let distinct: HashSet<Vec<u64>> = rows
        .iter()
        .map(|(r, _)| r.presence.iter().map(|p| p.to_bits()).collect())
        .collect();
    let need = parts - 1;
    if distinct.len() < need {
        return Err(Error::Underdetermined {
            have: distinct.len(),
            need,
        });
    }

    let last = parts - 1;
    let design = DMatrix::from_fn(rows.len(), last, |j, i| {
        let z = &rows[j].0.presence;
        z[i] - z[last]
    });
    let target = DVector::from_fn(rows.len(), |j, _| {
        let (r, _) = rows[j];
        r.q - q_empty - r.presence[last] * delta
    });
    let weights: Vec<f64> = rows.iter().map(|(_, w)| *w).collect();
    let sol = weighted_least_squares(&design, &target, Some(&weights))?;
    let mut scores = sol.coef;
    let rest: f64 = scores.iter().sum();
    scores.push(delta - rest);
    Ok(Fit {
        scores,
        intercept: q_empty,
        regularized: sol.regularized,
    })
}
