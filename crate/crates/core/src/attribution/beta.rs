//! Continuous presence sampling from a Beta distribution, scored by plain
//! least squares.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use super::regression::weighted_least_squares;
use super::{Fit, PresenceVector, SampleRecord};
use crate::error::{Error, Result};
use crate::rng;

/// Concentration coefficients of the presence distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaParams {
    /// Mass near both ends with a mean presence of 2/3.
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
        }
    }
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta parameters must be positive, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// `n` presence vectors with i.i.d. Beta coordinates.
pub fn sample_beta(parts: usize, n: usize, params: BetaParams, seed: u64) -> Result<Vec<PresenceVector>> {
    let params = BetaParams::new(params.alpha, params.beta)?;
    let dist = Beta::new(params.alpha, params.beta)
        .map_err(|e| Error::Config(format!("beta distribution: {e}")))?;
    let mut rng = rng::seeded(seed);
    Ok((0..n)
        .map(|_| PresenceVector((0..parts).map(|_| rng.sample(dist)).collect()))
        .collect())
}

/// Ordinary least squares of `q` on the presence values with a free
/// intercept. No weighting, no efficiency constraint.
pub fn solve_beta(parts: usize, records: &[SampleRecord]) -> Result<Fit> {
    if parts == 0 {
        return Err(Error::NoActiveParts);
    }
    let need = parts + 1;
    if records.len() < need {
        return Err(Error::Underdetermined {
            have: records.len(),
            need,
        });
    }
    if let Some(r) = records.iter().find(|r| r.presence.len() != parts) {
        return Err(Error::LengthMismatch {
            expected: parts,
            got: r.presence.len(),
        });
    }
    let design = DMatrix::from_fn(records.len(), need, |j, i| {
        if i == 0 {
            1.0
        } else {
            records[j].presence[i - 1]
        }
    });
    let target = DVector::from_iterator(records.len(), records.iter().map(|r| r.q));
    let sol = weighted_least_squares(&design, &target, None)?;
    Ok(Fit {
        intercept: sol.coef[0],
        scores: sol.coef[1..].to_vec(),
        regularized: sol.regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::SampleWeight;

    fn records(samples: Vec<PresenceVector>, f: impl Fn(&[f64]) -> f64) -> Vec<SampleRecord> {
        samples
            .into_iter()
            .map(|p| SampleRecord {
                q: f(&p),
                presence: p,
                weight: SampleWeight::Finite(1.0),
            })
            .collect()
    }

    #[test]
    fn empirical_mean_near_two_thirds() {
        let s = sample_beta(1, 100_000, BetaParams::default(), 17).unwrap();
        let mean = s.iter().map(|v| v[0]).sum::<f64>() / s.len() as f64;
        assert!((mean - 2.0 / 3.0).abs() <= 0.005, "{mean}");
        assert!(s.iter().all(|v| (0.0..=1.0).contains(&v[0])));
    }

    #[test]
    fn symmetric_params_centre_at_half() {
        let s = sample_beta(1, 100_000, BetaParams::new(0.3, 0.3).unwrap(), 4).unwrap();
        let mean = s.iter().map(|v| v[0]).sum::<f64>() / s.len() as f64;
        assert!((mean - 0.5).abs() <= 0.01, "{mean}");
    }

    #[test]
    fn seeded_samples_repeat_bitwise() {
        let a = sample_beta(6, 50, BetaParams::default(), 99).unwrap();
        let b = sample_beta(6, 50, BetaParams::default(), 99).unwrap();
        let bits = |s: &[PresenceVector]| -> Vec<u64> {
            s.iter().flat_map(|v| v.iter().map(|p| p.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BetaParams::new(0.0, 1.0).is_err());
        assert!(sample_beta(2, 2, BetaParams { alpha: -1.0, beta: 1.0 }, 0).is_err());
    }

    #[test]
    fn linear_detector_recovered() {
        let s = sample_beta(2, 40, BetaParams::default(), 1).unwrap();
        let recs = records(s, |p| 0.1 + 0.4 * p[0] + 0.2 * p[1]);
        let fit = solve_beta(2, &recs).unwrap();
        assert!((fit.intercept - 0.1).abs() < 1e-12);
        assert!((fit.scores[0] - 0.4).abs() < 1e-12);
        assert!((fit.scores[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_detector_has_zero_slopes() {
        let s = sample_beta(4, 30, BetaParams::default(), 2).unwrap();
        let fit = solve_beta(4, &records(s, |_| 0.3)).unwrap();
        assert!(fit.scores.iter().all(|v| v.abs() < 1e-12));
        assert!((fit.intercept - 0.3).abs() < 1e-12);
    }

    #[test]
    fn product_detector_is_symmetric() {
        let s = sample_beta(2, 2048, BetaParams::default(), 8).unwrap();
        let fit = solve_beta(2, &records(s, |p| p[0] * p[1])).unwrap();
        assert!((fit.scores[0] - fit.scores[1]).abs() <= 0.05, "{:?}", fit.scores);
    }

    #[test]
    fn too_few_samples() {
        let s = sample_beta(6, 4, BetaParams::default(), 0).unwrap();
        assert!(matches!(
            solve_beta(6, &records(s, |_| 0.0)),
            Err(Error::Underdetermined { have: 4, need: 7 })
        ));
    }
}
