//! Dense (weighted) least squares with a ridge fallback.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge strength used when the design is rank deficient or ill-conditioned.
pub const RIDGE_LAMBDA: f64 = 1e-8;
/// Smallest accepted ratio `min |R_ii| / max |R_ii|` of the QR factor.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub coef: Vec<f64>,
    pub regularized: bool,
}

/// Minimises `sum_j w_j (y_j - x_j . beta)^2`. Well-conditioned problems
/// are solved by QR on the row-scaled design; otherwise the normal
/// equations are solved with [`RIDGE_LAMBDA`] added to the diagonal.
pub fn weighted_least_squares(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<LstsqSolution> {
    let (n, k) = design.shape();
    debug_assert_eq!(target.len(), n);
    if k == 0 {
        return Ok(LstsqSolution {
            coef: Vec::new(),
            regularized: false,
        });
    }
    if n == 0 {
        return Err(Error::Underdetermined { have: 0, need: k });
    }
    let mut x = design.clone();
    let mut y = target.clone();
    if let Some(w) = weights {
        debug_assert_eq!(w.len(), n);
        for (j, &wj) in w.iter().enumerate() {
            if !(wj.is_finite() && wj >= 0.0) {
                return Err(Error::Config(format!("regression weight {wj} is not finite")));
            }
            let s = wj.sqrt();
            x.row_mut(j).scale_mut(s);
            y[j] *= s;
        }
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::SingularSystem);
    }

    if n >= k {
        let qr = x.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 && min / max > RANK_TOLERANCE {
            let qty = qr.q().transpose() * &y;
            if let Some(beta) = r.solve_upper_triangular(&qty) {
                if beta.iter().all(|v| v.is_finite()) {
                    return Ok(LstsqSolution {
                        coef: beta.iter().copied().collect(),
                        regularized: false,
                    });
                }
            }
        }
    }

    let mut normal = x.transpose() * &x;
    for i in 0..k {
        normal[(i, i)] += RIDGE_LAMBDA;
    }
    let rhs = x.transpose() * &y;
    let chol = normal.cholesky().ok_or(Error::SingularSystem)?;
    let beta = chol.solve(&rhs);
    if !beta.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(LstsqSolution {
        coef: beta.iter().copied().collect(),
        regularized: true,
    })
}
