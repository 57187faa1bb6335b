//! Exact Shapley values by enumerating every coalition.

use crate::error::{Error, Result};

pub const MAX_EXACT_PARTS: usize = 20;

/// `phi_i = sum_{S not containing i} |S|! (M-|S|-1)! / M! * (v(S+i) - v(S))`.
///
/// `value` is called once per coalition with a 0/1 presence slice.
pub fn exact_shapley<F>(parts: usize, mut value: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if parts > MAX_EXACT_PARTS {
        return Err(Error::TooManyParts {
            parts,
            limit: MAX_EXACT_PARTS,
        });
    }
    if parts == 0 {
        return Ok(Vec::new());
    }
    let count = 1usize << parts;
    let mut buf = vec![0.0; parts];
    let values: Vec<f64> = (0..count)
        .map(|mask| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = ((mask >> i) & 1) as f64;
            }
            value(&buf)
        })
        .collect();

    // |S|!(M-|S|-1)!/M! = 1 / (M * C(M-1, |S|))
    let mut binom = vec![1.0f64; parts];
    for s in 1..parts {
        binom[s] = binom[s - 1] * (parts - s) as f64 / s as f64;
    }
    let coef: Vec<f64> = binom.iter().map(|c| 1.0 / (parts as f64 * c)).collect();

    let mut phi = vec![0.0; parts];
    for (mask, &v) in values.iter().enumerate() {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask & (1 << i) == 0 {
                *p += coef[size] * (values[mask | (1 << i)] - v);
            }
        }
    }
    Ok(phi)
}
