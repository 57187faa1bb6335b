//! Inputs shared by the benchmarks.

use spx_core::attribution::{sample_beta, sample_coalitions, SampleRecord, SampleWeight};
use spx_core::detector::SyntheticForm;
use spx_core::fixtures;
use spx_core::BetaParams;

/// Quality function of the level-1 interaction fixture.
pub fn interaction() -> SyntheticForm {
    fixtures::interaction_form(0)
}

/// KernelSHAP records for `form` at `budget`, with the endpoint qualities.
pub fn kernel_records(form: &SyntheticForm, parts: usize, budget: usize) -> (Vec<SampleRecord>, f64, f64) {
    let set = sample_coalitions(parts, budget, 0).expect("valid budget");
    let records = set
        .vectors
        .iter()
        .zip(set.weights())
        .map(|(v, weight)| SampleRecord {
            q: form.value(v).expect("presence fits the form"),
            presence: v.clone(),
            weight,
        })
        .collect();
    let q_empty = form.value(&vec![0.0; parts]).expect("empty coalition");
    let q_full = form.value(&vec![1.0; parts]).expect("full coalition");
    (records, q_empty, q_full)
}

pub fn beta_records(form: &SyntheticForm, parts: usize, n: usize) -> Vec<SampleRecord> {
    sample_beta(parts, n, BetaParams::default(), 0)
        .expect("valid draw")
        .into_iter()
        .map(|p| SampleRecord {
            q: form.value(&p).expect("presence fits the form"),
            presence: p,
            weight: SampleWeight::Finite(1.0),
        })
        .collect()
}
