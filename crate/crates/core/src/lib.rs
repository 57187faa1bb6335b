//! Per-part relevance scores for black-box object detectors.
//!
//! An image is split into body-part superpixels by a [`SegmentationMap`].
//! Each part is faded between its original pixels and a mask layer
//! according to a presence value, the detector is run on the result, and
//! the quality of the detection is regressed on the presence vector. See
//! [`explain_instance`] for the whole pipeline.

pub mod attribution;
pub mod detector;
pub mod error;
pub mod fixtures;
pub mod masking;
pub mod quality;
pub mod reporting;
pub mod rng;
pub mod segmentation;

pub use attribution::{
    exact_shapley, explain_instance, BetaParams, BootstrapConfig, ExplainConfig, Explanation, ExplanationReport,
    ExplanationResult, Instance, Method, PartScore, PresenceVector, SampleRecord,
};
pub use detector::{Detection, DetectorSpec, SyntheticForm};
pub use error::{Error, ErrorKind, Result};
pub use masking::{Image, MaskingKind, MaskingMethod};
pub use quality::{BBox, MatchOptions};
pub use segmentation::{AbstractionLevel, AbstractionScheme, PartLabel, SegmentationMap};
