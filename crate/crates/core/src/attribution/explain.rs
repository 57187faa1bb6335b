//! End-to-end explanation of one instance: masks, samples, detector calls,
//! quality scoring and regression.

use std::borrow::Cow;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::beta::{sample_beta, BetaParams};
use super::bootstrap::{bootstrap_errors, BootstrapConfig, BootstrapSolver};
use super::kernel::{sample_coalitions, solve_kernelshap};
use super::{ExplanationResult, Method, PresenceVector, SampleRecord, SampleWeight};
use crate::detector::DetectorSpec;
use crate::error::{Error, Result};
use crate::masking::{apply_presence, build_mask_layers, Image, MaskLayer, MaskingKind, MaskingMethod};
use crate::quality::{match_and_score, BBox, GroundTruth, MatchOptions};
use crate::rng::derive_seed;
use crate::segmentation::{AbstractionLevel, AbstractionScheme, LabelFile, PartLabel, SegmentationMap};

/// An image, its level-0 segmentation and the box of the pedestrian.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub image: Image,
    pub segmentation: SegmentationMap,
    pub gt: BBox,
}

impl Instance {
    pub fn new(name: impl Into<String>, image: Image, segmentation: SegmentationMap, gt: BBox) -> Result<Self> {
        if image.dimensions() != (segmentation.width(), segmentation.height()) {
            return Err(Error::DimensionMismatch(format!(
                "image is {:?}, segmentation is {}x{}",
                image.dimensions(),
                segmentation.width(),
                segmentation.height()
            )));
        }
        Ok(Self {
            name: name.into(),
            image,
            segmentation,
            gt,
        })
    }

    /// Reads `image.png`, `segmentation.png` (+ `segmentation.json`) and
    /// `gt.json` from an instance directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::load(
            name,
            &dir.join("image.png"),
            &dir.join("segmentation.png"),
            None,
            &dir.join("gt.json"),
        )
    }

    pub fn load(
        name: impl Into<String>,
        image: &Path,
        segmentation: &Path,
        labels: Option<&Path>,
        gt: &Path,
    ) -> Result<Self> {
        let img = image::open(image)?.to_rgb8();
        let seg = SegmentationMap::load(segmentation, labels)?;
        let gt = GroundTruth::load(gt)?.gt_bbox;
        Self::new(name, img, seg, gt)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.image.save(dir.join("image.png"))?;
        self.segmentation.save(&dir.join("segmentation.png"))?;
        let gt = GroundTruth { gt_bbox: self.gt };
        std::fs::write(dir.join("gt.json"), serde_json::to_vec(&gt)?)?;
        Ok(())
    }

    /// Digest of everything the explanation depends on.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.image.width().to_le_bytes());
        h.update(self.image.height().to_le_bytes());
        h.update(self.image.as_raw());
        h.update(self.segmentation.labels());
        h.update(
            serde_json::to_vec(&LabelFile::from_table(self.segmentation.table()))
                .expect("label table serialises"),
        );
        for v in <[f64; 4]>::from(self.gt) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub method: Method,
    pub masking: MaskingKind,
    pub level: AbstractionLevel,
    pub n_samples: usize,
    pub seed: u64,
    pub beta: BetaParams,
    pub bootstrap: BootstrapConfig,
    /// Redraw noise layers for every sample instead of once per instance.
    pub resample_noise: bool,
    pub matching: MatchOptions,
    /// Evaluation threads; never affects the output.
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            method: Method::BetaSampling,
            masking: MaskingKind::Inpaint,
            level: AbstractionLevel::new(0).expect("level 0"),
            n_samples: 64,
            seed: 0,
            beta: BetaParams::default(),
            bootstrap: BootstrapConfig::default(),
            resample_noise: false,
            matching: MatchOptions::default(),
            workers: 1,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.method == Method::ExactOracle {
            return Err(Error::Config("the exact oracle is not a sampling method".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        BetaParams::new(self.beta.alpha, self.beta.beta)?;
        self.bootstrap.validate()
    }

    /// Stable digest of the configuration, detector and instance content.
    pub fn hash(&self, detector: &DetectorSpec, instance: &Instance) -> String {
        let canonical = serde_json::json!({
            "config": self,
            "detector": detector.to_string(),
            "instance": instance.digest(),
        });
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical).expect("config serialises"));
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartScore {
    pub id: u8,
    pub name: String,
    pub score: f64,
    pub error: Option<f64>,
}

/// Serialised form of an explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub method: Method,
    pub abstraction: u8,
    pub masking: MaskingKind,
    pub n_samples: usize,
    pub seed: u64,
    pub parts: Vec<PartScore>,
    pub intercept: f64,
    pub q_full: f64,
    pub q_empty: f64,
    pub config_hash: String,
    #[serde(default)]
    pub instance: String,
    /// Quality of the untouched image; equals `q_full` when masking at full
    /// presence is the identity.
    #[serde(default)]
    pub q_original: Option<f64>,
    #[serde(default)]
    pub regularized: bool,
    #[serde(default)]
    pub exact_enumeration: bool,
}

impl ExplanationReport {
    pub fn to_result(&self) -> ExplanationResult {
        let errors = self
            .parts
            .iter()
            .map(|p| p.error)
            .collect::<Option<Vec<f64>>>()
            .filter(|_| !self.parts.is_empty());
        ExplanationResult {
            method: self.method,
            parts: self
                .parts
                .iter()
                .map(|p| PartLabel::new(p.id, p.name.clone()))
                .collect(),
            scores: self.parts.iter().map(|p| p.score).collect(),
            intercept: self.intercept,
            errors,
            n_samples: self.n_samples,
            seed: self.seed,
            regularized: self.regularized,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub result: ExplanationResult,
    pub report: ExplanationReport,
    /// The segmentation at the configured abstraction level.
    pub map: SegmentationMap,
    pub records: Vec<SampleRecord>,
}

struct Evaluator<'a> {
    instance: &'a Instance,
    map: &'a SegmentationMap,
    detector: &'a DetectorSpec,
    layers: Option<Vec<MaskLayer>>,
    noise: Option<MaskingMethod>,
    matching: &'a MatchOptions,
}

impl Evaluator<'_> {
    fn quality(
        &self,
        handle: &mut crate::detector::DetectorHandle,
        index: usize,
        presence: &[f64],
    ) -> Result<f64> {
        let image = match (&self.layers, self.noise) {
            (Some(layers), _) => {
                Cow::Owned(apply_presence(&self.instance.image, self.map, layers, presence)?)
            }
            (None, Some(method)) => {
                let seed = derive_seed(method.seed().unwrap_or(0), index as u64);
                let layers = build_mask_layers(
                    &self.instance.image,
                    self.map,
                    MaskingMethod::new(method.kind(), seed),
                )?;
                Cow::Owned(apply_presence(&self.instance.image, self.map, &layers, presence)?)
            }
            // synthetic detectors only read the presence vector
            (None, None) => Cow::Borrowed(&self.instance.image),
        };
        let detections = handle.detect(&image, presence)?;
        Ok(match_and_score(&detections, &self.instance.gt, self.matching).value)
    }

    fn run_worker(&self, rows: &[PresenceVector], worker: usize, workers: usize) -> Result<Vec<(usize, f64)>> {
        let mut handle = self.detector.open(self.instance.gt)?;
        (worker..rows.len())
            .step_by(workers)
            .map(|i| Ok((i, self.quality(&mut handle, i, &rows[i])?)))
            .collect()
    }

    /// Quality of every row, in row order, for any worker count.
    fn evaluate(&self, rows: &[PresenceVector], workers: usize) -> Result<Vec<f64>> {
        let workers = workers.clamp(1, rows.len().max(1));
        let chunks: Vec<Result<Vec<(usize, f64)>>> = if workers == 1 {
            vec![self.run_worker(rows, 0, 1)]
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| s.spawn(move || self.run_worker(rows, w, workers)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("evaluation worker panicked"))
                    .collect()
            })
        };
        let mut q = vec![0.0; rows.len()];
        for chunk in chunks {
            for (i, v) in chunk? {
                q[i] = v;
            }
        }
        Ok(q)
    }
}

/// Explains one instance with the configured estimator.
pub fn explain_instance(
    instance: &Instance,
    detector: &DetectorSpec,
    config: &ExplainConfig,
) -> Result<Explanation> {
    config.validate()?;
    let map = AbstractionScheme::bodypix().remap(&instance.segmentation, config.level)?;
    let parts: Vec<PartLabel> = map.active_parts().into_iter().map(|p| p.label).collect();
    let m = parts.len();
    if m == 0 {
        return Err(Error::NoActiveParts);
    }

    let mask_seed = derive_seed(config.seed, 0);
    let sample_seed = derive_seed(config.seed, 1);
    let boot_seed = derive_seed(config.seed, 2);

    let method = MaskingMethod::new(config.masking, mask_seed);
    let noise = (detector.needs_image() && config.resample_noise && config.masking.is_noise())
        .then_some(method);
    let layers = if detector.needs_image() && noise.is_none() {
        Some(build_mask_layers(&instance.image, &map, method)?)
    } else {
        None
    };

    let ones = PresenceVector(vec![1.0; m]);
    let zeros = PresenceVector(vec![0.0; m]);
    let (rows, weights, exact) = match config.method {
        Method::KernelShap => {
            let set = sample_coalitions(m, config.n_samples, sample_seed)?;
            let weights = set.weights();
            (set.vectors, weights, set.exact)
        }
        Method::BetaSampling => {
            let mut rows = vec![ones.clone(), zeros.clone()];
            rows.extend(sample_beta(m, config.n_samples, config.beta, sample_seed)?);
            let mut weights = vec![SampleWeight::Constraint; 2];
            weights.resize(rows.len(), SampleWeight::Finite(1.0));
            (rows, weights, false)
        }
        Method::ExactOracle => unreachable!("rejected by validate"),
    };
    debug_assert!(rows[0] == ones && rows[1] == zeros);

    let evaluator = Evaluator {
        instance,
        map: &map,
        detector,
        layers,
        noise,
        matching: &config.matching,
    };
    let q = evaluator.evaluate(&rows, config.workers)?;
    let (q_full, q_empty) = (q[0], q[1]);
    let q_original = {
        let mut handle = detector.open(instance.gt)?;
        let dets = handle.detect(&instance.image, &ones)?;
        match_and_score(&dets, &instance.gt, &config.matching).value
    };
    if q_original != q_full {
        log::warn!(
            "{}: quality at full presence ({q_full}) differs from the original image ({q_original})",
            instance.name
        );
    }

    let records: Vec<SampleRecord> = rows
        .into_iter()
        .zip(weights)
        .zip(q)
        .map(|((presence, weight), q)| SampleRecord { presence, weight, q })
        .collect();

    let (scores, intercept, errors, regularized) = match config.method {
        Method::KernelShap => {
            let fit = solve_kernelshap(m, &records, q_empty, q_full)?;
            let solver = BootstrapSolver::KernelShap { q_empty, q_full };
            let errors = match bootstrap_errors(m, &records, solver, config.bootstrap, boot_seed) {
                Ok(b) => Some(b.stds),
                Err(e @ (Error::Underdetermined { .. } | Error::SingularSystem)) => {
                    log::warn!("{}: no bootstrap errors: {e}", instance.name);
                    None
                }
                Err(e) => return Err(e),
            };
            (fit.scores, fit.intercept, errors, fit.regularized)
        }
        _ => {
            let boot = bootstrap_errors(m, &records, BootstrapSolver::Beta, config.bootstrap, boot_seed)?;
            (boot.means, boot.intercept, Some(boot.stds), boot.regularized)
        }
    };

    let result = ExplanationResult {
        method: config.method,
        parts: parts.clone(),
        scores,
        intercept,
        errors,
        n_samples: config.n_samples,
        seed: config.seed,
        regularized,
    };
    let report = ExplanationReport {
        method: config.method,
        abstraction: config.level.get(),
        masking: config.masking,
        n_samples: config.n_samples,
        seed: config.seed,
        parts: parts
            .iter()
            .enumerate()
            .map(|(i, p)| PartScore {
                id: p.id,
                name: p.name.clone(),
                score: result.scores[i],
                error: result.errors.as_ref().map(|e| e[i]),
            })
            .collect(),
        intercept,
        q_full,
        q_empty,
        config_hash: config.hash(detector, instance),
        instance: instance.name.clone(),
        q_original: Some(q_original),
        regularized,
        exact_enumeration: exact,
    };
    Ok(Explanation {
        result,
        report,
        map,
        records,
    })
}
