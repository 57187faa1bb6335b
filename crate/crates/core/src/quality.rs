//! Detection quality: DICE of the best-matching box times its score.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox(format!("[{x1}, {y1}, {x2}, {y2}]")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Ground-truth annotation file, `{"gt_bbox": [x1, y1, x2, y2]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub gt_bbox: BBox,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Sørensen-Dice coefficient of two boxes.
pub fn dice(a: &BBox, b: &BBox) -> f64 {
    2.0 * a.intersection_area(b) / (a.area() + b.area())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub value: f64,
    pub matched_index: Option<usize>,
}

impl QualityScore {
    pub const NONE: QualityScore = QualityScore {
        value: 0.0,
        matched_index: None,
    };
}

/// Candidate filtering before matching.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    /// Detections scoring below this are ignored.
    pub min_score: f64,
    /// When set, only detections with this label are candidates.
    pub label: Option<String>,
}

/// Picks the detection with the largest DICE against `gt` and returns
/// `DICE * score`. Equal DICE prefers the higher score, then the lower index.
pub fn match_and_score(detections: &[Detection], gt: &BBox, opts: &MatchOptions) -> QualityScore {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, det) in detections.iter().enumerate() {
        if det.score < opts.min_score {
            continue;
        }
        if opts.label.as_deref().is_some_and(|l| l != det.label) {
            continue;
        }
        let d = dice(&det.bbox, gt);
        let better = match best {
            None => true,
            Some((_, bd, bs)) => d > bd || (d == bd && det.score > bs),
        };
        if better {
            best = Some((i, d, det.score));
        }
    }
    match best {
        Some((i, d, s)) => QualityScore {
            value: d * s,
            matched_index: Some(i),
        },
        None => QualityScore::NONE,
    }
}
