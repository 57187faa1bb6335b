//! Hiding parts of an image.
//!
//! Each active part gets a [`MaskLayer`]: replacement content for exactly the
//! pixels of that part. A presence vector then blends the original image with
//! the layers, pixel by pixel: `round(p * original + (1 - p) * layer)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::segmentation::{SegmentationMap, BACKGROUND};

pub type Image = image::RgbImage;

/// Diagonal loading added to every fitted covariance.
pub const COVARIANCE_EPSILON: f64 = 1e-6;
pub const INPAINT_MAX_ITERATIONS: usize = 500;
pub const INPAINT_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingKind {
    /// Noise drawn from the colour distribution of the background.
    #[serde(rename = "noise")]
    RemainingNoise,
    /// Noise drawn from the colour distribution of adjacent parts.
    #[serde(rename = "neighbor")]
    NeighborNoise,
    /// Diffusion fill with every part removed.
    Inpaint,
}

impl MaskingKind {
    pub const ALL: [MaskingKind; 3] = [
        MaskingKind::RemainingNoise,
        MaskingKind::NeighborNoise,
        MaskingKind::Inpaint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskingKind::RemainingNoise => "noise",
            MaskingKind::NeighborNoise => "neighbor",
            MaskingKind::Inpaint => "inpaint",
        }
    }

    pub fn is_noise(self) -> bool {
        !matches!(self, MaskingKind::Inpaint)
    }
}

impl fmt::Display for MaskingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(MaskingKind::RemainingNoise),
            "neighbor" => Ok(MaskingKind::NeighborNoise),
            "inpaint" => Ok(MaskingKind::Inpaint),
            other => Err(Error::Config(format!(
                "unknown masking {other:?} (expected noise|neighbor|inpaint)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskingMethod {
    RemainingNoise { seed: u64 },
    NeighborNoise { seed: u64 },
    Inpaint,
}

impl MaskingMethod {
    pub fn new(kind: MaskingKind, seed: u64) -> Self {
        match kind {
            MaskingKind::RemainingNoise => MaskingMethod::RemainingNoise { seed },
            MaskingKind::NeighborNoise => MaskingMethod::NeighborNoise { seed },
            MaskingKind::Inpaint => MaskingMethod::Inpaint,
        }
    }

    pub fn kind(self) -> MaskingKind {
        match self {
            MaskingMethod::RemainingNoise { .. } => MaskingKind::RemainingNoise,
            MaskingMethod::NeighborNoise { .. } => MaskingKind::NeighborNoise,
            MaskingMethod::Inpaint => MaskingKind::Inpaint,
        }
    }

    pub fn seed(self) -> Option<u64> {
        match self {
            MaskingMethod::RemainingNoise { seed } | MaskingMethod::NeighborNoise { seed } => {
                Some(seed)
            }
            MaskingMethod::Inpaint => None,
        }
    }
}

/// Multivariate normal over RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub mean: [f64; 3],
    /// Population covariance plus [`COVARIANCE_EPSILON`] on the diagonal.
    pub covariance: [[f64; 3]; 3],
    factor: Matrix3<f64>,
}

impl NoiseModel {
    pub fn sample(&self, rng: &mut rng::Rng) -> [u8; 3] {
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let x = Vector3::from(self.mean) + self.factor * z;
        [to_byte(x[0]), to_byte(x[1]), to_byte(x[2])]
    }
}

fn to_byte(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Mean and covariance of the RGB values at `pixels` (row-major indices).
pub fn fit_noise_model(image: &Image, pixels: &[usize]) -> Result<NoiseModel> {
    if pixels.is_empty() {
        return Err(Error::EmptyPixelSet);
    }
    let raw = image.as_raw();
    let n = pixels.len() as f64;
    let mut mean = [0.0; 3];
    for &p in pixels {
        for c in 0..3 {
            mean[c] += raw[3 * p + c] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = [[0.0; 3]; 3];
    for &p in pixels {
        let d: [f64; 3] = std::array::from_fn(|c| raw[3 * p + c] as f64 - mean[c]);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for (i, row) in cov.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= n;
        }
        row[i] += COVARIANCE_EPSILON;
    }
    let m = Matrix3::from_fn(|i, j| cov[i][j]);
    let factor = m
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::SingularSystem)?;
    Ok(NoiseModel {
        mean,
        covariance: cov,
        factor,
    })
}

/// Replacement content for the pixels of one part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskLayer {
    pub part: u8,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub colors: Vec<[u8; 3]>,
}

fn check_dims(image: &Image, map: &SegmentationMap) -> Result<()> {
    if image.dimensions() != (map.width(), map.height()) {
        return Err(Error::DimensionMismatch(format!(
            "image is {:?}, segmentation is {}x{}",
            image.dimensions(),
            map.width(),
            map.height()
        )));
    }
    Ok(())
}

fn noise_layer(model: &NoiseModel, part: u8, pixels: Vec<usize>, seed: u64) -> MaskLayer {
    let mut rng = rng::stream(seed, part as u64);
    let colors = pixels.iter().map(|_| model.sample(&mut rng)).collect();
    MaskLayer {
        part,
        pixels,
        colors,
    }
}

fn background_model(image: &Image, map: &SegmentationMap) -> Result<NoiseModel> {
    let bg = map.background_pixels();
    if bg.is_empty() {
        return Err(Error::NoBackgroundPixels);
    }
    fit_noise_model(image, &bg)
}

fn neighbor_model(image: &Image, map: &SegmentationMap, part: u8) -> Result<NoiseModel> {
    let neighbors = map.adjacency().neighbors(part);
    let mut pixels: Vec<usize> = neighbors.iter().flat_map(|&n| map.pixels_of(n)).collect();
    if pixels.is_empty() {
        return background_model(image, map);
    }
    pixels.sort_unstable();
    fit_noise_model(image, &pixels)
}

/// Builds the layer for a single part.
pub fn build_mask_layer(
    image: &Image,
    map: &SegmentationMap,
    part: u8,
    method: MaskingMethod,
) -> Result<MaskLayer> {
    check_dims(image, map)?;
    let pixels = map.pixels_of(part);
    if part == BACKGROUND || pixels.is_empty() {
        return Err(Error::PartAbsent(part));
    }
    match method {
        MaskingMethod::RemainingNoise { seed } => {
            Ok(noise_layer(&background_model(image, map)?, part, pixels, seed))
        }
        MaskingMethod::NeighborNoise { seed } => {
            Ok(noise_layer(&neighbor_model(image, map, part)?, part, pixels, seed))
        }
        MaskingMethod::Inpaint => {
            let filled = inpaint_parts(image, map)?;
            Ok(crop_layer(&filled, part, pixels))
        }
    }
}

/// Builds layers for every active part, in active-part order. The inpaint
/// fill and the background noise model are computed once and shared.
pub fn build_mask_layers(
    image: &Image,
    map: &SegmentationMap,
    method: MaskingMethod,
) -> Result<Vec<MaskLayer>> {
    check_dims(image, map)?;
    let parts = map.active_parts();
    match method {
        MaskingMethod::RemainingNoise { seed } => {
            let model = background_model(image, map)?;
            Ok(parts
                .iter()
                .map(|p| noise_layer(&model, p.label.id, map.pixels_of(p.label.id), seed))
                .collect())
        }
        MaskingMethod::NeighborNoise { seed } => parts
            .iter()
            .map(|p| {
                let model = neighbor_model(image, map, p.label.id)?;
                Ok(noise_layer(&model, p.label.id, map.pixels_of(p.label.id), seed))
            })
            .collect(),
        MaskingMethod::Inpaint => {
            let filled = inpaint_parts(image, map)?;
            Ok(parts
                .iter()
                .map(|p| crop_layer(&filled, p.label.id, map.pixels_of(p.label.id)))
                .collect())
        }
    }
}

fn crop_layer(filled: &Image, part: u8, pixels: Vec<usize>) -> MaskLayer {
    let raw = filled.as_raw();
    let colors = pixels
        .iter()
        .map(|&p| [raw[3 * p], raw[3 * p + 1], raw[3 * p + 2]])
        .collect();
    MaskLayer {
        part,
        pixels,
        colors,
    }
}

/// Fills every part pixel by Laplacian diffusion from the background.
pub fn inpaint_parts(image: &Image, map: &SegmentationMap) -> Result<Image> {
    let unknown: Vec<bool> = map.labels().iter().map(|&l| l != BACKGROUND).collect();
    inpaint_diffusion(image, &unknown)
}

/// Gauss-Seidel diffusion into the `unknown` pixels. Unknown pixels start at
/// the mean of the known pixels bordering the region; iteration stops after
/// [`INPAINT_MAX_ITERATIONS`] sweeps or once no channel moves by
/// [`INPAINT_TOLERANCE`] or more.
pub fn inpaint_diffusion(image: &Image, unknown: &[bool]) -> Result<Image> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    debug_assert_eq!(unknown.len(), w * h);
    let raw = image.as_raw();
    let mut values: Vec<[f64; 3]> = (0..w * h)
        .map(|p| std::array::from_fn(|c| raw[3 * p + c] as f64))
        .collect();

    let neighbors = |p: usize| {
        let (x, y) = (p % w, p / w);
        [
            (x > 0).then(|| p - 1),
            (x + 1 < w).then(|| p + 1),
            (y > 0).then(|| p - w),
            (y + 1 < h).then(|| p + w),
        ]
        .into_iter()
        .flatten()
    };

    let targets: Vec<usize> = (0..w * h).filter(|&p| unknown[p]).collect();
    if targets.is_empty() {
        return Ok(image.clone());
    }
    if targets.len() == w * h {
        return Err(Error::NoBackgroundPixels);
    }

    let mut ring = vec![false; w * h];
    for &p in &targets {
        for q in neighbors(p) {
            if !unknown[q] {
                ring[q] = true;
            }
        }
    }
    let mut seed_color = [0.0; 3];
    let mut count = 0.0;
    for (p, _) in ring.iter().enumerate().filter(|(_, &r)| r) {
        for c in 0..3 {
            seed_color[c] += values[p][c];
        }
        count += 1.0;
    }
    seed_color.iter_mut().for_each(|v| *v /= count);
    for &p in &targets {
        values[p] = seed_color;
    }

    for _ in 0..INPAINT_MAX_ITERATIONS {
        let mut max_change: f64 = 0.0;
        for &p in &targets {
            let mut acc = [0.0; 3];
            let mut k = 0.0;
            for q in neighbors(p) {
                for c in 0..3 {
                    acc[c] += values[q][c];
                }
                k += 1.0;
            }
            for c in 0..3 {
                let v = acc[c] / k;
                max_change = max_change.max((v - values[p][c]).abs());
                values[p][c] = v;
            }
        }
        if max_change < INPAINT_TOLERANCE {
            break;
        }
    }

    let mut out = image.clone();
    let buf: &mut [u8] = &mut out;
    for &p in &targets {
        for c in 0..3 {
            buf[3 * p + c] = to_byte(values[p][c]);
        }
    }
    Ok(out)
}

/// Blends `image` with `layers` according to `presence`; `layers[i]` is the
/// layer for the i-th active part and `presence[i]` its presence value.
pub fn apply_presence(
    image: &Image,
    map: &SegmentationMap,
    layers: &[MaskLayer],
    presence: &[f64],
) -> Result<Image> {
    check_dims(image, map)?;
    if presence.len() != layers.len() {
        return Err(Error::LengthMismatch {
            expected: layers.len(),
            got: presence.len(),
        });
    }
    if let Some(bad) = presence.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("presence value {bad} outside [0, 1]")));
    }
    let mut out = image.clone();
    let buf: &mut [u8] = &mut out;
    for (layer, &p) in layers.iter().zip(presence) {
        if p == 1.0 {
            continue;
        }
        for (&px, color) in layer.pixels.iter().zip(&layer.colors) {
            for c in 0..3 {
                let orig = buf[3 * px + c] as f64;
                buf[3 * px + c] = to_byte(p * orig + (1.0 - p) * color[c] as f64);
            }
        }
    }
    Ok(out)
}
