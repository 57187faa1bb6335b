//! Per-part colour overlays on a grayscale copy of the input image.

use std::io::Cursor;

use image::ImageFormat;

use super::colormap::{ColorRange, Colormap};
use crate::attribution::ExplanationResult;
use crate::error::{Error, Result};
use crate::masking::Image;
use crate::segmentation::SegmentationMap;

/// Opacity of the part colour over the grayscale base.
pub const OVERLAY_ALPHA: f64 = 0.6;

/// A rendered overlay plus the colour assigned to each part.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub image: Image,
    pub range: ColorRange,
    /// `(part id, colour index)` in result order.
    pub part_colors: Vec<(u8, u8)>,
    /// Smallest and largest value that was coloured.
    pub extrema: (f64, f64),
}

impl RelevanceMap {
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.image.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)?;
        Ok(out)
    }
}

fn gray(p: [u8; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

fn check_parts(map: &SegmentationMap, result: &ExplanationResult) -> Result<()> {
    if result.scores.len() != result.parts.len() {
        return Err(Error::PartMismatch(format!(
            "result has {} scores for {} parts",
            result.scores.len(),
            result.parts.len()
        )));
    }
    for part in &result.parts {
        match map.part(part.id) {
            Some(p) if p.name == part.name => {}
            _ => {
                return Err(Error::PartMismatch(format!(
                    "part {} ({}) is not in the segmentation",
                    part.id, part.name
                )))
            }
        }
    }
    Ok(())
}

fn overlay(
    image: &Image,
    map: &SegmentationMap,
    result: &ExplanationResult,
    values: &[f64],
    range: ColorRange,
    cmap: &Colormap,
) -> Result<RelevanceMap> {
    if image.dimensions() != (map.width(), map.height()) {
        return Err(Error::DimensionMismatch(format!(
            "image is {:?}, segmentation is {}x{}",
            image.dimensions(),
            map.width(),
            map.height()
        )));
    }
    check_parts(map, result)?;
    let mut lut: [Option<[u8; 3]>; 256] = [None; 256];
    let mut part_colors = Vec::with_capacity(values.len());
    for (part, &v) in result.parts.iter().zip(values) {
        let idx = range.index(v);
        lut[part.id as usize] = Some(cmap.color(idx));
        part_colors.push((part.id, idx));
    }
    let mut out = image.clone();
    for (pixel, &label) in out.pixels_mut().zip(map.labels()) {
        let g = gray(pixel.0);
        pixel.0 = match lut[label as usize] {
            Some(c) => c.map(|c| (OVERLAY_ALPHA * c as f64 + (1.0 - OVERLAY_ALPHA) * g).round() as u8),
            None => [g.round() as u8; 3],
        };
    }
    let extrema = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    Ok(RelevanceMap {
        image: out,
        range,
        part_colors,
        extrema,
    })
}

/// Scores on the diverging colormap, symmetric about zero.
pub fn relevance_map(image: &Image, map: &SegmentationMap, result: &ExplanationResult) -> Result<RelevanceMap> {
    let range = ColorRange::symmetric(&result.scores);
    overlay(image, map, result, &result.scores, range, Colormap::diverging())
}

/// Bootstrap standard deviations on the sequential colormap.
pub fn error_map(image: &Image, map: &SegmentationMap, result: &ExplanationResult) -> Result<RelevanceMap> {
    let errors = result.errors.as_ref().ok_or(Error::MissingErrors)?;
    if errors.len() != result.parts.len() {
        return Err(Error::PartMismatch(format!(
            "{} errors for {} parts",
            errors.len(),
            result.parts.len()
        )));
    }
    let range = ColorRange::from_zero(errors);
    overlay(image, map, result, errors, range, Colormap::sequential())
}

pub fn render_relevance_map(image: &Image, map: &SegmentationMap, result: &ExplanationResult) -> Result<Vec<u8>> {
    relevance_map(image, map, result)?.to_png()
}

pub fn render_error_map(image: &Image, map: &SegmentationMap, result: &ExplanationResult) -> Result<Vec<u8>> {
    error_map(image, map, result)?.to_png()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::Method;
    use crate::segmentation::{PartLabel, BACKGROUND};
    use image::Rgb;

    fn fixture() -> (Image, SegmentationMap) {
        let table = vec![PartLabel::new(0, "a"), PartLabel::new(1, "b"), PartLabel::new(2, "c")];
        let labels = vec![0, 0, 1, 1, BACKGROUND, 2, 2, BACKGROUND];
        let map = SegmentationMap::new(4, 2, labels, table).unwrap();
        let image = Image::from_fn(4, 2, |x, y| Rgb([(x * 60) as u8, (y * 100) as u8, 30]));
        (image, map)
    }

    fn result(scores: Vec<f64>, errors: Option<Vec<f64>>) -> ExplanationResult {
        ExplanationResult {
            method: Method::BetaSampling,
            parts: vec![PartLabel::new(0, "a"), PartLabel::new(1, "b"), PartLabel::new(2, "c")],
            scores,
            intercept: 0.0,
            errors,
            n_samples: 8,
            seed: 0,
            regularized: false,
        }
    }

    #[test]
    fn zero_scores_use_midpoint() {
        let (image, map) = fixture();
        let r = relevance_map(&image, &map, &result(vec![0.0; 3], None)).unwrap();
        assert!(r.part_colors.iter().all(|(_, i)| *i == 128));
    }

    #[test]
    fn max_part_hits_positive_end() {
        let (image, map) = fixture();
        let r = relevance_map(&image, &map, &result(vec![0.1, 0.7, -0.2], None)).unwrap();
        assert_eq!(r.part_colors[1], (1, 255));
        assert_eq!(r.extrema, (-0.2, 0.7));
        let red = Colormap::diverging().color(255);
        let px = r.image.get_pixel(2, 0).0;
        let g = gray(image.get_pixel(2, 0).0);
        for c in 0..3 {
            assert_eq!(px[c], (0.6 * red[c] as f64 + 0.4 * g).round() as u8);
        }
    }

    #[test]
    fn background_is_plain_gray() {
        let (image, map) = fixture();
        let r = relevance_map(&image, &map, &result(vec![0.3, 0.1, 0.2], None)).unwrap();
        let g = gray(image.get_pixel(0, 1).0).round() as u8;
        assert_eq!(r.image.get_pixel(0, 1).0, [g; 3]);
    }

    #[test]
    fn renders_are_deterministic() {
        let (image, map) = fixture();
        let res = result(vec![0.3, -0.1, 0.2], Some(vec![0.01, 0.02, 0.0]));
        assert_eq!(
            render_relevance_map(&image, &map, &res).unwrap(),
            render_relevance_map(&image, &map, &res).unwrap()
        );
        assert_eq!(
            render_error_map(&image, &map, &res).unwrap(),
            render_error_map(&image, &map, &res).unwrap()
        );
    }

    #[test]
    fn negligible_errors_are_blank() {
        let (image, map) = fixture();
        let r = error_map(&image, &map, &result(vec![0.3, 0.1, 0.2], Some(vec![1e-12, 0.0, 8e-10]))).unwrap();
        assert!(r.part_colors.iter().all(|(_, i)| *i == 0));
    }

    #[test]
    fn missing_errors_rejected() {
        let (image, map) = fixture();
        assert!(matches!(
            render_error_map(&image, &map, &result(vec![0.0; 3], None)),
            Err(Error::MissingErrors)
        ));
    }

    #[test]
    fn foreign_part_rejected() {
        let (image, map) = fixture();
        let mut res = result(vec![0.0; 3], None);
        res.parts[2] = PartLabel::new(7, "z");
        assert!(matches!(
            render_relevance_map(&image, &map, &res),
            Err(Error::PartMismatch(_))
        ));
    }
}
