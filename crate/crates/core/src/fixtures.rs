//! Synthetic pedestrians: a textured scene with a 24-part figure, its
//! segmentation and ground-truth box, plus closed-form detectors over them.

use image::Rgb;
use rand::Rng as _;

use crate::attribution::Instance;
use crate::detector::{DetectorSpec, ProductTerm, SyntheticForm};
use crate::masking::Image;
use crate::quality::BBox;
use crate::reporting::convergence::Subject;
use crate::rng;
use crate::segmentation::{bodypix_table, SegmentationMap, BACKGROUND};

/// Level-1 feature index of the torso in a full figure.
pub const INTERACTION_DOMINANT: usize = 7;
/// Level-1 feature index of the face in a full figure.
pub const INTERACTION_FACE: usize = 0;
pub const INTERACTION_PARTS: usize = 14;

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

/// Label of the figure at unit coordinates `(u, v)`; `u` runs left to right
/// across the image, so the person's right side is at small `u`.
fn figure_label(u: f64, v: f64) -> Option<u8> {
    let (du, dv) = ((u - 0.5) / 0.13, (v - 0.09) / 0.085);
    if du * du + dv * dv <= 1.0 {
        return Some(if u < 0.5 { 1 } else { 0 });
    }
    if (0.27..0.73).contains(&u) && (0.19..0.55).contains(&v) {
        return Some(if (0.36..0.64).contains(&u) { 12 } else { 13 });
    }
    for side in [Side::Right, Side::Left] {
        // (inner, outer) edges of the limb column, mirrored per side
        let m = |x: f64| match side {
            Side::Right => x,
            Side::Left => 1.0 - x,
        };
        let within = |a: f64, b: f64| {
            let (lo, hi) = if m(a) < m(b) { (m(a), m(b)) } else { (m(b), m(a)) };
            (lo..hi).contains(&u)
        };
        let inner_half = |a: f64, b: f64| {
            let mid = (a + b) / 2.0;
            within(mid, b)
        };
        let pick = |right: u8, left: u8| match side {
            Side::Right => right,
            Side::Left => left,
        };
        // arms: outer edge 0.12, inner edge 0.26
        if within(0.12, 0.26) {
            if (0.19..0.37).contains(&v) {
                return Some(if inner_half(0.12, 0.26) { pick(4, 2) } else { pick(5, 3) });
            }
            if (0.37..0.53).contains(&v) {
                return Some(if inner_half(0.12, 0.26) { pick(8, 6) } else { pick(9, 7) });
            }
        }
        if within(0.11, 0.27) && (0.53..0.60).contains(&v) {
            return Some(pick(11, 10));
        }
        // legs: outer edge 0.29, inner edge 0.49
        if within(0.29, 0.49) {
            if (0.55..0.76).contains(&v) {
                return Some(if inner_half(0.29, 0.49) { pick(16, 14) } else { pick(17, 15) });
            }
            if (0.76..0.95).contains(&v) {
                return Some(if inner_half(0.29, 0.49) { pick(20, 18) } else { pick(21, 19) });
            }
        }
        if within(0.24, 0.49) && (0.95..=1.0).contains(&v) {
            return Some(pick(23, 22));
        }
    }
    None
}

fn jitter(rng: &mut rng::Rng, base: [u8; 3], amount: i32) -> [u8; 3] {
    base.map(|c| (c as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

fn part_color(label: u8, shirt: [u8; 3], pants: [u8; 3]) -> [u8; 3] {
    let skin = [224, 172, 140];
    let shoes = [45, 40, 38];
    let darker = |c: [u8; 3]| c.map(|x| x.saturating_sub(25));
    match label {
        0 | 1 | 10 | 11 => skin,
        22 | 23 => shoes,
        12 | 2 | 4 | 6 | 8 => shirt,
        13 | 3 | 5 | 7 | 9 => darker(shirt),
        14 | 16 | 18 | 20 => pants,
        _ => darker(pants),
    }
}

/// A `width x height` scene with one full-vocabulary figure.
///
/// The figure spans about 85% of the height; colours, placement and
/// background texture derive from `seed`. Figures need `height >= 48` for
/// every one of the 24 parts to cover at least one pixel.
pub fn pedestrian(name: &str, width: u32, height: u32, seed: u64) -> Instance {
    let mut rng = rng::seeded(seed);
    let fig_h = (height as f64 * rng.random_range(0.8..0.9)).floor();
    let fig_w = (fig_h * 0.45).min(width as f64 - 2.0).floor();
    let x0 = rng.random_range(0.0..=(width as f64 - fig_w)).floor();
    let y0 = rng.random_range(0.0..=(height as f64 - fig_h)).floor();
    let shirt = [rng.random(), rng.random(), rng.random()];
    let pants = [rng.random_range(20..120), rng.random_range(20..120), rng.random_range(40..160)];
    let sky: [u8; 3] = [rng.random_range(120..220), rng.random_range(120..220), rng.random_range(150..250)];
    let ground: [u8; 3] = [rng.random_range(60..140), rng.random_range(60..140), rng.random_range(50..120)];

    let mut labels = Vec::with_capacity((width * height) as usize);
    let mut image = Image::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 + 0.5 - x0) / fig_w;
            let v = (y as f64 + 0.5 - y0) / fig_h;
            let label = if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
                figure_label(u, v)
            } else {
                None
            };
            let color = match label {
                Some(l) => jitter(&mut rng, part_color(l, shirt, pants), 12),
                None => {
                    let t = y as f64 / height as f64;
                    let base = [0, 1, 2].map(|c| ((1.0 - t) * sky[c] as f64 + t * ground[c] as f64) as u8);
                    // vertical stripes give the background some structure
                    let stripe = if (x / 6) % 2 == 0 { 10 } else { 0 };
                    jitter(&mut rng, base.map(|c| c.saturating_add(stripe)), 20)
                }
            };
            image.put_pixel(x, y, Rgb(color));
            labels.push(label.unwrap_or(BACKGROUND));
        }
    }
    let map = SegmentationMap::new(width, height, labels, bodypix_table()).expect("generated labels are canonical");
    let gt = tight_box(&map).expect("figure covers some pixels");
    Instance::new(name, image, map, gt).expect("image and map share dimensions")
}

/// Smallest box around every labelled pixel, in pixel-edge coordinates.
pub fn tight_box(map: &SegmentationMap) -> Option<BBox> {
    let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..map.height() {
        for x in 0..map.width() {
            if map.label_at(x, y) != BACKGROUND {
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
            }
        }
    }
    (x1 != u32::MAX).then(|| BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).expect("non-empty box"))
}

/// `count` pedestrians of varying size, named `ped_000`, `ped_001`, ...
pub fn pedestrian_set(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = rng::seeded(seed);
    (0..count)
        .map(|i| {
            let height = rng.random_range(64..=128u32);
            let width = height / 2 + rng.random_range(8..=24u32);
            pedestrian(&format!("ped_{i:03}"), width, height, rng.random())
        })
        .collect()
}

/// A level-1 quality function with a dominant torso, a strong face,
/// small contributions from every other part and a few interactions.
///
/// Coefficients vary per `seed` by up to 15%; all are positive and the
/// total stays below one, so the clamp never engages.
pub fn interaction_form(seed: u64) -> SyntheticForm {
    let mut rng = rng::seeded(seed);
    let mut scale = |c: f64| c * rng.random_range(0.85..1.15);
    let mut terms = vec![
        ProductTerm { coef: scale(0.30), parts: vec![INTERACTION_DOMINANT] },
        ProductTerm { coef: scale(0.10), parts: vec![INTERACTION_FACE] },
    ];
    for (i, base) in [
        (1, 0.02), (2, 0.02), (3, 0.015), (4, 0.015), (5, 0.01), (6, 0.01),
        (8, 0.03), (9, 0.03), (10, 0.025), (11, 0.025), (12, 0.01), (13, 0.01),
    ] {
        terms.push(ProductTerm { coef: scale(base), parts: vec![i] });
    }
    terms.push(ProductTerm { coef: scale(0.10), parts: vec![INTERACTION_DOMINANT, INTERACTION_FACE] });
    terms.push(ProductTerm { coef: scale(0.08), parts: vec![8, 9] });
    terms.push(ProductTerm { coef: scale(0.05), parts: vec![10, 11] });
    terms.push(ProductTerm { coef: scale(0.04), parts: vec![1, 2, INTERACTION_DOMINANT] });
    let bias = 0.05;
    let total: f64 = terms.iter().map(|t| t.coef).sum::<f64>() + bias;
    if total > 0.95 {
        let f = (0.95 - bias) / (total - bias);
        for t in &mut terms {
            t.coef *= f;
        }
    }
    SyntheticForm::Product { terms, bias }
}

/// Pedestrians paired with their own [`interaction_form`] detector.
pub fn interaction_subjects(count: usize, seed: u64) -> Vec<Subject> {
    pedestrian_set(count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, instance)| Subject {
            instance,
            detector: DetectorSpec::Synthetic(interaction_form(rng::derive_seed(seed, i as u64))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{AbstractionLevel, AbstractionScheme};

    #[test]
    fn every_part_is_present() {
        for inst in pedestrian_set(12, 4) {
            assert_eq!(inst.segmentation.active_parts().len(), 24, "{}", inst.name);
        }
        assert_eq!(pedestrian("small", 30, 48, 9).segmentation.active_parts().len(), 24);
    }

    #[test]
    fn sides_follow_the_viewer_mirror() {
        let inst = pedestrian("p", 64, 128, 0);
        let map = &inst.segmentation;
        let mean_x = |id: u8| {
            let px = map.pixels_of(id);
            px.iter().map(|p| (p % 64) as f64).sum::<f64>() / px.len() as f64
        };
        // the person's right hand appears on the image's left
        assert!(mean_x(11) < mean_x(10));
        assert!(mean_x(1) < mean_x(0));
    }

    #[test]
    fn box_is_tight() {
        let inst = pedestrian("p", 50, 100, 2);
        let b = inst.gt;
        let map = &inst.segmentation;
        let inside = |x: u32, y: u32| map.label_at(x, y) != BACKGROUND;
        assert!((0..map.height()).any(|y| inside(b.x1 as u32, y)));
        assert!((0..map.height()).any(|y| inside(b.x2 as u32 - 1, y)));
        assert!((0..map.width()).any(|x| inside(x, b.y1 as u32)));
        assert!((0..map.width()).any(|x| inside(x, b.y2 as u32 - 1)));
    }

    #[test]
    fn deterministic() {
        assert_eq!(pedestrian_set(3, 1), pedestrian_set(3, 1));
        assert_ne!(pedestrian_set(1, 1)[0].image, pedestrian_set(1, 2)[0].image);
    }

    #[test]
    fn interaction_indices_match_level_one() {
        let vocab = AbstractionScheme::bodypix().vocabulary(1).unwrap().to_vec();
        assert_eq!(vocab.len(), INTERACTION_PARTS);
        assert_eq!(vocab[INTERACTION_DOMINANT], "torso");
        assert_eq!(vocab[INTERACTION_FACE], "face");
        let map = AbstractionScheme::bodypix()
            .remap(&pedestrian("p", 60, 120, 0).segmentation, AbstractionLevel::new(1).unwrap())
            .unwrap();
        assert_eq!(map.active_parts().len(), INTERACTION_PARTS);
    }

    #[test]
    fn interaction_form_stays_unclamped() {
        for seed in 0..50 {
            let form = interaction_form(seed);
            let full = form.raw_value(&[1.0; INTERACTION_PARTS]).unwrap();
            assert!(full <= 0.95 + 1e-12 && full > 0.5);
            assert!((form.raw_value(&[0.0; INTERACTION_PARTS]).unwrap() - 0.05).abs() < 1e-12);
        }
    }
}
