//! Colour-coded human figure for aggregated part scores.

use std::fmt::Write as _;

use super::aggregate::PartAggregate;
use super::colormap::{hex, ColorRange, Colormap};
use crate::error::{Error, Result};
use crate::segmentation::AbstractionLevel;

const TEMPLATES: [&str; 3] = [
    include_str!("../../data/pictogram_level1.svg"),
    include_str!("../../data/pictogram_level2.svg"),
    include_str!("../../data/pictogram_level3.svg"),
];

pub fn template(level: AbstractionLevel) -> Result<&'static str> {
    match level.get() {
        l @ 1..=3 => Ok(TEMPLATES[l as usize - 1]),
        l => Err(Error::UnsupportedLevel(l)),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn gradient(cmap: &Colormap) -> String {
    let mut out = String::from("    <linearGradient id=\"scale\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\">\n");
    for i in (0..=255u32).step_by(17) {
        let _ = writeln!(
            out,
            "      <stop offset=\"{:.4}\" stop-color=\"{}\"/>",
            i as f64 / 255.0,
            hex(cmap.color(i as u8))
        );
    }
    out.push_str("    </linearGradient>");
    out
}

fn legend(parts: &[PartAggregate], range: ColorRange) -> String {
    let mut out = String::from("  <g id=\"legend\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#202020\">\n");
    out.push_str("    <rect x=\"190\" y=\"20\" width=\"14\" height=\"120\" fill=\"url(#scale)\" stroke=\"#404040\"/>\n");
    let _ = writeln!(out, "    <text x=\"210\" y=\"28\">{:.4}</text>", range.hi);
    let _ = writeln!(out, "    <text x=\"210\" y=\"84\">{:.4}</text>", (range.lo + range.hi) / 2.0);
    let _ = writeln!(out, "    <text x=\"210\" y=\"140\">{:.4}</text>", range.lo);
    for (i, p) in parts.iter().enumerate() {
        let value = match p.mean {
            Some(m) => format!("{m:.4} (n={})", p.count),
            None => "n/a (n=0)".to_string(),
        };
        let _ = writeln!(
            out,
            "    <text x=\"190\" y=\"{}\">{}: {}</text>",
            164 + 13 * i,
            escape(&p.name),
            value
        );
    }
    out.push_str("  </g>");
    out
}

/// Fills the level's figure with part means on the diverging colormap,
/// symmetric about zero. Parts that were never active are hatched gray.
pub fn render_pictogram(parts: &[PartAggregate], level: AbstractionLevel) -> Result<Vec<u8>> {
    let mut svg = template(level)?.to_string();
    let means: Vec<f64> = parts.iter().filter_map(|p| p.mean).collect();
    let range = ColorRange::symmetric(&means);
    let cmap = Colormap::diverging();
    for p in parts {
        let key = format!("{{{{fill:{}}}}}", p.name);
        if !svg.contains(&key) {
            return Err(Error::PartMismatch(format!(
                "{:?} has no region in the level {} pictogram",
                p.name,
                level.get()
            )));
        }
        let fill = match p.mean {
            Some(m) => format!("fill=\"{}\"", hex(cmap.color(range.index(m)))),
            None => "fill=\"url(#hatch)\"".to_string(),
        };
        svg = svg.replace(&key, &fill);
    }
    if let Some(start) = svg.find("{{fill:") {
        let end = svg[start..].find("}}").map_or(svg.len(), |e| start + e);
        return Err(Error::PartMismatch(format!(
            "no aggregate for pictogram region {}",
            &svg[start + 7..end]
        )));
    }
    svg = svg.replace("{{gradient}}", &gradient(cmap));
    svg = svg.replace("{{legend}}", &legend(parts, range));
    Ok(svg.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::AbstractionScheme;

    fn parts(level: u8, mean: impl Fn(&str) -> Option<f64>) -> Vec<PartAggregate> {
        AbstractionScheme::bodypix()
            .vocabulary(level)
            .unwrap()
            .iter()
            .map(|n| PartAggregate {
                name: n.clone(),
                mean: mean(n),
                count: mean(n).map_or(0, |_| 3),
            })
            .collect()
    }

    fn fill_of(svg: &str, name: &str) -> String {
        let tag = format!("<g id=\"{name}\" fill=\"");
        let start = svg.find(&tag).unwrap() + tag.len();
        svg[start..start + svg[start..].find('"').unwrap()].to_string()
    }

    #[test]
    fn templates_cover_vocabularies() {
        let scheme = AbstractionScheme::bodypix();
        for level in 1..=3 {
            let t = template(AbstractionLevel::new(level).unwrap()).unwrap();
            for name in scheme.vocabulary(level).unwrap() {
                assert!(t.contains(&format!("id=\"{name}\"")), "level {level} lacks {name}");
            }
        }
    }

    #[test]
    fn level_zero_unsupported() {
        assert!(matches!(
            render_pictogram(&[], AbstractionLevel::new(0).unwrap()),
            Err(Error::UnsupportedLevel(0))
        ));
    }

    #[test]
    fn equal_means_color_uniformly() {
        let svg = String::from_utf8(render_pictogram(&parts(3, |_| Some(0.2)), AbstractionLevel::new(3).unwrap()).unwrap()).unwrap();
        let names = ["face", "torso", "left_arm", "right_arm", "left_leg", "right_leg"];
        let fills: Vec<String> = names.iter().map(|n| fill_of(&svg, n)).collect();
        assert!(fills.iter().all(|f| *f == fills[0]));
    }

    #[test]
    fn torso_max_gets_positive_endpoint() {
        let level = AbstractionLevel::new(2).unwrap();
        let aggs = parts(2, |n| Some(if n == "torso" { 0.5 } else { -0.5 }));
        let svg = String::from_utf8(render_pictogram(&aggs, level).unwrap()).unwrap();
        assert_eq!(fill_of(&svg, "torso"), hex(Colormap::diverging().color(255)));
        assert_eq!(fill_of(&svg, "face"), hex(Colormap::diverging().color(0)));
        assert!(svg.contains("0.5000"));
        assert!(svg.contains("-0.5000"));
    }

    #[test]
    fn inactive_parts_hatched() {
        let aggs = parts(1, |n| (n != "left_hand").then_some(0.1));
        let svg = String::from_utf8(render_pictogram(&aggs, AbstractionLevel::new(1).unwrap()).unwrap()).unwrap();
        assert_eq!(fill_of(&svg, "left_hand"), "url(#hatch)");
        assert!(svg.contains("left_hand: n/a (n=0)"));
        assert!(!svg.contains("{{"));
    }

    #[test]
    fn missing_region_rejected() {
        let mut aggs = parts(3, |_| Some(0.1));
        aggs.pop();
        assert!(matches!(
            render_pictogram(&aggs, AbstractionLevel::new(3).unwrap()),
            Err(Error::PartMismatch(_))
        ));
    }
}
