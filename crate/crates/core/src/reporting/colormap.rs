//! 256-entry colour tables and the score-to-index mapping.

use std::sync::OnceLock;

const BWR: &str = include_str!("../../data/bwr.txt");
const PURPLES: &str = include_str!("../../data/purples.txt");

/// Values at or below this are treated as zero spread by the error map.
pub const ERROR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    table: Vec<[u8; 3]>,
}

impl Colormap {
    fn parse(raw: &str) -> Self {
        let table: Vec<[u8; 3]> = raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let v = u32::from_str_radix(l.trim(), 16).expect("colour table holds hex triples");
                [(v >> 16) as u8, (v >> 8) as u8, v as u8]
            })
            .collect();
        assert_eq!(table.len(), 256, "colour tables have 256 entries");
        Self { table }
    }

    /// Blue, white, red.
    pub fn diverging() -> &'static Colormap {
        static MAP: OnceLock<Colormap> = OnceLock::new();
        MAP.get_or_init(|| Self::parse(BWR))
    }

    /// White to purple.
    pub fn sequential() -> &'static Colormap {
        static MAP: OnceLock<Colormap> = OnceLock::new();
        MAP.get_or_init(|| Self::parse(PURPLES))
    }

    pub fn color(&self, index: u8) -> [u8; 3] {
        self.table[index as usize]
    }
}

/// Linear range a colormap is stretched over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorRange {
    pub lo: f64,
    pub hi: f64,
    /// Index used when the range is empty.
    pub degenerate: u8,
}

impl ColorRange {
    /// `[-a, a]` with `a` the largest absolute score.
    pub fn symmetric(values: &[f64]) -> Self {
        let a = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            lo: -a,
            hi: a,
            degenerate: 128,
        }
    }

    /// `[0, max]`; spreads at or below [`ERROR_FLOOR`] collapse to zero.
    pub fn from_zero(values: &[f64]) -> Self {
        let hi = values.iter().fold(0.0f64, |m, v| m.max(*v));
        Self {
            lo: 0.0,
            hi: if hi <= ERROR_FLOOR { 0.0 } else { hi },
            degenerate: 0,
        }
    }

    /// Index into a 256-entry table; monotone in `value`.
    pub fn index(&self, value: f64) -> u8 {
        let span = self.hi - self.lo;
        if span.is_nan() || span <= 0.0 {
            return self.degenerate;
        }
        let t = ((value - self.lo) / span).clamp(0.0, 1.0);
        (t * 256.0).floor().min(255.0) as u8
    }
}

pub fn hex(color: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", color[0], color[1], color[2])
}
