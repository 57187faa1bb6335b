//! Body-part segmentation maps and abstraction-level remapping.
//!
//! A [`SegmentationMap`] is a single-byte label grid plus a table naming each
//! label. Label `255` marks pixels that belong to no part. The map is the
//! bridge between pixel space and the feature space of the explanation: each
//! active part becomes one coordinate of the presence vector, in ascending
//! label order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid value for pixels outside every part.
pub const BACKGROUND: u8 = 255;

/// The 24 BodyPix part names, indexed by their label id.
pub const BODYPIX_PARTS: [&str; 24] = [
    "left_face",
    "right_face",
    "left_upper_arm_front",
    "left_upper_arm_back",
    "right_upper_arm_front",
    "right_upper_arm_back",
    "left_lower_arm_front",
    "left_lower_arm_back",
    "right_lower_arm_front",
    "right_lower_arm_back",
    "left_hand",
    "right_hand",
    "torso_front",
    "torso_back",
    "left_upper_leg_front",
    "left_upper_leg_back",
    "right_upper_leg_front",
    "right_upper_leg_back",
    "left_lower_leg_front",
    "left_lower_leg_back",
    "right_lower_leg_front",
    "right_lower_leg_back",
    "left_feet",
    "right_feet",
];

const LEVEL1_TABLE: &str = include_str!("../data/level1.json");
const LEVEL2_TABLE: &str = include_str!("../data/level2.json");
const LEVEL3_TABLE: &str = include_str!("../data/level3.json");

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartLabel {
    pub id: u8,
    pub name: String,
}

impl PartLabel {
    pub fn new(id: u8, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
        }
    }
}

/// A visible part together with its pixel count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivePart {
    pub label: PartLabel,
    pub area: usize,
}

/// Sidecar JSON of a segmentation PNG: `{"labels": {"<id>": "<name>"}}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LabelFile {
    pub labels: BTreeMap<String, String>,
}

impl LabelFile {
    pub fn from_table(table: &[PartLabel]) -> Self {
        Self {
            labels: table
                .iter()
                .map(|p| (p.id.to_string(), p.name.clone()))
                .collect(),
        }
    }

    pub fn into_table(self) -> Result<Vec<PartLabel>> {
        let mut table = self
            .labels
            .into_iter()
            .map(|(id, name)| {
                let id: u8 = id
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidSegmentation(format!("bad label id {id:?}")))?;
                Ok(PartLabel { id, name })
            })
            .collect::<Result<Vec<_>>>()?;
        table.sort_by_key(|p| p.id);
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    width: u32,
    height: u32,
    labels: Vec<u8>,
    table: Vec<PartLabel>,
}

impl SegmentationMap {
    /// Validates a row-major label grid against its label table.
    pub fn new(width: u32, height: u32, labels: Vec<u8>, mut table: Vec<PartLabel>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "segmentation must be non-empty, got {width}x{height}"
            )));
        }
        if labels.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} grid",
                labels.len()
            )));
        }
        table.sort_by_key(|p| p.id);
        let mut names = HashSet::new();
        for (i, part) in table.iter().enumerate() {
            if part.id == BACKGROUND {
                return Err(Error::InvalidSegmentation(
                    "label 255 is reserved for background".into(),
                ));
            }
            if i > 0 && table[i - 1].id == part.id {
                return Err(Error::InvalidSegmentation(format!(
                    "label {} listed twice",
                    part.id
                )));
            }
            if !names.insert(part.name.as_str()) {
                return Err(Error::InvalidSegmentation(format!(
                    "part name {:?} listed twice",
                    part.name
                )));
            }
        }
        let mut known = [false; 256];
        for part in &table {
            known[part.id as usize] = true;
        }
        known[BACKGROUND as usize] = true;
        if let Some(&bad) = labels.iter().find(|&&l| !known[l as usize]) {
            return Err(Error::UnknownLabel(bad));
        }
        Ok(Self {
            width,
            height,
            labels,
            table,
        })
    }

    /// Decodes an 8-bit single-channel PNG plus its label table.
    pub fn from_png(png: &[u8], table: Vec<PartLabel>) -> Result<Self> {
        let img = image::load_from_memory_with_format(png, ImageFormat::Png)?;
        let gray = match img {
            DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::InvalidSegmentation(format!(
                    "expected 8-bit grayscale PNG, got {:?}",
                    other.color()
                )))
            }
        };
        let (w, h) = gray.dimensions();
        Self::new(w, h, gray.into_raw(), table)
    }

    /// Loads `<name>.png` and its sidecar; the sidecar defaults to the PNG
    /// path with a `.json` extension.
    pub fn load(png_path: &Path, labels_path: Option<&Path>) -> Result<Self> {
        let sidecar = labels_path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| png_path.with_extension("json"));
        let file: LabelFile = serde_json::from_slice(&std::fs::read(&sidecar)?)?;
        Self::from_png(&std::fs::read(png_path)?, file.into_table()?)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let gray = GrayImage::from_raw(self.width, self.height, self.labels.clone())
            .expect("grid length checked at construction");
        let mut out = Vec::new();
        gray.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)?;
        Ok(out)
    }

    /// Writes the PNG and its `.json` sidecar.
    pub fn save(&self, png_path: &Path) -> Result<()> {
        std::fs::write(png_path, self.to_png()?)?;
        let sidecar = serde_json::to_vec_pretty(&LabelFile::from_table(&self.table))?;
        std::fs::write(png_path.with_extension("json"), sidecar)?;
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn table(&self) -> &[PartLabel] {
        &self.table
    }

    pub fn label_at(&self, x: u32, y: u32) -> u8 {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn part(&self, id: u8) -> Option<&PartLabel> {
        self.table.iter().find(|p| p.id == id)
    }

    /// Row-major indices of every pixel carrying `id`.
    pub fn pixels_of(&self, id: u8) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == id).then_some(i))
            .collect()
    }

    pub fn background_pixels(&self) -> Vec<usize> {
        self.pixels_of(BACKGROUND)
    }

    /// Parts with at least one pixel, ascending by label id. This order
    /// defines the coordinates of every presence vector for the map.
    pub fn active_parts(&self) -> Vec<ActivePart> {
        let mut counts = [0usize; 256];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        self.table
            .iter()
            .filter(|p| counts[p.id as usize] > 0)
            .map(|p| ActivePart {
                label: p.clone(),
                area: counts[p.id as usize],
            })
            .collect()
    }

    /// 4-connected part adjacency.
    pub fn adjacency(&self) -> Adjacency {
        let mut pairs = BTreeSet::new();
        let (w, h) = (self.width as usize, self.height as usize);
        for y in 0..h {
            for x in 0..w {
                let a = self.labels[y * w + x];
                if a == BACKGROUND {
                    continue;
                }
                let right = (x + 1 < w).then(|| self.labels[y * w + x + 1]);
                let down = (y + 1 < h).then(|| self.labels[(y + 1) * w + x]);
                for b in [right, down].into_iter().flatten() {
                    if b != BACKGROUND && b != a {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        Adjacency { pairs }
    }
}

/// Symmetric, irreflexive relation over part ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    pairs: BTreeSet<(u8, u8)>,
}

impl Adjacency {
    pub fn contains(&self, a: u8, b: u8) -> bool {
        self.pairs.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, id: u8) -> Vec<u8> {
        self.pairs
            .iter()
            .filter_map(|&(a, b)| {
                if a == id {
                    Some(b)
                } else if b == id {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Unordered pairs with the smaller id first.
    pub fn pairs(&self) -> impl Iterator<Item = (u8, u8)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AbstractionLevel(u8);

impl AbstractionLevel {
    pub const MAX: u8 = 3;

    pub fn new(level: u8) -> Result<Self> {
        if level > Self::MAX {
            return Err(Error::UnsupportedLevel(level));
        }
        Ok(Self(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for AbstractionLevel {
    type Error = Error;

    fn try_from(level: u8) -> Result<Self> {
        Self::new(level)
    }
}

impl From<AbstractionLevel> for u8 {
    fn from(level: AbstractionLevel) -> u8 {
        level.0
    }
}

/// One merge step, `{"level": n, "merge": {"<src>": "<dst>"}}`. Level `n`
/// maps the names of level `n - 1` onto the names of level `n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeTable {
    pub level: u8,
    pub merge: BTreeMap<String, String>,
}

/// A base vocabulary and its chain of merge tables.
#[derive(Debug, Clone)]
pub struct AbstractionScheme {
    vocabularies: Vec<Vec<String>>,
    tables: Vec<MergeTable>,
}

impl AbstractionScheme {
    /// The BodyPix vocabulary with the bundled level 1-3 tables.
    pub fn bodypix() -> Self {
        let tables = [LEVEL1_TABLE, LEVEL2_TABLE, LEVEL3_TABLE]
            .iter()
            .map(|raw| serde_json::from_str(raw).expect("bundled merge table is valid"))
            .collect();
        let base = BODYPIX_PARTS.iter().map(|s| s.to_string()).collect();
        Self::new(base, tables).expect("bundled merge tables are consistent")
    }

    /// Builds a scheme from a base vocabulary and tables for levels 1, 2, ...
    pub fn new(base: Vec<String>, mut tables: Vec<MergeTable>) -> Result<Self> {
        tables.sort_by_key(|t| t.level);
        let mut vocabularies = vec![base];
        for (i, table) in tables.iter().enumerate() {
            if table.level as usize != i + 1 {
                return Err(Error::Config(format!(
                    "merge tables must cover levels 1..={} contiguously",
                    tables.len()
                )));
            }
            let prev = &vocabularies[i];
            let mut next: Vec<String> = Vec::new();
            for name in prev {
                let dst = table.merge.get(name).ok_or_else(|| {
                    Error::Config(format!("level {} table lacks {name:?}", table.level))
                })?;
                if !next.contains(dst) {
                    next.push(dst.clone());
                }
            }
            vocabularies.push(next);
        }
        Ok(Self {
            vocabularies,
            tables,
        })
    }

    pub fn max_level(&self) -> u8 {
        self.tables.len() as u8
    }

    /// Part names at `level`, in feature order.
    pub fn vocabulary(&self, level: u8) -> Result<&[String]> {
        self.vocabularies
            .get(level as usize)
            .map(Vec::as_slice)
            .ok_or(Error::UnsupportedLevel(level))
    }

    /// Maps a name from any level `<= level` onto the vocabulary of `level`.
    pub fn resolve(&self, name: &str, level: u8) -> Option<&str> {
        let start = (0..=level as usize)
            .find(|&k| self.vocabularies.get(k).is_some_and(|v| v.iter().any(|n| n == name)))?;
        let mut current = self.vocabularies[start]
            .iter()
            .find(|n| *n == name)?
            .as_str();
        for table in &self.tables[start..level as usize] {
            current = table.merge.get(current)?.as_str();
        }
        Some(current)
    }

    pub fn remap(&self, map: &SegmentationMap, level: AbstractionLevel) -> Result<SegmentationMap> {
        let level = level.get();
        if level > self.max_level() {
            return Err(Error::UnsupportedLevel(level));
        }
        if level == 0 {
            return Ok(map.clone());
        }
        let vocab = self.vocabulary(level)?;
        let new_id: HashMap<&str, u8> = vocab
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i as u8))
            .collect();
        let mut lut = [BACKGROUND; 256];
        for part in map.table() {
            let target = self
                .resolve(&part.name, level)
                .ok_or_else(|| Error::NonCanonicalLabel(part.name.clone()))?;
            lut[part.id as usize] = new_id[target];
        }
        let labels = map.labels().iter().map(|&l| lut[l as usize]).collect();
        let table = vocab
            .iter()
            .enumerate()
            .map(|(i, n)| PartLabel::new(i as u8, n.clone()))
            .collect();
        SegmentationMap::new(map.width(), map.height(), labels, table)
    }
}

/// The canonical BodyPix table (ids 0..24).
pub fn bodypix_table() -> Vec<PartLabel> {
    BODYPIX_PARTS
        .iter()
        .enumerate()
        .map(|(i, n)| PartLabel::new(i as u8, *n))
        .collect()
}

/// Remaps a BodyPix-labelled map onto the merged vocabulary of `level`.
pub fn remap_abstraction(map: &SegmentationMap, level: AbstractionLevel) -> Result<SegmentationMap> {
    AbstractionScheme::bodypix().remap(map, level)
}
