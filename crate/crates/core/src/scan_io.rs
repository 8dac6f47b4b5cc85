//! SemanticKITTI-compatible scan and label codecs.
//!
//! ```text
//! .bin   : N records of [x:f32][y:f32][z:f32][r:f32], little endian
//! .label : N records of u32 LE, low 16 bits semantic, high 16 bits instance
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::{Error, Result};

const POINT_BYTES: usize = 16;
const LABEL_BYTES: usize = 4;

/// One LiDAR return. Coordinates in meters, reflectance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub r: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, r: f32) -> Self {
        Self { x, y, z, r }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.r.is_finite()
    }

    /// Euclidean range from the sensor origin.
    pub fn depth(&self) -> f64 {
        let (x, y, z) = (self.x as f64, self.y as f64, self.z as f64);
        (x * x + y * y + z * z).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-point semantic class and instance id. Instance 0 means "no instance".
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PointLabels {
    pub semantic: Vec<u32>,
    pub instance: Vec<u32>,
}

impl PointLabels {
    pub fn new(semantic: Vec<u32>, instance: Vec<u32>) -> Result<Self> {
        if semantic.len() != instance.len() {
            return Err(Error::Dimension(format!(
                "{} semantic labels vs {} instance labels",
                semantic.len(),
                instance.len()
            )));
        }
        Ok(Self { semantic, instance })
    }

    pub fn unlabeled(n: usize) -> Self {
        Self {
            semantic: vec![0; n],
            instance: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }
}

pub fn load_scan(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(POINT_BYTES) {
        return Err(Error::MalformedScan { len: bytes.len() });
    }
    let points = bytes
        .chunks_exact(POINT_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            let p = Point::new(f(0), f(1), f(2), f(3));
            if p.is_finite() {
                Ok(p)
            } else {
                Err(Error::InvalidPoint { index })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud { points })
}

pub fn write_scan(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_labels(bytes: &[u8], n: usize) -> Result<PointLabels> {
    if bytes.len() != n * LABEL_BYTES {
        return Err(Error::LabelCount {
            expected: n,
            actual: bytes.len(),
        });
    }
    let (semantic, instance) = bytes
        .chunks_exact(LABEL_BYTES)
        .map(|w| {
            let word = u32::from_le_bytes(w.try_into().unwrap());
            (word & 0xFFFF, word >> 16)
        })
        .unzip();
    Ok(PointLabels { semantic, instance })
}

pub fn write_predictions(labels: &PointLabels) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(labels.len() * LABEL_BYTES);
    for (index, (&semantic, &instance)) in labels.semantic.iter().zip(&labels.instance).enumerate() {
        if semantic > 0xFFFF || instance > 0xFFFF {
            return Err(Error::EncodingOverflow {
                index,
                semantic,
                instance,
            });
        }
        out.extend_from_slice(&(semantic | (instance << 16)).to_le_bytes());
    }
    Ok(out)
}

pub fn read_scan_file(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_scan(&bytes)
}

pub fn read_label_file(path: &Path, n: usize) -> Result<PointLabels> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_labels(&bytes, n)
}

/// Class names plus the thing/stuff partition.
///
/// Text format, one entry per line, `#` starts a comment:
///
/// ```text
/// 0: unlabeled
/// 1: car
/// 9: road
/// things: 1
/// ignore: 0
/// ```
///
/// Every listed class that is neither a thing nor ignored is stuff. When no
/// `ignore:` line is present, class 0 is ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTaxonomy {
    names: BTreeMap<u32, String>,
    things: BTreeSet<u32>,
    ignore: BTreeSet<u32>,
}

impl ClassTaxonomy {
    pub fn new(
        names: BTreeMap<u32, String>,
        things: impl IntoIterator<Item = u32>,
        ignore: impl IntoIterator<Item = u32>,
    ) -> Result<Self> {
        let things: BTreeSet<u32> = things.into_iter().collect();
        let ignore: BTreeSet<u32> = ignore.into_iter().collect();
        if let Some(c) = things.intersection(&ignore).next() {
            return Err(Error::Taxonomy(format!("class {c} is both thing and ignored")));
        }
        if let Some(c) = things.iter().find(|c| !names.contains_key(c)) {
            return Err(Error::Taxonomy(format!("thing class {c} has no name")));
        }
        Ok(Self { names, things, ignore })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut names = BTreeMap::new();
        let mut things = None;
        let mut ignore = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::Taxonomy(format!("line {}: expected `key: value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "things" => things = Some(parse_id_list(value, lineno)?),
                "ignore" => ignore = Some(parse_id_list(value, lineno)?),
                _ => {
                    let id: u32 = key
                        .parse()
                        .map_err(|_| Error::Taxonomy(format!("line {}: bad class id `{key}`", lineno + 1)))?;
                    if names.insert(id, value.to_string()).is_some() {
                        return Err(Error::Taxonomy(format!("duplicate class id {id}")));
                    }
                }
            }
        }
        Self::new(names, things.unwrap_or_default(), ignore.unwrap_or_else(|| vec![0]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The 19-class SemanticKITTI evaluation taxonomy (learning-map ids).
    pub fn semantic_kitti() -> Self {
        const NAMES: [&str; 20] = [
            "unlabeled",
            "car",
            "bicycle",
            "motorcycle",
            "truck",
            "other-vehicle",
            "person",
            "bicyclist",
            "motorcyclist",
            "road",
            "parking",
            "sidewalk",
            "other-ground",
            "building",
            "fence",
            "vegetation",
            "trunk",
            "terrain",
            "pole",
            "traffic-sign",
        ];
        let names = NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u32, n.to_string()))
            .collect();
        Self::new(names, 1..=8, [0]).expect("builtin taxonomy is valid")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, name) in &self.names {
            out.push_str(&format!("{id}: {name}\n"));
        }
        let join = |s: &BTreeSet<u32>| s.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        out.push_str(&format!("things: {}\n", join(&self.things)));
        out.push_str(&format!("ignore: {}\n", join(&self.ignore)));
        out
    }

    pub fn is_thing(&self, class: u32) -> bool {
        self.things.contains(&class)
    }

    pub fn is_stuff(&self, class: u32) -> bool {
        self.names.contains_key(&class) && !self.is_thing(class) && !self.is_ignored(class)
    }

    pub fn is_ignored(&self, class: u32) -> bool {
        self.ignore.contains(&class)
    }

    pub fn name(&self, class: u32) -> Option<&str> {
        self.names.get(&class).map(String::as_str)
    }

    /// Classes that take part in evaluation (things and stuff), ascending.
    pub fn evaluated_classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.names.keys().copied().filter(|c| !self.is_ignored(*c))
    }

    pub fn thing_classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.things.iter().copied()
    }

    pub fn stuff_classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.evaluated_classes().filter(|c| !self.is_thing(*c))
    }
}

fn parse_id_list(value: &str, lineno: usize) -> Result<Vec<u32>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace() || c == '[' || c == ']')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Taxonomy(format!("line {}: bad id `{s}`", lineno + 1)))
        })
        .collect()
}
