//! Canonical annotation model: images, annotators, boxes and annotation sets.
//!
//! Detector predictions and human annotations share [`LabeledBox`]; a
//! prediction carries a `score` and belongs to an annotator of tier
//! [`Tier::Model`].
//!
//! Two input formats are supported. The canonical JSON document is
//! self-describing:
//!
//! ```json
//! {
//!   "images":      [{"id": "img-0", "width": 1200, "height": 800, "source": "sdd"}],
//!   "annotators":  [{"id": "a1", "tier": "professional"}],
//!   "labels":      ["person", "vehicle", "bicycle"],
//!   "boxes":       [{"image_id": "img-0", "annotator_id": "a1", "label": "person",
//!                    "bbox": [10, 20, 30, 40]}],
//!   "assignments": [{"image_id": "img-0", "annotator_id": "a1"}]
//! }
//! ```
//!
//! `bbox` is `[x, y, w, h]` in integer pixels and covers the half-open
//! rectangle `[x, x+w) x [y, y+h)`. The optional `assignments` array records
//! that an annotator processed an image even if they drew nothing there; an
//! annotator with at least one box on an image is always a participant.
//!
//! CSV input (`image_id,annotator_id,label,x,y,w,h,score`) carries boxes only,
//! so it is parsed against a skeleton set supplying images, annotators and the
//! label vocabulary. A row with empty label and coordinates is an assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            source: None,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Annotator experience tier. Metadata only; no computation depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Professional,
    Expert,
    Experienced,
    Novice,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub id: String,
    pub tier: Tier,
}

impl Annotator {
    pub fn new(id: impl Into<String>, tier: Tier) -> Self {
        Self { id: id.into(), tier }
    }
}

/// Integer pixel rectangle covering `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// Number of pixels covered by both boxes.
    pub fn intersection_area(&self, other: &BBox) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            return 0;
        }
        u64::from(x1 - x0) * u64::from(y1 - y0)
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width && self.bottom() <= height
    }

    /// Clamp a raw `[x, y, w, h]` rectangle to an image. Returns `None` when
    /// nothing of the rectangle remains inside the image.
    pub fn clamp_raw(raw: [i64; 4], width: u32, height: u32) -> Option<BBox> {
        let [x, y, w, h] = raw;
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = x.saturating_add(w).min(i64::from(width));
        let y1 = y.saturating_add(h).min(i64::from(height));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}

impl From<[u32; 4]> for BBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        BBox::new(x, y, w, h)
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub image_id: String,
    pub annotator_id: String,
    pub label: String,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl LabeledBox {
    pub fn new(
        image_id: impl Into<String>,
        annotator_id: impl Into<String>,
        label: impl Into<String>,
        bbox: BBox,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            annotator_id: annotator_id.into(),
            label: label.into(),
            bbox,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

/// Record that an annotator processed an image.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub image_id: String,
    pub annotator_id: String,
}

impl Assignment {
    pub fn new(image_id: impl Into<String>, annotator_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            annotator_id: annotator_id.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageRef>,
    pub annotators: Vec<Annotator>,
    pub labels: Vec<String>,
    pub boxes: Vec<LabeledBox>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assignments: Vec<Assignment>,
}

impl AnnotationSet {
    pub fn image(&self, id: &str) -> Option<&ImageRef> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn annotator(&self, id: &str) -> Option<&Annotator> {
        self.annotators.iter().find(|a| a.id == id)
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Annotators that processed each image: explicit assignments plus every
    /// annotator with at least one box on the image. Every image has an entry.
    pub fn participation(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut out: BTreeMap<&str, BTreeSet<&str>> =
            self.images.iter().map(|i| (i.id.as_str(), BTreeSet::new())).collect();
        let pairs = self
            .assignments
            .iter()
            .map(|a| (a.image_id.as_str(), a.annotator_id.as_str()))
            .chain(
                self.boxes
                    .iter()
                    .map(|b| (b.image_id.as_str(), b.annotator_id.as_str())),
            );
        for (image, annotator) in pairs {
            if let Some(set) = out.get_mut(image) {
                set.insert(annotator);
            }
        }
        out
    }

    pub fn participates(&self, image_id: &str, annotator_id: &str) -> bool {
        self.assignments
            .iter()
            .any(|a| a.image_id == image_id && a.annotator_id == annotator_id)
            || self
                .boxes
                .iter()
                .any(|b| b.image_id == image_id && b.annotator_id == annotator_id)
    }

    /// Boxes grouped by image, then by annotator, preserving input order.
    pub fn boxes_by_image(&self) -> HashMap<&str, HashMap<&str, Vec<&LabeledBox>>> {
        let mut out: HashMap<&str, HashMap<&str, Vec<&LabeledBox>>> = HashMap::new();
        for b in &self.boxes {
            out.entry(b.image_id.as_str())
                .or_default()
                .entry(b.annotator_id.as_str())
                .or_default()
                .push(b);
        }
        out
    }

    /// Serialize to the canonical JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation sets always serialize")
    }

    /// Check referential integrity and box bounds of an already-built set.
    pub fn check(&self) -> Result<()> {
        check_vocabulary(&self.labels)?;
        let mut images = HashMap::new();
        for img in &self.images {
            check_image(img)?;
            if images.insert(img.id.as_str(), img).is_some() {
                return Err(Error::Record {
                    record: format!("image `{}`", img.id),
                    message: "duplicate image id".into(),
                });
            }
        }
        let mut annotators = HashSet::new();
        for a in &self.annotators {
            if !annotators.insert(a.id.as_str()) {
                return Err(Error::Record {
                    record: format!("annotator `{}`", a.id),
                    message: "duplicate annotator id".into(),
                });
            }
        }
        for a in &self.assignments {
            if !images.contains_key(a.image_id.as_str()) {
                return Err(Error::Referential(format!(
                    "assignment references unknown image `{}`",
                    a.image_id
                )));
            }
            if !annotators.contains(a.annotator_id.as_str()) {
                return Err(Error::Referential(format!(
                    "assignment references unknown annotator `{}`",
                    a.annotator_id
                )));
            }
        }
        let vocab: HashSet<&str> = self.labels.iter().map(String::as_str).collect();
        for (i, b) in self.boxes.iter().enumerate() {
            let Some(img) = images.get(b.image_id.as_str()) else {
                return Err(Error::Referential(format!(
                    "box {i} references unknown image `{}`",
                    b.image_id
                )));
            };
            if !annotators.contains(b.annotator_id.as_str()) {
                return Err(Error::Referential(format!(
                    "box {i} references unknown annotator `{}`",
                    b.annotator_id
                )));
            }
            if !vocab.contains(b.label.as_str()) {
                return Err(Error::Vocabulary(format!(
                    "box {i} has label `{}` outside vocabulary {:?}",
                    b.label, self.labels
                )));
            }
            if !b.bbox.fits(img.width, img.height) {
                return Err(Error::Record {
                    record: format!("box {i}"),
                    message: format!(
                        "bbox {:?} outside {}x{} image `{}`",
                        <[u32; 4]>::from(b.bbox),
                        img.width,
                        img.height,
                        img.id
                    ),
                });
            }
            check_score(b.score, &format!("box {i}"))?;
        }
        Ok(())
    }
}

fn check_vocabulary(labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Vocabulary("label vocabulary is empty".into()));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::Vocabulary(format!("duplicate label `{l}`")));
        }
    }
    Ok(())
}

fn check_image(img: &ImageRef) -> Result<()> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::Record {
            record: format!("image `{}`", img.id),
            message: "width and height must be positive".into(),
        });
    }
    Ok(())
}

fn check_score(score: Option<f64>, record: &str) -> Result<()> {
    match score {
        Some(s) if !(0.0..=1.0).contains(&s) => Err(Error::Record {
            record: record.to_string(),
            message: format!("score {s} outside [0, 1]"),
        }),
        _ => Ok(()),
    }
}

/// A box that was cut back to its image bounds during parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClampWarning {
    pub record: usize,
    pub image_id: String,
    pub annotator_id: String,
    pub original: [i64; 4],
    pub clamped: BBox,
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub set: AnnotationSet,
    pub warnings: Vec<ClampWarning>,
}

pub enum InputFormat<'a> {
    CanonicalJson,
    /// CSV rows resolved against the images, annotators and labels of
    /// `skeleton`. `map`, when given, is applied to each row's label before
    /// the vocabulary check.
    Csv {
        skeleton: &'a AnnotationSet,
        map: Option<&'a LabelMap>,
    },
}

pub fn parse_annotation_set(payload: &[u8], format: InputFormat<'_>) -> Result<Parsed> {
    match format {
        InputFormat::CanonicalJson => parse_json(payload),
        InputFormat::Csv { skeleton, map } => parse_csv(payload, skeleton, map),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    images: Vec<ImageRef>,
    annotators: Vec<Annotator>,
    labels: Vec<String>,
    boxes: Vec<RawBox>,
    #[serde(default)]
    assignments: Vec<Assignment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    image_id: String,
    annotator_id: String,
    label: String,
    bbox: [i64; 4],
    #[serde(default)]
    score: Option<f64>,
}

pub fn parse_json(payload: &[u8]) -> Result<Parsed> {
    let raw: RawDocument = serde_json::from_slice(payload)?;
    let skeleton = AnnotationSet {
        images: raw.images,
        annotators: raw.annotators,
        labels: raw.labels,
        boxes: Vec::new(),
        assignments: raw.assignments,
    };
    skeleton.check()?;
    let mut linker = Linker::new(skeleton);
    for (i, b) in raw.boxes.into_iter().enumerate() {
        linker.push(
            i,
            &format!("box {i}"),
            b.image_id,
            b.annotator_id,
            b.label,
            b.bbox,
            b.score,
        )?;
    }
    Ok(linker.finish())
}

#[derive(Deserialize)]
struct CsvRow {
    image_id: String,
    annotator_id: String,
    label: String,
    x: Option<i64>,
    y: Option<i64>,
    w: Option<i64>,
    h: Option<i64>,
    #[serde(default)]
    score: Option<f64>,
}

pub fn parse_csv(payload: &[u8], skeleton: &AnnotationSet, map: Option<&LabelMap>) -> Result<Parsed> {
    let mut base = skeleton.clone();
    base.boxes.clear();
    base.check()?;
    let mut linker = Linker::new(base);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(payload);
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(|e| {
            let position = e
                .position()
                .map(|p| format!("record {}, line {}", p.record(), p.line()))
                .unwrap_or_else(|| format!("record {}", i + 1));
            Error::parse(position, e.to_string())
        })?;
        let record = format!("record {} (line {})", i + 1, i + 2);
        let coords = [row.x, row.y, row.w, row.h];
        if row.label.is_empty() && coords.iter().all(Option::is_none) {
            linker.assign(&record, row.image_id, row.annotator_id)?;
            continue;
        }
        let [Some(x), Some(y), Some(w), Some(h)] = coords else {
            return Err(Error::parse(record, "x, y, w and h are required for a box row"));
        };
        let label = match map {
            Some(m) if m.drop.contains(&row.label) => continue,
            Some(m) => m.rename.get(&row.label).cloned().unwrap_or(row.label),
            None => row.label,
        };
        linker.push(i, &record, row.image_id, row.annotator_id, label, [x, y, w, h], row.score)?;
    }
    Ok(linker.finish())
}

/// Resolves raw box records against a checked skeleton, clamping as it goes.
struct Linker {
    set: AnnotationSet,
    dims: HashMap<String, (u32, u32)>,
    annotators: HashSet<String>,
    warnings: Vec<ClampWarning>,
}

impl Linker {
    fn new(set: AnnotationSet) -> Self {
        let dims = set
            .images
            .iter()
            .map(|i| (i.id.clone(), (i.width, i.height)))
            .collect();
        let annotators = set.annotators.iter().map(|a| a.id.clone()).collect();
        Self {
            set,
            dims,
            annotators,
            warnings: Vec::new(),
        }
    }

    fn resolve(&self, record: &str, image_id: &str, annotator_id: &str) -> Result<(u32, u32)> {
        let Some(&dims) = self.dims.get(image_id) else {
            return Err(Error::Referential(format!("{record}: unknown image `{image_id}`")));
        };
        if !self.annotators.contains(annotator_id) {
            return Err(Error::Referential(format!(
                "{record}: unknown annotator `{annotator_id}`"
            )));
        }
        Ok(dims)
    }

    fn assign(&mut self, record: &str, image_id: String, annotator_id: String) -> Result<()> {
        self.resolve(record, &image_id, &annotator_id)?;
        self.set.assignments.push(Assignment {
            image_id,
            annotator_id,
        });
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        index: usize,
        record: &str,
        image_id: String,
        annotator_id: String,
        label: String,
        raw: [i64; 4],
        score: Option<f64>,
    ) -> Result<()> {
        let (width, height) = self.resolve(record, &image_id, &annotator_id)?;
        if self.set.label_index(&label).is_none() {
            return Err(Error::Vocabulary(format!(
                "{record}: label `{label}` not in vocabulary {:?}",
                self.set.labels
            )));
        }
        check_score(score, record)?;
        if raw[2] < 1 || raw[3] < 1 {
            return Err(Error::Record {
                record: record.to_string(),
                message: format!("non-positive box size in {raw:?}"),
            });
        }
        let Some(bbox) = BBox::clamp_raw(raw, width, height) else {
            return Err(Error::Record {
                record: record.to_string(),
                message: format!("box {raw:?} has zero area after clamping to {width}x{height}"),
            });
        };
        if <[u32; 4]>::from(bbox).map(i64::from) != raw {
            self.warnings.push(ClampWarning {
                record: index,
                image_id: image_id.clone(),
                annotator_id: annotator_id.clone(),
                original: raw,
                clamped: bbox,
            });
        }
        self.set.boxes.push(LabeledBox {
            image_id,
            annotator_id,
            label,
            bbox,
            score,
        });
        Ok(())
    }

    fn finish(self) -> Parsed {
        Parsed {
            set: self.set,
            warnings: self.warnings,
        }
    }
}

/// Label renames and removals, e.g. folding a dataset-specific `biker`
/// class into `bicycle`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    #[serde(default)]
    pub rename: BTreeMap<String, String>,
    #[serde(default)]
    pub drop: BTreeSet<String>,
}

impl LabelMap {
    pub fn from_json(payload: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(payload)?)
    }

    pub fn is_empty(&self) -> bool {
        self.rename.is_empty() && self.drop.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MappingStats {
    pub renamed: usize,
    pub dropped: usize,
}

/// Rename and drop labels. The resulting vocabulary is the input vocabulary
/// minus every renamed or dropped label; rename targets must survive in it.
pub fn apply_label_mapping(set: &AnnotationSet, map: &LabelMap) -> Result<(AnnotationSet, MappingStats)> {
    if let Some(both) = map.rename.keys().find(|k| map.drop.contains(*k)) {
        return Err(Error::Config(format!("label `{both}` is both renamed and dropped")));
    }
    let labels: Vec<String> = set
        .labels
        .iter()
        .filter(|l| !map.rename.contains_key(*l) && !map.drop.contains(*l))
        .cloned()
        .collect();
    for (from, to) in &map.rename {
        if !labels.contains(to) {
            return Err(Error::Config(format!(
                "rename target `{to}` (from `{from}`) is not in the final vocabulary {labels:?}"
            )));
        }
    }
    let mut stats = MappingStats::default();
    let mut boxes = Vec::with_capacity(set.boxes.len());
    for b in &set.boxes {
        if map.drop.contains(&b.label) {
            stats.dropped += 1;
            continue;
        }
        let mut b = b.clone();
        if let Some(to) = map.rename.get(&b.label) {
            if *to != b.label {
                stats.renamed += 1;
            }
            b.label = to.clone();
        }
        boxes.push(b);
    }
    // Participation must survive even if every box of an annotator was dropped.
    let mut assignments: BTreeSet<Assignment> = set.assignments.iter().cloned().collect();
    if stats.dropped > 0 {
        for b in &set.boxes {
            assignments.insert(Assignment::new(&b.image_id, &b.annotator_id));
        }
    }
    let out = AnnotationSet {
        images: set.images.clone(),
        annotators: set.annotators.clone(),
        labels,
        boxes,
        assignments: if stats.dropped > 0 {
            assignments.into_iter().collect()
        } else {
            set.assignments.clone()
        },
    };
    Ok((out, stats))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DuplicateWarning {
    pub image_id: String,
    pub annotator_id: String,
    pub label: String,
    pub bbox: BBox,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub image_count: usize,
    pub box_count: usize,
    /// Fraction of images each annotator processed.
    pub coverage: BTreeMap<String, f64>,
    /// Annotators that processed each image.
    pub per_image: BTreeMap<String, Vec<String>>,
    pub duplicates: Vec<DuplicateWarning>,
    pub class_counts: BTreeMap<String, usize>,
}

pub fn validate(set: &AnnotationSet) -> ValidationReport {
    let participation = set.participation();
    let mut report = ValidationReport {
        image_count: set.images.len(),
        box_count: set.boxes.len(),
        ..Default::default()
    };
    for a in &set.annotators {
        let covered = participation.values().filter(|p| p.contains(a.id.as_str())).count();
        let frac = if set.images.is_empty() {
            0.0
        } else {
            covered as f64 / set.images.len() as f64
        };
        report.coverage.insert(a.id.clone(), frac);
    }
    for (image, who) in &participation {
        report
            .per_image
            .insert(image.to_string(), who.iter().map(|s| s.to_string()).collect());
    }
    for l in &set.labels {
        report.class_counts.insert(l.clone(), 0);
    }
    let mut seen: BTreeMap<(&str, &str, &str, [u32; 4]), usize> = BTreeMap::new();
    for b in &set.boxes {
        *report.class_counts.entry(b.label.clone()).or_default() += 1;
        *seen
            .entry((&b.image_id, &b.annotator_id, &b.label, b.bbox.into()))
            .or_default() += 1;
    }
    for ((image_id, annotator_id, label, bbox), count) in seen {
        if count > 1 {
            report.duplicates.push(DuplicateWarning {
                image_id: image_id.to_string(),
                annotator_id: annotator_id.to_string(),
                label: label.to_string(),
                bbox: bbox.into(),
                count,
            });
        }
    }
    report
}
