//! Krippendorff's alpha with the nominal difference function.
//!
//! `alpha = 1 - D_o / D_e`, where
//!
//! * `D_o = sum_{x != x'} o[x][x']` over the coincidence matrix `o`, and
//! * `D_e = 1/(n-1) * sum_{x != x'} n_x * n_x'` over its marginals.
//!
//! Each unit rated by `m_u >= 2` raters adds `1/(m_u - 1)` to `o[c][c']`
//! for every ordered pair of values `(c, c')` coming from distinct raters.
//! Units with fewer than two values are not pairable and are skipped.
//!
//! Pixel observation matrices use a bit-parallel path: for binary values the
//! off-diagonal coincidence mass equals the number of disagreeing rater pairs
//! (one popcount per rater pair) divided by `m - 1`, and the diagonal follows
//! from the marginals. [`RatingTable`] covers arbitrary nominal data by
//! per-unit value counting, and [`brute_force_alpha`] enumerates rater pairs
//! directly as an independent check on both.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{AnnotationSet, ImageRef, LabeledBox};
use crate::error::{Error, Result};
use crate::raster::{build_observation_matrix, rasterize, restrict_to_class, ObservationMatrix, Observation};
use crate::rng;

/// Anything that can present its units as rows of optional nominal values.
pub trait Ratings {
    fn rater_count(&self) -> usize;
    fn category_count(&self) -> usize;
    /// Call `f` once per unit with one entry per rater (`None` = missing).
    fn for_each_unit(&self, f: &mut dyn FnMut(&[Option<u32>]));
}

impl Ratings for ObservationMatrix {
    fn rater_count(&self) -> usize {
        self.raters.len()
    }

    fn category_count(&self) -> usize {
        2
    }

    fn for_each_unit(&self, f: &mut dyn FnMut(&[Option<u32>])) {
        let mut row = vec![None; self.raters.len()];
        for unit in self.units() {
            for (r, v) in row.iter_mut().enumerate() {
                *v = match self.value(unit, r) {
                    Observation::Missing => None,
                    Observation::Unlabeled => Some(0),
                    Observation::Labeled => Some(1),
                };
            }
            f(&row);
        }
    }
}

/// Dense units x raters table of nominal values.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    raters: usize,
    categories: usize,
    values: Vec<Option<u32>>,
}

impl RatingTable {
    pub fn new(raters: usize, categories: usize) -> Self {
        Self {
            raters,
            categories,
            values: Vec::new(),
        }
    }

    /// Build from per-rater value columns of equal length.
    pub fn from_columns(columns: &[Vec<Option<u32>>], categories: usize) -> Result<Self> {
        let units = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != units) {
            return Err(Error::Consistency("rater columns differ in length".into()));
        }
        let mut table = Self::new(columns.len(), categories);
        for u in 0..units {
            table.push_unit(columns.iter().map(|c| c[u]).collect())?;
        }
        Ok(table)
    }

    pub fn push_unit(&mut self, row: Vec<Option<u32>>) -> Result<()> {
        if row.len() != self.raters {
            return Err(Error::Consistency(format!(
                "unit has {} values for {} raters",
                row.len(),
                self.raters
            )));
        }
        if let Some(v) = row.iter().flatten().find(|v| **v as usize >= self.categories) {
            return Err(Error::Consistency(format!(
                "value {v} outside {} categories",
                self.categories
            )));
        }
        self.values.extend(row);
        Ok(())
    }

    pub fn unit_count(&self) -> usize {
        self.values.len().checked_div(self.raters).unwrap_or(0)
    }

    pub fn unit(&self, u: usize) -> &[Option<u32>] {
        &self.values[u * self.raters..(u + 1) * self.raters]
    }

    /// Coincidences by per-unit value counting: a unit with `k_c` values of
    /// category `c` contributes `k_c * k_c' / (m_u - 1)` off the diagonal and
    /// `k_c * (k_c - 1) / (m_u - 1)` on it.
    pub fn coincidence(&self) -> Result<CoincidenceMatrix> {
        let k = self.categories;
        let mut cm = CoincidenceMatrix::zeros(k);
        let mut counts = vec![0u64; k];
        for u in 0..self.unit_count() {
            counts.iter_mut().for_each(|c| *c = 0);
            let mut m = 0u64;
            for v in self.unit(u).iter().flatten() {
                counts[*v as usize] += 1;
                m += 1;
            }
            if m < 2 {
                cm.skipped_units += 1;
                continue;
            }
            cm.pairable_units += 1;
            let w = 1.0 / (m - 1) as f64;
            for a in 0..k {
                if counts[a] == 0 {
                    continue;
                }
                for b in 0..k {
                    let pairs = if a == b {
                        counts[a] * (counts[a] - 1)
                    } else {
                        counts[a] * counts[b]
                    };
                    cm.o[a][b] += pairs as f64 * w;
                }
            }
        }
        cm.finish()
    }
}

impl Ratings for RatingTable {
    fn rater_count(&self) -> usize {
        self.raters
    }

    fn category_count(&self) -> usize {
        self.categories
    }

    fn for_each_unit(&self, f: &mut dyn FnMut(&[Option<u32>])) {
        for u in 0..self.unit_count() {
            f(self.unit(u));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidenceMatrix {
    /// `o[x][x']`, symmetric.
    pub o: Vec<Vec<f64>>,
    /// `n_x = sum_x' o[x][x']`.
    pub marginals: Vec<f64>,
    /// Total pairable values `n`.
    pub total: f64,
    pub pairable_units: u64,
    pub skipped_units: u64,
}

impl CoincidenceMatrix {
    fn zeros(k: usize) -> Self {
        Self {
            o: vec![vec![0.0; k]; k],
            marginals: vec![0.0; k],
            total: 0.0,
            pairable_units: 0,
            skipped_units: 0,
        }
    }

    fn finish(mut self) -> Result<Self> {
        if self.pairable_units == 0 {
            return Err(Error::InsufficientData(format!(
                "no unit has two or more values ({} units skipped)",
                self.skipped_units
            )));
        }
        self.marginals = self.o.iter().map(|row| row.iter().sum()).collect();
        self.total = self.marginals.iter().sum();
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaResult {
    pub alpha: f64,
    pub observed: f64,
    pub expected: f64,
    pub unit_count: u64,
    pub rater_count: usize,
    /// Expected disagreement is zero: every pairable value is identical.
    pub degenerate: bool,
}

pub fn alpha_from_coincidence(cm: &CoincidenceMatrix) -> Result<AlphaResult> {
    if cm.total < 2.0 {
        return Err(Error::InsufficientData(format!(
            "{} pairable values, need at least 2",
            cm.total
        )));
    }
    let k = cm.o.len();
    let mut observed = 0.0;
    let mut chance = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                observed += cm.o[a][b];
                chance += cm.marginals[a] * cm.marginals[b];
            }
        }
    }
    let expected = chance / (cm.total - 1.0);
    let degenerate = expected == 0.0;
    let alpha = if degenerate { 1.0 } else { 1.0 - observed / expected };
    Ok(AlphaResult {
        alpha,
        observed,
        expected,
        unit_count: cm.pairable_units,
        rater_count: 0,
        degenerate,
    })
}

/// Per-rater labeled counts and per-pair disagreement counts of one binary
/// observation matrix over its retained units. Enough to derive the
/// coincidence matrix for any subset of raters without touching pixels again.
#[derive(Debug, Clone)]
pub struct PairCounts {
    pub raters: Vec<String>,
    pub present: Vec<bool>,
    pub units: u64,
    labeled: Vec<u64>,
    disagree: Vec<u64>,
}

impl PairCounts {
    pub fn from_matrix(m: &ObservationMatrix) -> Self {
        let r = m.raters.len();
        let mask = m.mask();
        let masked: Vec<Option<Vec<u64>>> = (0..r)
            .map(|i| {
                m.rater_bits(i)
                    .map(|bits| bits.iter().zip(mask).map(|(b, k)| b & k).collect())
            })
            .collect();
        let labeled = masked
            .iter()
            .map(|v| v.as_ref().map_or(0, |w| w.iter().map(|x| u64::from(x.count_ones())).sum()))
            .collect();
        let mut disagree = vec![0u64; r * r];
        for i in 0..r {
            let Some(a) = &masked[i] else { continue };
            for j in i + 1..r {
                let Some(b) = &masked[j] else { continue };
                let d: u64 = a.iter().zip(b).map(|(x, y)| u64::from((x ^ y).count_ones())).sum();
                disagree[i * r + j] = d;
                disagree[j * r + i] = d;
            }
        }
        Self {
            raters: m.raters.clone(),
            present: (0..r).map(|i| !m.is_missing(i)).collect(),
            units: m.unit_count() as u64,
            labeled,
            disagree,
        }
    }

    /// Number of present raters among `include`.
    pub fn participants(&self, include: &[bool]) -> usize {
        self.present.iter().zip(include).filter(|(p, i)| **p && **i).count()
    }

    pub fn coincidence(&self, include: &[bool]) -> Result<CoincidenceMatrix> {
        let r = self.raters.len();
        let idx: Vec<usize> = (0..r).filter(|&i| self.present[i] && include[i]).collect();
        let m = idx.len() as u64;
        let mut cm = CoincidenceMatrix::zeros(2);
        if m < 2 {
            cm.skipped_units = self.units;
            return cm.finish();
        }
        cm.pairable_units = self.units;
        let n = (m * self.units) as f64;
        let n1: u64 = idx.iter().map(|&i| self.labeled[i]).sum();
        let mut pairs = 0u64;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                pairs += self.disagree[i * r + j];
            }
        }
        let off = pairs as f64 / (m - 1) as f64;
        let n1 = n1 as f64;
        cm.o = vec![vec![(n - n1) - off, off], vec![off, n1 - off]];
        cm.finish()
    }

    pub fn alpha(&self, include: &[bool]) -> Result<AlphaResult> {
        let cm = self.coincidence(include)?;
        let mut res = alpha_from_coincidence(&cm)?;
        res.rater_count = self.participants(include);
        Ok(res)
    }

    pub fn alpha_all(&self) -> Result<AlphaResult> {
        self.alpha(&vec![true; self.raters.len()])
    }
}

/// Coincidence matrix of a pixel observation matrix (bit-parallel path).
/// Category 0 is unlabeled, 1 is labeled.
pub fn accumulate_coincidence(matrix: &ObservationMatrix) -> Result<CoincidenceMatrix> {
    PairCounts::from_matrix(matrix).coincidence(&vec![true; matrix.raters.len()])
}

pub fn alpha_of_matrix(matrix: &ObservationMatrix) -> Result<AlphaResult> {
    PairCounts::from_matrix(matrix).alpha_all()
}

/// Reference alpha by explicit enumeration: `D_o` sums `delta/(m_u - 1)` over
/// every ordered pair of distinct raters within every unit; `D_e` compares
/// each pooled pairable value against every other pooled value. Quadratic in
/// raters per unit; intended for small instances and tests.
pub fn brute_force_alpha<R: Ratings + ?Sized>(ratings: &R) -> Result<AlphaResult> {
    let mut observed = 0.0;
    let mut pooled: Vec<u32> = Vec::new();
    let mut pairable = 0u64;
    let mut skipped = 0u64;
    ratings.for_each_unit(&mut |row| {
        let present: Vec<u32> = row.iter().flatten().copied().collect();
        let m = present.len();
        if m < 2 {
            skipped += 1;
            return;
        }
        pairable += 1;
        let mut disagreeing = 0u64;
        for (i, a) in present.iter().enumerate() {
            for (j, b) in present.iter().enumerate() {
                if i != j && a != b {
                    disagreeing += 1;
                }
            }
        }
        observed += disagreeing as f64 / (m - 1) as f64;
        pooled.extend(present);
    });
    if pairable == 0 {
        return Err(Error::InsufficientData(format!(
            "no unit has two or more values ({skipped} units skipped)"
        )));
    }
    let n = pooled.len();
    let mut tally: HashMap<u32, u64> = HashMap::new();
    for v in &pooled {
        *tally.entry(*v).or_default() += 1;
    }
    let differing: u64 = pooled.iter().map(|v| n as u64 - tally[v]).sum();
    let expected = differing as f64 / (n - 1) as f64;
    let degenerate = expected == 0.0;
    Ok(AlphaResult {
        alpha: if degenerate { 1.0 } else { 1.0 - observed / expected },
        observed,
        expected,
        unit_count: pairable,
        rater_count: ratings.rater_count(),
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementBand {
    VeryGood,
    Good,
    BelowGood,
}

impl std::fmt::Display for AgreementBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgreementBand::VeryGood => "very good",
            AgreementBand::Good => "good",
            AgreementBand::BelowGood => "below good",
        })
    }
}

pub const GOOD_ALPHA: f64 = 0.67;
pub const VERY_GOOD_ALPHA: f64 = 0.8;

pub fn classify_alpha(alpha: f64) -> AgreementBand {
    if alpha >= VERY_GOOD_ALPHA {
        AgreementBand::VeryGood
    } else if alpha >= GOOD_ALPHA {
        AgreementBand::Good
    } else {
        AgreementBand::BelowGood
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementConfig {
    pub drop_fraction: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<String>,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        Self {
            drop_fraction: 0.2,
            seed: 0,
            class: None,
            excluded: Vec::new(),
        }
    }
}

impl AgreementConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Seed of the unit-drop stream of one image. Independent of image order.
    pub fn image_seed(&self, image_id: &str) -> u64 {
        rng::derive_seed(self.seed, image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageAlpha {
    Computed(AlphaResult),
    Skipped { reason: String },
}

impl ImageAlpha {
    pub fn computed(&self) -> Option<&AlphaResult> {
        match self {
            ImageAlpha::Computed(a) => Some(a),
            ImageAlpha::Skipped { .. } => None,
        }
    }
}

/// Annotation set indexed for per-image matrix construction.
pub(crate) struct Corpus<'a> {
    pub set: &'a AnnotationSet,
    pub raters: Vec<&'a str>,
    pub config: &'a AgreementConfig,
    boxes: HashMap<&'a str, HashMap<&'a str, Vec<&'a LabeledBox>>>,
    participation: BTreeMap<&'a str, std::collections::BTreeSet<&'a str>>,
}

impl<'a> Corpus<'a> {
    pub fn new(set: &'a AnnotationSet, config: &'a AgreementConfig) -> Result<Self> {
        if set.images.is_empty() {
            return Err(Error::Config("annotation set has no images".into()));
        }
        if !(0.0..1.0).contains(&config.drop_fraction) {
            return Err(Error::Config(format!(
                "drop_fraction {} outside [0, 1)",
                config.drop_fraction
            )));
        }
        for x in &config.excluded {
            if set.annotator(x).is_none() {
                return Err(Error::Config(format!("cannot exclude unknown annotator `{x}`")));
            }
        }
        if let Some(c) = &config.class {
            if set.label_index(c).is_none() {
                return Err(Error::Vocabulary(format!(
                    "class `{c}` not in vocabulary {:?}",
                    set.labels
                )));
            }
        }
        let raters = set
            .annotators
            .iter()
            .map(|a| a.id.as_str())
            .filter(|id| !config.excluded.iter().any(|x| x == id))
            .collect();
        Ok(Self {
            set,
            raters,
            config,
            boxes: set.boxes_by_image(),
            participation: set.participation(),
        })
    }

    /// Participating raters of an image, in rater order.
    pub fn participants(&self, image: &str) -> Vec<&'a str> {
        let who = &self.participation[image];
        self.raters.iter().copied().filter(|r| who.contains(r)).collect()
    }

    pub fn matrix(&self, image: &ImageRef) -> Result<ObservationMatrix> {
        let per_annotator = self.boxes.get(image.id.as_str());
        let who = &self.participation[image.id.as_str()];
        let stacks = self
            .raters
            .iter()
            .map(|r| {
                let boxes = per_annotator.and_then(|m| m.get(r)).map_or(&[][..], Vec::as_slice);
                rasterize(image, r, boxes, &self.set.labels)
            })
            .collect::<Result<Vec<_>>>()?;
        let participation = self
            .raters
            .iter()
            .map(|r| (r.to_string(), who.contains(r)))
            .collect();
        let matrix = build_observation_matrix(
            &stacks,
            &participation,
            self.config.drop_fraction,
            self.config.image_seed(&image.id),
        )?;
        match &self.config.class {
            Some(c) => restrict_to_class(&matrix, c),
            None => Ok(matrix),
        }
    }

    /// Pair counts of one image, or `None` with a reason if fewer than
    /// `min_raters` raters participated.
    pub fn pair_counts(&self, image: &ImageRef, min_raters: usize) -> Result<Result<PairCounts, String>> {
        let n = self.participants(&image.id).len();
        if n < min_raters {
            return Ok(Err(format!("{n} participating raters, need {min_raters}")));
        }
        let counts = PairCounts::from_matrix(&self.matrix(image)?);
        if counts.units == 0 {
            return Ok(Err("no retained units".into()));
        }
        Ok(Ok(counts))
    }
}

/// Pixel-level alpha of every image. Images with fewer than two
/// participating raters are reported as skipped.
pub fn alpha_per_image(set: &AnnotationSet, config: &AgreementConfig) -> Result<BTreeMap<String, ImageAlpha>> {
    let corpus = Corpus::new(set, config)?;
    set.images
        .par_iter()
        .map(|image| {
            let outcome = match corpus.pair_counts(image, 2)? {
                Ok(counts) => ImageAlpha::Computed(counts.alpha_all()?),
                Err(reason) => ImageAlpha::Skipped { reason },
            };
            Ok((image.id.clone(), outcome))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaSummary {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

/// Mean and median (mean of the middle pair for even counts), in input order.
pub(crate) fn mean_median(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    Some((mean, median))
}

pub fn aggregate_alpha(results: &BTreeMap<String, ImageAlpha>) -> Result<AlphaSummary> {
    let alphas: Vec<f64> = results.values().filter_map(|r| r.computed()).map(|a| a.alpha).collect();
    let Some((mean, median)) = mean_median(&alphas) else {
        return Err(Error::InsufficientData(format!(
            "all {} images were skipped",
            results.len()
        )));
    };
    Ok(AlphaSummary {
        mean,
        median,
        count: alphas.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageAlphaEntry {
    pub image_id: String,
    pub alpha: f64,
    pub units: u64,
    pub raters: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedImage {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub per_image: Vec<ImageAlphaEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkippedImage>,
    pub mean: f64,
    pub median: f64,
    pub band: AgreementBand,
    pub config: AgreementConfig,
}

impl AgreementReport {
    pub fn build(results: &BTreeMap<String, ImageAlpha>, config: &AgreementConfig) -> Result<Self> {
        let summary = aggregate_alpha(results)?;
        let mut per_image = Vec::new();
        let mut skipped = Vec::new();
        for (id, r) in results {
            match r {
                ImageAlpha::Computed(a) => per_image.push(ImageAlphaEntry {
                    image_id: id.clone(),
                    alpha: a.alpha,
                    units: a.unit_count,
                    raters: a.rater_count,
                    degenerate: a.degenerate,
                }),
                ImageAlpha::Skipped { reason } => skipped.push(SkippedImage {
                    image_id: id.clone(),
                    reason: reason.clone(),
                }),
            }
        }
        Ok(Self {
            per_image,
            skipped,
            mean: summary.mean,
            median: summary.median,
            band: classify_alpha(summary.mean),
            config: config.clone(),
        })
    }
}

pub fn agreement_report(set: &AnnotationSet, config: &AgreementConfig) -> Result<AgreementReport> {
    AgreementReport::build(&alpha_per_image(set, config)?, config)
}
