//! Seeded synthetic scenes, noisy annotators and a noisy pseudo-detector.
//!
//! Everything here is a pure function of its inputs and seed. Each image
//! draws from its own sub-stream derived from the seed and the image index,
//! so images can be generated in parallel without changing the output.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{AnnotationSet, Annotator, Assignment, BBox, ImageRef, LabeledBox, Tier};
use crate::detect_eval::iou;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derive_seed_indexed, seeded, Rng};

pub const TRUTH_ANNOTATOR: &str = "truth";
pub const DETECTOR_ANNOTATOR: &str = "detector";

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub images: usize,
    pub width: u32,
    pub height: u32,
    /// Inclusive range; each image draws its object count uniformly from it.
    pub objects_per_image: [usize; 2],
    /// Relative weight per class. Keys form the label vocabulary.
    pub class_mix: BTreeMap<String, f64>,
    /// Inclusive range of box side lengths in pixels.
    pub box_size: [u32; 2],
    pub seed: u64,
}

impl SceneSpec {
    pub fn check(&self) -> Result<()> {
        let [lo, hi] = self.box_size;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("box_size range [{lo}, {hi}] is empty or zero")));
        }
        if hi > self.width || hi > self.height {
            return Err(Error::Config(format!(
                "box side up to {hi} does not fit a {}x{} image",
                self.width, self.height
            )));
        }
        if self.objects_per_image[0] > self.objects_per_image[1] {
            return Err(Error::Config("objects_per_image range is empty".into()));
        }
        if self.class_mix.values().any(|w| !(w.is_finite() && *w >= 0.0))
            || !self.class_mix.values().any(|w| *w > 0.0)
        {
            return Err(Error::Config("class_mix needs non-negative weights, at least one positive".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.class_mix.keys().cloned().collect()
    }
}

fn image_id(index: usize) -> String {
    format!("img{index:04}")
}

fn draw_weighted(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if t < *w {
            return i;
        }
        t -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn random_box(rng: &mut Rng, [lo, hi]: [u32; 2], width: u32, height: u32) -> BBox {
    let w = rng.random_range(lo..=hi);
    let h = rng.random_range(lo..=hi);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    BBox::new(x, y, w, h)
}

pub fn generate_truth(spec: &SceneSpec) -> Result<AnnotationSet> {
    spec.check()?;
    let labels = spec.labels();
    let weights: Vec<f64> = spec.class_mix.values().copied().collect();
    let images: Vec<ImageRef> = (0..spec.images)
        .map(|i| ImageRef::new(image_id(i), spec.width, spec.height))
        .collect();
    let boxes: Vec<Vec<LabeledBox>> = images
        .par_iter()
        .enumerate()
        .map(|(i, image)| {
            let mut rng = seeded(derive_seed_indexed(spec.seed, i as u64));
            let [lo, hi] = spec.objects_per_image;
            let n = rng.random_range(lo..=hi);
            (0..n)
                .map(|_| {
                    let bbox = random_box(&mut rng, spec.box_size, spec.width, spec.height);
                    let label = &labels[draw_weighted(&mut rng, &weights)];
                    LabeledBox::new(image.id.clone(), TRUTH_ANNOTATOR, label.clone(), bbox)
                })
                .collect()
        })
        .collect();
    Ok(AnnotationSet {
        assignments: images.iter().map(|i| Assignment::new(i.id.clone(), TRUTH_ANNOTATOR)).collect(),
        images,
        annotators: vec![Annotator::new(TRUTH_ANNOTATOR, Tier::Professional)],
        labels,
        boxes: boxes.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProfile {
    pub p_miss: f64,
    /// Standard deviation in pixels, applied to each edge independently.
    pub jitter_sigma: f64,
    /// Multiplies width and height about the box centre.
    pub scale_bias: f64,
    /// Row-stochastic label confusion; labels without a row are kept.
    pub confusion: BTreeMap<String, BTreeMap<String, f64>>,
    /// Expected number of spurious boxes per image.
    pub p_spurious: f64,
    /// Inclusive side-length range of spurious boxes.
    pub spurious_size: [u32; 2],
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            p_miss: 0.0,
            jitter_sigma: 0.0,
            scale_bias: 1.0,
            confusion: BTreeMap::new(),
            p_spurious: 0.0,
            spurious_size: [8, 32],
        }
    }
}

impl NoiseProfile {
    pub fn check(&self, labels: &[String]) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_miss) {
            return Err(Error::Config(format!("p_miss {} outside [0, 1]", self.p_miss)));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::Config(format!("jitter_sigma {} must be >= 0", self.jitter_sigma)));
        }
        if !(self.scale_bias.is_finite() && self.scale_bias > 0.0) {
            return Err(Error::Config(format!("scale_bias {} must be > 0", self.scale_bias)));
        }
        if !(self.p_spurious.is_finite() && self.p_spurious >= 0.0) {
            return Err(Error::Config(format!("p_spurious {} must be >= 0", self.p_spurious)));
        }
        let [lo, hi] = self.spurious_size;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("spurious_size range [{lo}, {hi}] is empty or zero")));
        }
        for (from, row) in &self.confusion {
            for label in std::iter::once(from).chain(row.keys()) {
                if !labels.contains(label) {
                    return Err(Error::Vocabulary(label.clone()));
                }
            }
            if row.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::Config(format!("confusion row `{from}` has a negative entry")));
            }
            let sum: f64 = row.values().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Config(format!("confusion row `{from}` sums to {sum}, not 1")));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.p_miss == 0.0
            && self.jitter_sigma == 0.0
            && self.scale_bias == 1.0
            && self.p_spurious == 0.0
            && self.confusion.iter().all(|(from, row)| row.get(from) == Some(&1.0))
    }

    /// Copy with jitter and miss rate multiplied by `factor` (miss rate capped at 1).
    pub fn amplified(&self, factor: f64) -> Self {
        Self {
            p_miss: (self.p_miss * factor).min(1.0),
            jitter_sigma: self.jitter_sigma * factor,
            ..self.clone()
        }
    }
}

/// Per-box outcome of the noise model.
struct Perturbed {
    bbox: BBox,
    label: String,
    /// 1 − IoU with the source box, plus 1 if the label changed.
    magnitude: f64,
}

struct Perturber<'a> {
    profile: &'a NoiseProfile,
    labels: &'a [String],
    normal: Option<Normal<f64>>,
    poisson: Option<Poisson<f64>>,
}

impl<'a> Perturber<'a> {
    fn new(profile: &'a NoiseProfile, labels: &'a [String]) -> Result<Self> {
        profile.check(labels)?;
        let normal = (profile.jitter_sigma > 0.0)
            .then(|| Normal::new(0.0, profile.jitter_sigma))
            .transpose()
            .map_err(|e| Error::Config(e.to_string()))?;
        let poisson = (profile.p_spurious > 0.0)
            .then(|| Poisson::new(profile.p_spurious))
            .transpose()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { profile, labels, normal, poisson })
    }

    fn relabel(&self, rng: &mut Rng, label: &str) -> String {
        match self.profile.confusion.get(label) {
            None => label.to_string(),
            Some(row) => {
                let weights: Vec<f64> = row.values().copied().collect();
                row.keys().nth(draw_weighted(rng, &weights)).expect("non-empty row").clone()
            }
        }
    }

    fn reshape(&self, rng: &mut Rng, b: &BBox, width: u32, height: u32) -> BBox {
        let s = self.profile.scale_bias;
        let cx = b.x as f64 + b.w as f64 / 2.0;
        let cy = b.y as f64 + b.h as f64 / 2.0;
        let hw = b.w as f64 * s / 2.0;
        let hh = b.h as f64 * s / 2.0;
        let mut edges = [cx - hw, cy - hh, cx + hw, cy + hh];
        if let Some(normal) = &self.normal {
            for e in &mut edges {
                *e += normal.sample(rng);
            }
        }
        let [l, t, r, btm] = edges.map(|e| e.round() as i64);
        let (l, r) = fix_span(l, r, width);
        let (t, btm) = fix_span(t, btm, height);
        BBox::new(l as u32, t as u32, (r - l) as u32, (btm - t) as u32)
    }

    fn perturb(&self, rng: &mut Rng, src: &LabeledBox, width: u32, height: u32) -> Option<Perturbed> {
        if self.profile.p_miss > 0.0 && rng.random::<f64>() < self.profile.p_miss {
            return None;
        }
        let bbox = self.reshape(rng, &src.bbox, width, height);
        let label = self.relabel(rng, &src.label);
        let magnitude = 1.0 - iou(&src.bbox, &bbox) + if label != src.label { 1.0 } else { 0.0 };
        Some(Perturbed { bbox, label, magnitude })
    }

    fn spurious(&self, rng: &mut Rng, width: u32, height: u32) -> Vec<Perturbed> {
        let Some(poisson) = &self.poisson else {
            return Vec::new();
        };
        let n = poisson.sample(rng) as usize;
        let [lo, hi] = self.profile.spurious_size;
        let size = [lo.min(width).min(height), hi.min(width).min(height)];
        (0..n)
            .map(|_| Perturbed {
                bbox: random_box(rng, size, width, height),
                label: self.labels[rng.random_range(0..self.labels.len())].clone(),
                magnitude: 2.0,
            })
            .collect()
    }
}

/// Clamp `[lo, hi)` into `[0, limit]` keeping at least one pixel.
fn fix_span(lo: i64, hi: i64, limit: u32) -> (i64, i64) {
    let limit = i64::from(limit);
    let mut lo = lo.clamp(0, limit - 1);
    let mut hi = hi.clamp(0, limit);
    if hi <= lo {
        let mid = lo.min(limit - 1);
        lo = mid;
        hi = mid + 1;
    }
    (lo, hi)
}

fn simulate(
    truth: &AnnotationSet,
    profile: &NoiseProfile,
    annotator_id: &str,
    seed: u64,
) -> Result<Vec<Vec<Perturbed>>> {
    let perturber = Perturber::new(profile, &truth.labels)?;
    let index: BTreeMap<&str, usize> = truth.images.iter().enumerate().map(|(i, im)| (im.id.as_str(), i)).collect();
    let mut by_image: Vec<Vec<&LabeledBox>> = vec![Vec::new(); truth.images.len()];
    for b in &truth.boxes {
        if let Some(&i) = index.get(b.image_id.as_str()) {
            by_image[i].push(b);
        }
    }
    Ok(truth
        .images
        .par_iter()
        .enumerate()
        .map(|(i, image)| {
            let mut rng = seeded(derive_seed_indexed(derive_seed(seed, annotator_id), i as u64));
            let mut out: Vec<Perturbed> = by_image[i]
                .iter()
                .filter_map(|b| perturber.perturb(&mut rng, b, image.width, image.height))
                .collect();
            out.extend(perturber.spurious(&mut rng, image.width, image.height));
            out
        })
        .collect())
}

fn assemble(
    truth: &AnnotationSet,
    annotator: Annotator,
    per_image: Vec<Vec<Perturbed>>,
    score: impl Fn(&Perturbed, &mut Rng) -> Option<f64>,
    seed: u64,
) -> AnnotationSet {
    let mut boxes = Vec::new();
    for (i, (image, items)) in truth.images.iter().zip(per_image).enumerate() {
        let mut rng = seeded(derive_seed_indexed(derive_seed(seed, "score"), i as u64));
        for p in items {
            let s = score(&p, &mut rng);
            let mut b = LabeledBox::new(image.id.clone(), annotator.id.clone(), p.label, p.bbox);
            b.score = s;
            boxes.push(b);
        }
    }
    AnnotationSet {
        images: truth.images.clone(),
        labels: truth.labels.clone(),
        assignments: truth.images.iter().map(|i| Assignment::new(i.id.clone(), annotator.id.clone())).collect(),
        annotators: vec![annotator],
        boxes,
    }
}

/// One noisy annotator's view of `truth`. Every image is explicitly assigned
/// to the annotator, so an image with no surviving boxes counts as reviewed.
pub fn simulate_annotator(
    truth: &AnnotationSet,
    profile: &NoiseProfile,
    annotator_id: &str,
    seed: u64,
) -> Result<AnnotationSet> {
    simulate_annotator_tier(truth, profile, annotator_id, Tier::Experienced, seed)
}

pub fn simulate_annotator_tier(
    truth: &AnnotationSet,
    profile: &NoiseProfile,
    annotator_id: &str,
    tier: Tier,
    seed: u64,
) -> Result<AnnotationSet> {
    let per_image = simulate(truth, profile, annotator_id, seed)?;
    let out = assemble(truth, Annotator::new(annotator_id, tier), per_image, |_, _| None, seed);
    out.check()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorProfile {
    #[serde(flatten)]
    pub noise: NoiseProfile,
    /// Score of an unperturbed detection.
    pub base_score: f64,
    /// Score lost per unit of perturbation magnitude.
    pub penalty: f64,
    /// Standard deviation of additive score noise.
    pub score_noise: f64,
}

impl Default for DetectorProfile {
    fn default() -> Self {
        Self {
            noise: NoiseProfile::default(),
            base_score: 0.9,
            penalty: 0.4,
            score_noise: 0.02,
        }
    }
}

/// Scored predictions derived from `truth`. The score is
/// `clamp(base − penalty·magnitude + ε, 0, 1)` where magnitude is 1 − IoU
/// with the source box plus 1 for a changed label; spurious boxes get
/// magnitude 2.
pub fn simulate_detector(truth: &AnnotationSet, profile: &DetectorProfile, seed: u64) -> Result<AnnotationSet> {
    if !(0.0..=1.0).contains(&profile.base_score) || profile.penalty < 0.0 || profile.score_noise < 0.0 {
        return Err(Error::Config("detector needs base_score in [0, 1], penalty >= 0, score_noise >= 0".into()));
    }
    let per_image = simulate(truth, &profile.noise, DETECTOR_ANNOTATOR, seed)?;
    let noise = (profile.score_noise > 0.0)
        .then(|| Normal::new(0.0, profile.score_noise))
        .transpose()
        .map_err(|e| Error::Config(e.to_string()))?;
    let score = |p: &Perturbed, rng: &mut Rng| {
        let eps = noise.as_ref().map_or(0.0, |n| n.sample(rng));
        Some((profile.base_score - profile.penalty * p.magnitude + eps).clamp(0.0, 1.0))
    };
    let out = assemble(truth, Annotator::new(DETECTOR_ANNOTATOR, Tier::Model), per_image, score, seed);
    out.check()?;
    Ok(out)
}

/// Merge single-annotator sets over the same images and vocabulary.
pub fn merge_sets(sets: &[AnnotationSet]) -> Result<AnnotationSet> {
    let Some(first) = sets.first() else {
        return Err(Error::Config("nothing to merge".into()));
    };
    let mut out = AnnotationSet {
        images: first.images.clone(),
        labels: first.labels.clone(),
        annotators: Vec::new(),
        boxes: Vec::new(),
        assignments: Vec::new(),
    };
    for s in sets {
        if s.images != first.images || s.labels != first.labels {
            return Err(Error::Consistency("merged sets must share images and labels".into()));
        }
        for a in &s.annotators {
            if out.annotators.iter().any(|b| b.id == a.id) {
                return Err(Error::Consistency(format!("annotator `{}` appears twice", a.id)));
            }
            out.annotators.push(a.clone());
        }
        out.boxes.extend(s.boxes.iter().cloned());
        out.assignments.extend(s.assignments.iter().cloned());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatedAnnotator {
    pub id: String,
    #[serde(default = "default_tier")]
    pub tier: Tier,
    #[serde(default)]
    pub profile: NoiseProfile,
}

fn default_tier() -> Tier {
    Tier::Experienced
}

/// Scene, annotator pool and optional detector in one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub scene: SceneSpec,
    pub annotators: Vec<SimulatedAnnotator>,
    #[serde(default)]
    pub detector: Option<DetectorProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub truth: AnnotationSet,
    pub annotations: AnnotationSet,
    pub predictions: Option<AnnotationSet>,
}

impl SimulationConfig {
    pub fn from_json(payload: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(payload)?)
    }

    /// Annotator and detector streams are keyed off the scene seed.
    pub fn run(&self) -> Result<SimulationOutput> {
        let truth = generate_truth(&self.scene)?;
        let seed = self.scene.seed;
        let sets = self
            .annotators
            .iter()
            .map(|a| simulate_annotator_tier(&truth, &a.profile, &a.id, a.tier, seed))
            .collect::<Result<Vec<_>>>()?;
        let annotations = merge_sets(&sets)?;
        let predictions = self
            .detector
            .as_ref()
            .map(|d| simulate_detector(&truth, d, seed))
            .transpose()?;
        Ok(SimulationOutput { truth, annotations, predictions })
    }
}
