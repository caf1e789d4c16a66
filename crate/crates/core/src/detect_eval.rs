//! Detection scoring against a ground-truth set.
//!
//! IoU is computed on integer pixel counts. Matching is greedy and
//! one-to-one per image: predictions are visited by descending score (then
//! descending area, then input order) and each takes the free same-label
//! ground-truth box with the highest IoU if that IoU reaches the threshold.
//! A prediction that instead overlaps a free box of another label at the
//! threshold is recorded as misclassified; it still counts as a false
//! positive and leaves that box free.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::datamodel::{AnnotationSet, BBox, LabeledBox};
use crate::error::{Error, Result};

/// Intersection and union pixel counts.
pub fn iou_counts(a: &BBox, b: &BBox) -> (u64, u64) {
    let inter = a.intersection_area(b);
    (inter, a.area() + b.area() - inter)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = iou_counts(a, b);
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// IoU of the boxes when the labels agree, zero otherwise.
pub fn labeled_iou(a: &LabeledBox, b: &LabeledBox) -> f64 {
    if a.label != b.label {
        return 0.0;
    }
    iou(&a.bbox, &b.bbox)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapScope {
    #[default]
    Global,
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub cap: Option<usize>,
    pub cap_scope: CapScope,
    #[serde(default)]
    pub per_class: bool,
    #[serde(default)]
    pub averaging: Averaging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            cap: None,
            cap_scope: CapScope::Global,
            per_class: false,
            averaging: Averaging::Micro,
        }
    }
}

impl EvalConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        if self.cap == Some(0) {
            return Err(Error::Config("cap must be positive".into()));
        }
        Ok(())
    }
}

/// Visiting order: descending score, descending area, input order.
/// Boxes without a score come last.
fn rank_order(boxes: &[LabeledBox], a: usize, b: usize) -> Ordering {
    let sa = boxes[a].score.unwrap_or(f64::NEG_INFINITY);
    let sb = boxes[b].score.unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa)
        .then_with(|| boxes[b].bbox.area().cmp(&boxes[a].bbox.area()))
        .then_with(|| a.cmp(&b))
}

/// Keep the `cap` best-scoring predictions, globally or per image. Kept
/// predictions stay in input order.
pub fn cap_predictions(preds: &[LabeledBox], cfg: &EvalConfig) -> Result<Vec<LabeledBox>> {
    let Some(cap) = cfg.cap else {
        return Ok(preds.to_vec());
    };
    if let Some((i, _)) = preds.iter().enumerate().find(|(_, p)| p.score.is_none()) {
        return Err(Error::Input(format!("prediction {i} has no score; capping needs scores")));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| rank_order(preds, a, b));
    let mut keep = vec![false; preds.len()];
    match cfg.cap_scope {
        CapScope::Global => order.iter().take(cap).for_each(|&i| keep[i] = true),
        CapScope::PerImage => {
            let mut taken: HashMap<&str, usize> = HashMap::new();
            for &i in &order {
                let n = taken.entry(preds[i].image_id.as_str()).or_default();
                if *n < cap {
                    *n += 1;
                    keep[i] = true;
                }
            }
        }
    }
    Ok(preds
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchPair {
    /// Index into the (capped) prediction list.
    pub pred: usize,
    /// Index into the ground-truth box list.
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ImageMatches {
    pub matched: Vec<MatchPair>,
    pub misclassified: Vec<MatchPair>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Predictions after capping; `pred` indices refer to this list.
    #[serde(skip)]
    pub predictions: Vec<LabeledBox>,
    pub images: BTreeMap<String, ImageMatches>,
}

fn check_compatible(preds: &AnnotationSet, gt: &AnnotationSet) -> Result<()> {
    let pv: BTreeSet<&String> = preds.labels.iter().collect();
    let gv: BTreeSet<&String> = gt.labels.iter().collect();
    if pv != gv {
        return Err(Error::Input(format!(
            "prediction vocabulary {:?} differs from ground-truth vocabulary {:?}",
            preds.labels, gt.labels
        )));
    }
    let gt_images: BTreeSet<&str> = gt.images.iter().map(|i| i.id.as_str()).collect();
    if let Some(p) = preds.boxes.iter().find(|p| !gt_images.contains(p.image_id.as_str())) {
        return Err(Error::Input(format!(
            "prediction on image `{}` which the ground truth does not contain",
            p.image_id
        )));
    }
    Ok(())
}

fn best_free<'a>(
    candidates: impl Iterator<Item = &'a usize>,
    taken: &[bool],
    gts: &[LabeledBox],
    pred: &BBox,
    threshold: f64,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &g in candidates {
        if taken[g] {
            continue;
        }
        let v = iou(pred, &gts[g].bbox);
        if v >= threshold && best.is_none_or(|(_, b)| v > b) {
            best = Some((g, v));
        }
    }
    best
}

pub fn match_detections(preds: &AnnotationSet, gt: &AnnotationSet, cfg: &EvalConfig) -> Result<MatchResult> {
    cfg.check()?;
    check_compatible(preds, gt)?;
    let predictions = cap_predictions(&preds.boxes, cfg)?;
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| rank_order(&predictions, a, b));

    let mut gts_by_image: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in gt.boxes.iter().enumerate() {
        gts_by_image.entry(g.image_id.as_str()).or_default().push(i);
    }
    let mut taken = vec![false; gt.boxes.len()];
    let mut images: BTreeMap<String, ImageMatches> = gt
        .images
        .iter()
        .map(|i| (i.id.clone(), ImageMatches::default()))
        .collect();
    let none = Vec::new();
    for &p in &order {
        let pred = &predictions[p];
        let candidates = gts_by_image.get(pred.image_id.as_str()).unwrap_or(&none);
        let entry = images.get_mut(&pred.image_id).expect("image checked above");
        let same = candidates.iter().filter(|&&g| gt.boxes[g].label == pred.label);
        if let Some((g, v)) = best_free(same, &taken, &gt.boxes, &pred.bbox, cfg.iou_threshold) {
            taken[g] = true;
            entry.matched.push(MatchPair { pred: p, gt: g, iou: v });
            continue;
        }
        let other = candidates.iter().filter(|&&g| gt.boxes[g].label != pred.label);
        if let Some((g, v)) = best_free(other, &taken, &gt.boxes, &pred.bbox, cfg.iou_threshold) {
            entry.misclassified.push(MatchPair { pred: p, gt: g, iou: v });
        } else {
            entry.unmatched_preds.push(p);
        }
    }
    for (g, b) in gt.boxes.iter().enumerate() {
        if !taken[g] {
            images.get_mut(&b.image_id).expect("gt image").unmatched_gts.push(g);
        }
    }
    Ok(MatchResult { predictions, images })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub misclassified: u64,
    /// TP + FP = 0; precision is reported as 0.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub precision_undefined: bool,
    /// TP + FN = 0; recall is reported as 0.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub recall_undefined: bool,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, misclassified: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
            misclassified,
            precision_undefined: tp + fp == 0,
            recall_undefined: tp + fn_ == 0,
        }
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall: Metrics,
    pub per_class: BTreeMap<String, Metrics>,
    pub config: EvalConfig,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    tp: u64,
    fp: u64,
    fn_: u64,
    mis: u64,
}

pub fn evaluate(preds: &AnnotationSet, gt: &AnnotationSet, cfg: &EvalConfig) -> Result<EvalReport> {
    let m = match_detections(preds, gt, cfg)?;
    Ok(report_from_matches(&m, gt, cfg))
}

pub fn report_from_matches(m: &MatchResult, gt: &AnnotationSet, cfg: &EvalConfig) -> EvalReport {
    let mut tallies: BTreeMap<&str, Tally> = gt.labels.iter().map(|l| (l.as_str(), Tally::default())).collect();
    let label_of_pred = |p: usize| m.predictions[p].label.as_str();
    for im in m.images.values() {
        for pair in &im.matched {
            tallies.entry(label_of_pred(pair.pred)).or_default().tp += 1;
        }
        for pair in &im.misclassified {
            let t = tallies.entry(label_of_pred(pair.pred)).or_default();
            t.fp += 1;
            t.mis += 1;
        }
        for &p in &im.unmatched_preds {
            tallies.entry(label_of_pred(p)).or_default().fp += 1;
        }
        for &g in &im.unmatched_gts {
            tallies.entry(gt.boxes[g].label.as_str()).or_default().fn_ += 1;
        }
    }
    let per_class_all: BTreeMap<String, Metrics> = tallies
        .iter()
        .map(|(l, t)| (l.to_string(), Metrics::from_counts(t.tp, t.fp, t.fn_, t.mis)))
        .collect();
    let total = tallies.values().fold(Tally::default(), |a, t| Tally {
        tp: a.tp + t.tp,
        fp: a.fp + t.fp,
        fn_: a.fn_ + t.fn_,
        mis: a.mis + t.mis,
    });
    let mut overall = Metrics::from_counts(total.tp, total.fp, total.fn_, total.mis);
    if cfg.averaging == Averaging::Macro {
        let active: Vec<&Metrics> = per_class_all
            .values()
            .filter(|c| c.tp + c.fp + c.fn_ > 0)
            .collect();
        if !active.is_empty() {
            let n = active.len() as f64;
            overall.precision = active.iter().map(|c| c.precision).sum::<f64>() / n;
            overall.recall = active.iter().map(|c| c.recall).sum::<f64>() / n;
            overall.f1 = active.iter().map(|c| c.f1).sum::<f64>() / n;
        }
    }
    EvalReport {
        overall,
        per_class: if cfg.per_class { per_class_all } else { BTreeMap::new() },
        config: cfg.clone(),
    }
}
