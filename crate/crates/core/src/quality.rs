//! Leave-one-out annotator metrics.
//!
//! Rater vitality of annotator `i` on an image is `K_full - K_without_i`,
//! both alphas computed on the same retained units of that image. Positive
//! vitality means the annotator pulls the group toward consensus. Class
//! recognition difficulty repeats the computation on a single class channel.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::agreement::{aggregate_alpha, alpha_per_image, mean_median, AgreementConfig, Corpus, ImageAlpha};
use crate::datamodel::AnnotationSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageVitality {
    pub image_id: String,
    #[serde(rename = "V")]
    pub v: f64,
    pub k_full: f64,
    pub k_loo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VitalityReport {
    pub annotator_id: String,
    #[serde(rename = "mean_V")]
    pub mean_v: f64,
    #[serde(rename = "median_V")]
    pub median_v: f64,
    pub k_full_mean: f64,
    pub k_loo_mean: f64,
    pub per_image: Vec<ImageVitality>,
}

/// (annotator id, full alpha, leave-one-out alpha) for each participant.
type ImageLoo = Vec<(String, f64, f64)>;

/// Per image: alpha of all participants and of all participants but one,
/// for every participant, sharing one set of retained units.
fn leave_one_out(set: &AnnotationSet, config: &AgreementConfig) -> Result<Vec<(String, ImageLoo)>> {
    let corpus = Corpus::new(set, config)?;
    if corpus.raters.len() < 3 {
        return Err(Error::InsufficientRaters {
            needed: 3,
            found: corpus.raters.len(),
        });
    }
    set.images
        .par_iter()
        .map(|image| {
            let mut rows = Vec::new();
            if let Ok(counts) = corpus.pair_counts(image, 3)? {
                let full = counts.alpha_all()?.alpha;
                let mut include = counts.present.clone();
                for r in 0..counts.raters.len() {
                    if !counts.present[r] {
                        continue;
                    }
                    include[r] = false;
                    let loo = counts.alpha(&include)?.alpha;
                    include[r] = true;
                    rows.push((counts.raters[r].clone(), full, loo));
                }
            }
            Ok((image.id.clone(), rows))
        })
        .collect()
}

fn summarize(annotator: &str, per_image: Vec<ImageVitality>) -> Result<VitalityReport> {
    let vs: Vec<f64> = per_image.iter().map(|p| p.v).collect();
    let Some((mean_v, median_v)) = mean_median(&vs) else {
        return Err(Error::EmptyReport(format!(
            "annotator `{annotator}` has no image with a defined vitality"
        )));
    };
    let n = per_image.len() as f64;
    Ok(VitalityReport {
        annotator_id: annotator.to_string(),
        mean_v,
        median_v,
        k_full_mean: per_image.iter().map(|p| p.k_full).sum::<f64>() / n,
        k_loo_mean: per_image.iter().map(|p| p.k_loo).sum::<f64>() / n,
        per_image,
    })
}

/// Vitality reports for every (non-excluded) annotator, in annotator order.
/// Images an annotator did not process are left out of that annotator's
/// aggregate; annotators with no such image are omitted.
pub fn vitality_all(set: &AnnotationSet, config: &AgreementConfig) -> Result<Vec<VitalityReport>> {
    let rows = leave_one_out(set, config)?;
    let mut by_annotator: BTreeMap<&str, Vec<ImageVitality>> = BTreeMap::new();
    for (image_id, entries) in &rows {
        for (annotator, full, loo) in entries {
            by_annotator.entry(annotator).or_default().push(ImageVitality {
                image_id: image_id.clone(),
                v: full - loo,
                k_full: *full,
                k_loo: *loo,
            });
        }
    }
    set.annotators
        .iter()
        .filter_map(|a| by_annotator.remove(a.id.as_str()).map(|p| summarize(&a.id, p)))
        .collect()
}

pub fn vitality(set: &AnnotationSet, annotator: &str, config: &AgreementConfig) -> Result<VitalityReport> {
    if set.annotator(annotator).is_none() || config.excluded.iter().any(|x| x == annotator) {
        return Err(Error::Config(format!("annotator `{annotator}` is not a rater in this set")));
    }
    vitality_all(set, config)?
        .into_iter()
        .find(|r| r.annotator_id == annotator)
        .ok_or_else(|| {
            Error::EmptyReport(format!(
                "annotator `{annotator}` has no image with a defined vitality"
            ))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDifficultyReport {
    pub class: String,
    pub mean_class_alpha: f64,
    pub median_class_alpha: f64,
    /// Nobody labeled the class on any image.
    pub degenerate: bool,
    pub per_annotator_vitality: BTreeMap<String, f64>,
    pub per_image: Vec<ClassImageAlpha>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassImageAlpha {
    pub image_id: String,
    pub alpha: f64,
    pub degenerate: bool,
}

/// Alpha and leave-one-out vitality restricted to one class channel.
/// Per-annotator vitality is only filled in when at least three raters exist.
pub fn class_difficulty(set: &AnnotationSet, class: &str, config: &AgreementConfig) -> Result<ClassDifficultyReport> {
    if set.label_index(class).is_none() {
        return Err(Error::Vocabulary(format!(
            "class `{class}` not in vocabulary {:?}",
            set.labels
        )));
    }
    let cfg = AgreementConfig {
        class: Some(class.to_string()),
        ..config.clone()
    };
    let alphas = alpha_per_image(set, &cfg)?;
    let summary = aggregate_alpha(&alphas)?;
    let per_image: Vec<ClassImageAlpha> = alphas
        .iter()
        .filter_map(|(id, r)| match r {
            ImageAlpha::Computed(a) => Some(ClassImageAlpha {
                image_id: id.clone(),
                alpha: a.alpha,
                degenerate: a.degenerate,
            }),
            ImageAlpha::Skipped { .. } => None,
        })
        .collect();
    let raters = set
        .annotators
        .iter()
        .filter(|a| !cfg.excluded.contains(&a.id))
        .count();
    let per_annotator_vitality = if raters >= 3 {
        vitality_all(set, &cfg)?
            .into_iter()
            .map(|r| (r.annotator_id, r.mean_v))
            .collect()
    } else {
        BTreeMap::new()
    };
    Ok(ClassDifficultyReport {
        class: class.to_string(),
        mean_class_alpha: summary.mean,
        median_class_alpha: summary.median,
        degenerate: per_image.iter().all(|p| p.degenerate),
        per_annotator_vitality,
        per_image,
    })
}

/// Class difficulty for every label, hardest (lowest mean alpha) first.
pub fn class_difficulty_all(set: &AnnotationSet, config: &AgreementConfig) -> Result<Vec<ClassDifficultyReport>> {
    let mut out = set
        .labels
        .iter()
        .map(|l| class_difficulty(set, l, config))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        a.mean_class_alpha
            .total_cmp(&b.mean_class_alpha)
            .then_with(|| a.class.cmp(&b.class))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedAnnotator {
    pub annotator_id: String,
    #[serde(rename = "mean_V")]
    pub mean_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub order: Vec<RankedAnnotator>,
    /// At least two annotators share the same mean vitality.
    pub tie: bool,
}

impl Ranking {
    pub fn top_k(&self, k: usize) -> Vec<String> {
        self.order.iter().take(k).map(|r| r.annotator_id.clone()).collect()
    }

    pub fn at_least(&self, min_vitality: f64) -> Vec<String> {
        self.order
            .iter()
            .filter(|r| r.mean_v >= min_vitality)
            .map(|r| r.annotator_id.clone())
            .collect()
    }
}

/// Order annotators by descending mean vitality, ties by id.
pub fn rank_annotators(reports: &[VitalityReport]) -> Result<Ranking> {
    if reports.is_empty() {
        return Err(Error::Config("no vitality reports to rank".into()));
    }
    let mut order: Vec<RankedAnnotator> = reports
        .iter()
        .map(|r| RankedAnnotator {
            annotator_id: r.annotator_id.clone(),
            mean_v: r.mean_v,
        })
        .collect();
    order.sort_by(|a, b| {
        b.mean_v
            .total_cmp(&a.mean_v)
            .then_with(|| a.annotator_id.cmp(&b.annotator_id))
    });
    let tie = order.windows(2).any(|w| w[0].mean_v == w[1].mean_v);
    Ok(Ranking { order, tie })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Annotator, BBox, ImageRef, LabeledBox, Tier};

    fn base(n: usize) -> AnnotationSet {
        AnnotationSet {
            images: (0..2).map(|i| ImageRef::new(format!("img-{i}"), 40, 30)).collect(),
            annotators: (1..=n)
                .map(|i| Annotator::new(format!("a{i}"), Tier::Professional))
                .collect(),
            labels: vec!["person".into(), "vehicle".into(), "bicycle".into()],
            ..Default::default()
        }
    }

    fn add(set: &mut AnnotationSet, img: usize, ann: usize, label: &str, b: BBox) {
        set.boxes
            .push(LabeledBox::new(format!("img-{img}"), format!("a{ann}"), label, b));
    }

    #[test]
    fn identical_annotators_have_zero_vitality() {
        let mut set = base(4);
        for img in 0..2 {
            for a in 1..=4 {
                add(&mut set, img, a, "person", BBox::new(3, 4, 10, 12));
            }
        }
        let reports = vitality_all(&set, &AgreementConfig::with_seed(1)).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert_eq!(r.mean_v, 0.0);
            assert_eq!(r.k_full_mean, 1.0);
        }
        let rank = rank_annotators(&reports).unwrap();
        assert!(rank.tie);
        assert_eq!(rank.top_k(4), vec!["a1", "a2", "a3", "a4"]);
    }

    #[test]
    fn three_rater_pixel_instance() {
        // One 4x1 image, one class, no drop: each pixel is one unit.
        // A = [1,1,0,0], B = [1,1,0,0], C = [1,0,1,0].
        let mut set = AnnotationSet {
            images: vec![ImageRef::new("img-0", 4, 1)],
            annotators: ["A", "B", "C"].iter().map(|a| Annotator::new(*a, Tier::Expert)).collect(),
            labels: vec!["person".into()],
            ..Default::default()
        };
        for a in ["A", "B"] {
            set.boxes.push(LabeledBox::new("img-0", a, "person", BBox::new(0, 0, 2, 1)));
        }
        set.boxes.push(LabeledBox::new("img-0", "C", "person", BBox::new(0, 0, 1, 1)));
        set.boxes.push(LabeledBox::new("img-0", "C", "person", BBox::new(2, 0, 1, 1)));
        let cfg = AgreementConfig {
            drop_fraction: 0.0,
            ..AgreementConfig::with_seed(0)
        };
        let c = vitality(&set, "C", &cfg).unwrap();
        assert!((c.k_full_mean - 28.0 / 72.0).abs() < 1e-12);
        assert_eq!(c.k_loo_mean, 1.0);
        assert!((c.mean_v - (28.0 / 72.0 - 1.0)).abs() < 1e-12);
        let a = vitality(&set, "A", &cfg).unwrap();
        assert!((a.k_loo_mean - 0.125).abs() < 1e-12);
        assert!((a.mean_v - (28.0 / 72.0 - 0.125)).abs() < 1e-12);
    }

    #[test]
    fn too_few_raters_and_unknown_annotators() {
        let set = base(2);
        assert!(matches!(
            vitality(&set, "a1", &AgreementConfig::default()),
            Err(Error::InsufficientRaters { needed: 3, found: 2 })
        ));
        let set = base(3);
        assert!(matches!(vitality(&set, "zz", &AgreementConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn absent_annotator_yields_empty_report() {
        let mut set = base(4);
        for img in 0..2 {
            for a in 1..=3 {
                add(&mut set, img, a, "person", BBox::new(3, 4, 10, 12));
            }
        }
        assert!(matches!(
            vitality(&set, "a4", &AgreementConfig::with_seed(2)),
            Err(Error::EmptyReport(_))
        ));
    }

    #[test]
    fn images_without_the_annotator_are_excluded() {
        let mut set = base(4);
        for a in 1..=4 {
            add(&mut set, 0, a, "person", BBox::new(3, 4, 10, 12));
        }
        for a in 1..=3 {
            add(&mut set, 1, a, "person", BBox::new(3 + a as u32, 4, 10, 12));
        }
        let r = vitality(&set, "a4", &AgreementConfig::with_seed(2)).unwrap();
        assert_eq!(r.per_image.len(), 1);
        assert_eq!(r.per_image[0].image_id, "img-0");
        let r1 = vitality(&set, "a1", &AgreementConfig::with_seed(2)).unwrap();
        assert_eq!(r1.per_image.len(), 2);
    }

    #[test]
    fn vitality_is_reproducible() {
        let mut set = base(4);
        for img in 0..2 {
            for a in 1..=4 {
                add(&mut set, img, a, "vehicle", BBox::new(2 * a as u32, 3, 12, 9 + img as u32));
            }
        }
        let cfg = AgreementConfig::with_seed(17);
        let a = vitality_all(&set, &cfg).unwrap();
        let b = vitality_all(&set, &cfg).unwrap();
        assert_eq!(a, b);
        for r in &a {
            for p in &r.per_image {
                assert_eq!(p.v.to_bits(), (p.k_full - p.k_loo).to_bits());
            }
        }
    }

    #[test]
    fn class_difficulty_identical_class() {
        let mut set = base(3);
        for img in 0..2 {
            for a in 1..=3 {
                add(&mut set, img, a, "person", BBox::new(3, 4, 10, 12));
                add(&mut set, img, a, "vehicle", BBox::new(a as u32 * 4, 4, 10, 12));
            }
        }
        let cfg = AgreementConfig::with_seed(4);
        let person = class_difficulty(&set, "person", &cfg).unwrap();
        assert_eq!(person.mean_class_alpha, 1.0);
        assert!(person.per_annotator_vitality.values().all(|v| *v == 0.0));
        assert!(!person.degenerate);
        let bike = class_difficulty(&set, "bicycle", &cfg).unwrap();
        assert!(bike.degenerate);
        let all = class_difficulty_all(&set, &cfg).unwrap();
        assert_eq!(all[0].class, "vehicle");
        assert!(matches!(class_difficulty(&set, "cart", &cfg), Err(Error::Vocabulary(_))));
    }

    fn report(id: &str, mean_v: f64) -> VitalityReport {
        VitalityReport {
            annotator_id: id.into(),
            mean_v,
            median_v: mean_v,
            k_full_mean: 0.0,
            k_loo_mean: 0.0,
            per_image: vec![],
        }
    }

    #[test]
    fn ranking_by_mean_vitality() {
        let reports = vec![
            report("A1", -0.078),
            report("A2", 0.028),
            report("A3", 0.012),
            report("A4", 0.022),
        ];
        let rank = rank_annotators(&reports).unwrap();
        assert_eq!(rank.top_k(4), vec!["A2", "A4", "A3", "A1"]);
        assert!(!rank.tie);
        assert_eq!(rank.at_least(0.0), vec!["A2", "A4", "A3"]);
        let single = rank_annotators(&reports[..1]).unwrap();
        assert_eq!(single.order.len(), 1);
        assert!(matches!(rank_annotators(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn report_json_keys() {
        let v = serde_json::to_value(report("A1", -0.1)).unwrap();
        for key in ["annotator_id", "mean_V", "median_V", "k_full_mean", "k_loo_mean", "per_image"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
