//! The `report` subcommand: one page of agreement bands, vitality ranking
//! and class difficulty.

use std::fmt::Write as _;

use annoqa_core::agreement::{agreement_report, classify_alpha, AgreementBand, AgreementConfig};
use annoqa_core::datamodel::AnnotationSet;
use annoqa_core::quality::{rank_annotators, vitality_all};
use annoqa_core::Error;
use serde::Serialize;

use crate::error::CliResult;

#[derive(Debug, Serialize)]
pub struct Summary {
    pub images: usize,
    pub annotators: usize,
    pub boxes: usize,
    pub drop_fraction: f64,
    pub seed: u64,
    pub agreement: BandedAlpha,
    pub images_skipped: usize,
    /// Empty when fewer than three annotators are available.
    pub vitality: Vec<VitalityRow>,
    /// Hardest class first.
    pub classes: Vec<ClassRow>,
}

#[derive(Debug, Serialize)]
pub struct BandedAlpha {
    pub mean: f64,
    pub median: f64,
    pub band: AgreementBand,
}

#[derive(Debug, Serialize)]
pub struct VitalityRow {
    pub annotator_id: String,
    #[serde(rename = "mean_V")]
    pub mean_v: f64,
    #[serde(rename = "median_V")]
    pub median_v: f64,
    pub effect: &'static str,
}

#[derive(Debug, Serialize)]
pub struct ClassRow {
    pub class: String,
    /// None when the class could not be measured on any image.
    pub alpha: Option<f64>,
    pub band: Option<AgreementBand>,
}

pub fn summarize(set: &AnnotationSet, cfg: &AgreementConfig) -> CliResult<Summary> {
    let overall = agreement_report(set, cfg)?;
    let raters = set.annotators.iter().filter(|a| !cfg.excluded.contains(&a.id)).count();
    let vitality = if raters >= 3 {
        let reports = vitality_all(set, cfg)?;
        let ranking = rank_annotators(&reports)?;
        ranking
            .order
            .iter()
            .map(|r| {
                let rep = reports.iter().find(|x| x.annotator_id == r.annotator_id).expect("ranked");
                VitalityRow {
                    annotator_id: r.annotator_id.clone(),
                    mean_v: r.mean_v,
                    median_v: rep.median_v,
                    effect: if r.mean_v < 0.0 {
                        "decreases consensus"
                    } else {
                        "supports consensus"
                    },
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut classes = Vec::new();
    for label in &set.labels {
        let class_cfg = AgreementConfig {
            class: Some(label.clone()),
            ..cfg.clone()
        };
        let alpha = match agreement_report(set, &class_cfg) {
            Ok(r) => Some(r.mean),
            Err(Error::InsufficientData(_)) => None,
            Err(e) => return Err(e.into()),
        };
        classes.push(ClassRow {
            class: label.clone(),
            alpha,
            band: alpha.map(classify_alpha),
        });
    }
    classes.sort_by(|a, b| {
        let key = |c: &ClassRow| c.alpha.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then_with(|| a.class.cmp(&b.class))
    });
    Ok(Summary {
        images: set.images.len(),
        annotators: set.annotators.len(),
        boxes: set.boxes.len(),
        drop_fraction: cfg.drop_fraction,
        seed: cfg.seed,
        agreement: BandedAlpha {
            mean: overall.mean,
            median: overall.median,
            band: overall.band,
        },
        images_skipped: overall.skipped.len(),
        vitality,
        classes,
    })
}

pub fn render_text(s: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} images, {} annotators, {} boxes (seed {}, drop fraction {})",
        s.images, s.annotators, s.boxes, s.seed, s.drop_fraction
    );
    let _ = writeln!(
        out,
        "agreement: mean alpha {:.4}, median {:.4} ({})",
        s.agreement.mean,
        s.agreement.median,
        s.agreement.band
    );
    if s.images_skipped > 0 {
        let _ = writeln!(out, "skipped images: {}", s.images_skipped);
    }
    out.push('\n');
    if s.vitality.is_empty() {
        out.push_str("vitality: needs at least three annotators\n");
    } else {
        out.push_str("annotator vitality, best first:\n");
        for v in &s.vitality {
            let _ = writeln!(
                out,
                "  {:<16} mean V {:+.4}  median V {:+.4}  {}",
                v.annotator_id, v.mean_v, v.median_v, v.effect
            );
        }
    }
    out.push('\n');
    out.push_str("class difficulty, hardest first:\n");
    for c in &s.classes {
        match (c.alpha, c.band) {
            (Some(a), Some(b)) => {
                let _ = writeln!(out, "  {:<16} alpha {:.4} ({})", c.class, a, b);
            }
            _ => {
                let _ = writeln!(out, "  {:<16} not measurable", c.class);
            }
        }
    }
    out
}
