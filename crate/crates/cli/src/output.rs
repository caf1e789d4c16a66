//! Report rendering. JSON is pretty-printed with a trailing newline; CSV
//! columns are fixed per report type.

use std::io::Write;
use std::path::Path;

use annoqa_core::agreement::AgreementReport;
use annoqa_core::curation::GroundTruthSet;
use annoqa_core::datamodel::{AnnotationSet, ValidationReport};
use annoqa_core::detect_eval::{EvalReport, Metrics};
use annoqa_core::quality::{ClassDifficultyReport, VitalityReport};
use serde::Serialize;

use crate::args::Format;
use crate::error::{CliError, CliResult};

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

pub fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s.into_bytes()
}

pub fn render(value: &impl Serialize, table: impl FnOnce() -> Table, format: Format) -> Vec<u8> {
    match format {
        Format::Json => json_bytes(value),
        Format::Csv => table().to_csv(),
    }
}

pub fn emit(bytes: &[u8], out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, bytes),
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| CliError::write(Path::new("<stdout>"), e)),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::write(path, e))
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn validation_table(r: &ValidationReport) -> Table {
    let mut t = Table::new(&["annotator_id", "coverage", "images"]);
    for (a, c) in &r.coverage {
        let images = r.per_image.values().filter(|who| who.contains(a)).count();
        t.rows.push(vec![a.clone(), num(*c), images.to_string()]);
    }
    t
}

pub fn agreement_table(r: &AgreementReport) -> Table {
    let mut t = Table::new(&["image_id", "alpha", "units", "raters", "degenerate"]);
    for e in &r.per_image {
        t.rows.push(vec![
            e.image_id.clone(),
            num(e.alpha),
            e.units.to_string(),
            e.raters.to_string(),
            e.degenerate.to_string(),
        ]);
    }
    t
}

pub fn vitality_table(reports: &[VitalityReport]) -> Table {
    let mut t = Table::new(&["annotator_id", "mean_V", "median_V", "k_full_mean", "k_loo_mean", "images"]);
    for r in reports {
        t.rows.push(vec![
            r.annotator_id.clone(),
            num(r.mean_v),
            num(r.median_v),
            num(r.k_full_mean),
            num(r.k_loo_mean),
            r.per_image.len().to_string(),
        ]);
    }
    t
}

/// One row per class, one `V_<annotator>` column per annotator.
pub fn difficulty_table(reports: &[ClassDifficultyReport], annotators: &[String]) -> Table {
    let mut header = vec!["class", "mean_class_alpha", "median_class_alpha", "degenerate"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(annotators.iter().map(|a| format!("V_{a}")));
    let mut t = Table { header, rows: Vec::new() };
    for r in reports {
        let mut row = vec![
            r.class.clone(),
            num(r.mean_class_alpha),
            num(r.median_class_alpha),
            r.degenerate.to_string(),
        ];
        row.extend(
            annotators
                .iter()
                .map(|a| r.per_annotator_vitality.get(a).map(|v| num(*v)).unwrap_or_default()),
        );
        t.rows.push(row);
    }
    t
}

pub fn provenance_table(gt: &GroundTruthSet) -> Table {
    let mut t = Table::new(&["image_id", "annotator_id"]);
    for (img, ann) in &gt.provenance {
        t.rows.push(vec![img.clone(), ann.clone()]);
    }
    t
}

pub fn boxes_table(set: &AnnotationSet) -> Table {
    let mut t = Table::new(&["image_id", "annotator_id", "label", "x", "y", "w", "h", "score"]);
    for b in &set.boxes {
        t.rows.push(vec![
            b.image_id.clone(),
            b.annotator_id.clone(),
            b.label.clone(),
            b.bbox.x.to_string(),
            b.bbox.y.to_string(),
            b.bbox.w.to_string(),
            b.bbox.h.to_string(),
            b.score.map(num).unwrap_or_default(),
        ]);
    }
    t
}

fn metrics_row(scope: &str, m: &Metrics) -> Vec<String> {
    vec![
        scope.to_string(),
        m.tp.to_string(),
        m.fp.to_string(),
        m.fn_.to_string(),
        num(m.precision),
        num(m.recall),
        num(m.f1),
        m.misclassified.to_string(),
    ]
}

pub fn eval_table(r: &EvalReport) -> Table {
    let mut t = Table::new(&["scope", "tp", "fp", "fn", "precision", "recall", "f1", "misclassified"]);
    t.rows.push(metrics_row("overall", &r.overall));
    for (class, m) in &r.per_class {
        t.rows.push(metrics_row(class, m));
    }
    t
}
