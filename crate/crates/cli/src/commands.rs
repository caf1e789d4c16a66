use std::path::{Path, PathBuf};

use annoqa_core::agreement::{agreement_report, AgreementConfig};
use annoqa_core::curation::{build_gt_mixed, build_gt_single, drop_annotator, original_gt, GroundTruthSet};
use annoqa_core::datamodel::{
    apply_label_mapping, parse_csv, parse_json, validate, AnnotationSet, LabelMap, ValidationReport,
};
use annoqa_core::detect_eval::{evaluate, EvalConfig, EvalReport};
use annoqa_core::quality::{class_difficulty, class_difficulty_all, rank_annotators, vitality, vitality_all, Ranking, VitalityReport};
use annoqa_core::raster::rasterize;
use annoqa_core::synth::SimulationConfig;
use serde::Serialize;

use crate::args::{AgreementArgs, EvalArgs, Format, InputArgs, OutputArgs, RecipeArg, ReportFormat, TopArgs};
use crate::error::{CliError, CliResult};
use crate::output::{self, emit, render, write_file};
use crate::summary;

pub fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::read(path, e))
}

pub fn load_label_map(path: Option<&Path>) -> CliResult<Option<LabelMap>> {
    path.map(|p| Ok(LabelMap::from_json(&read(p)?)?)).transpose()
}

/// Canonical JSON, or CSV rows resolved against a JSON skeleton. Clamp
/// warnings go to stderr.
pub fn load_set(input: &Path, skeleton: Option<&Path>, label_map: Option<&Path>) -> CliResult<AnnotationSet> {
    let map = load_label_map(label_map)?;
    let payload = read(input)?;
    let parsed = match skeleton {
        Some(sk) => {
            let skeleton = parse_json(&read(sk)?)?.set;
            parse_csv(&payload, &skeleton, map.as_ref())?
        }
        None => {
            let mut parsed = parse_json(&payload)?;
            if let Some(map) = &map {
                parsed.set = apply_label_mapping(&parsed.set, map)?.0;
            }
            parsed
        }
    };
    for w in &parsed.warnings {
        eprintln!(
            "warning: record {} ({}, {}): box {:?} clamped to {:?}",
            w.record, w.image_id, w.annotator_id, w.original, w.clamped
        );
    }
    Ok(parsed.set)
}

fn load_input(input: &InputArgs) -> CliResult<AnnotationSet> {
    load_set(&input.input, input.skeleton.as_deref(), input.label_map.as_deref())
}

pub fn agreement_config(a: &AgreementArgs) -> AgreementConfig {
    AgreementConfig {
        drop_fraction: a.drop_fraction,
        seed: a.seed,
        class: None,
        excluded: a.exclude.clone(),
    }
}

/// Ground truth file: a curated set (with provenance) or a plain annotation set.
pub fn load_gt(path: &Path) -> CliResult<AnnotationSet> {
    let payload = read(path)?;
    let is_curated = serde_json::from_slice::<serde_json::Value>(&payload)
        .map(|v| v.get("provenance").is_some())
        .unwrap_or(false);
    if is_curated {
        Ok(GroundTruthSet::from_json(&payload)?.base)
    } else {
        Ok(parse_json(&payload)?.set)
    }
}

pub fn eval_config(e: &EvalArgs) -> EvalConfig {
    EvalConfig {
        iou_threshold: e.iou_threshold,
        cap: e.cap,
        cap_scope: e.cap_scope.into(),
        per_class: e.per_class,
        averaging: e.averaging.into(),
    }
}

pub fn validate_cmd(input: &InputArgs, out: &OutputArgs) -> CliResult<()> {
    let set = load_input(input)?;
    let report: ValidationReport = validate(&set);
    emit(&render(&report, || output::validation_table(&report), out.format), out.out.as_deref())
}

pub fn agreement_cmd(
    input: &InputArgs,
    a: &AgreementArgs,
    class: Option<&str>,
    dump: Option<&Path>,
    out: &OutputArgs,
) -> CliResult<()> {
    let set = load_input(input)?;
    let mut cfg = agreement_config(a);
    cfg.class = class.map(String::from);
    if let Some(dir) = dump {
        dump_rasters(&set, dir)?;
    }
    let report = agreement_report(&set, &cfg)?;
    emit(&render(&report, || output::agreement_table(&report), out.format), out.out.as_deref())
}

fn dump_rasters(set: &AnnotationSet, dir: &Path) -> CliResult<()> {
    let by_image = set.boxes_by_image();
    let empty = Default::default();
    for image in &set.images {
        let per_annotator = by_image.get(image.id.as_str()).unwrap_or(&empty);
        for a in &set.annotators {
            if !set.participates(&image.id, &a.id) {
                continue;
            }
            let boxes = per_annotator.get(a.id.as_str()).cloned().unwrap_or_default();
            let stack = rasterize(image, &a.id, &boxes, &set.labels)?;
            for (c, label) in set.labels.iter().enumerate() {
                let path = dir.join(format!("{}__{}__{}.pgm", image.id, a.id, label));
                write_file(&path, &stack.to_pgm(c))?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
pub struct VitalityBundle {
    pub reports: Vec<VitalityReport>,
    pub ranking: Ranking,
}

pub fn vitality_bundle(set: &AnnotationSet, cfg: &AgreementConfig) -> CliResult<VitalityBundle> {
    let reports = vitality_all(set, cfg)?;
    let ranking = rank_annotators(&reports)?;
    Ok(VitalityBundle { reports, ranking })
}

pub fn vitality_cmd(input: &InputArgs, a: &AgreementArgs, annotator: Option<&str>, out: &OutputArgs) -> CliResult<()> {
    let set = load_input(input)?;
    let cfg = agreement_config(a);
    let bytes = match annotator {
        Some(id) => {
            let r = vitality(&set, id, &cfg)?;
            render(&r, || output::vitality_table(std::slice::from_ref(&r)), out.format)
        }
        None => {
            let b = vitality_bundle(&set, &cfg)?;
            render(&b, || output::vitality_table(&b.reports), out.format)
        }
    };
    emit(&bytes, out.out.as_deref())
}

pub fn difficulty_cmd(input: &InputArgs, a: &AgreementArgs, class: Option<&str>, out: &OutputArgs) -> CliResult<()> {
    let set = load_input(input)?;
    let cfg = agreement_config(a);
    let reports = match class {
        Some(c) => vec![class_difficulty(&set, c, &cfg)?],
        None => class_difficulty_all(&set, &cfg)?,
    };
    let annotators: Vec<String> = set.annotators.iter().map(|a| a.id.clone()).collect();
    emit(
        &render(&reports, || output::difficulty_table(&reports, &annotators), out.format),
        out.out.as_deref(),
    )
}

/// Top annotators: explicit list, or derived from a vitality ranking.
pub fn select_top(set: &AnnotationSet, cfg: &AgreementConfig, top: &TopArgs) -> CliResult<Vec<String>> {
    if !top.top.is_empty() {
        return Ok(top.top.clone());
    }
    if top.top_k.is_none() && top.min_vitality.is_none() {
        return Err(CliError::Usage("one of --top, --top-k or --min-vitality is required".into()));
    }
    let ranking = rank_annotators(&vitality_all(set, cfg)?)?;
    Ok(policy_pick(&ranking, top.top_k, top.min_vitality))
}

pub fn policy_pick(ranking: &Ranking, top_k: Option<usize>, min_vitality: Option<f64>) -> Vec<String> {
    match (top_k, min_vitality) {
        (Some(k), _) => ranking.top_k(k),
        (None, Some(v)) => ranking.at_least(v),
        (None, None) => ranking.top_k(ranking.order.len()),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn curate_cmd(
    input: &InputArgs,
    recipe: RecipeArg,
    a: &AgreementArgs,
    top: &TopArgs,
    images: &[String],
    annotator: Option<&str>,
    out: &OutputArgs,
) -> CliResult<()> {
    let set = load_input(input)?;
    let cfg = agreement_config(a);
    let bytes = match recipe {
        RecipeArg::DropAnnotator => {
            let k = annotator.ok_or_else(|| CliError::Usage("--annotator is required for drop-annotator".into()))?;
            let dropped = drop_annotator(&set, k)?;
            match out.format {
                Format::Json => output::json_bytes(&dropped),
                Format::Csv => output::boxes_table(&dropped).to_csv(),
            }
        }
        RecipeArg::Original => {
            let gt = original_gt(&set, &LabelMap::default())?;
            render(&gt, || output::provenance_table(&gt), out.format)
        }
        RecipeArg::MixedTop | RecipeArg::SingleTop => {
            let chosen = select_top(&set, &cfg, top)?;
            let gt = if recipe == RecipeArg::MixedTop {
                build_gt_mixed(&set, &chosen, images, a.seed)?
            } else {
                build_gt_single(&set, &chosen, images, a.seed)?
            };
            render(&gt, || output::provenance_table(&gt), out.format)
        }
    };
    emit(&bytes, out.out.as_deref())
}

pub fn eval_report(predictions: &Path, gt: &Path, cfg: &EvalConfig) -> CliResult<EvalReport> {
    let preds = parse_json(&read(predictions)?)?.set;
    let gt = load_gt(gt)?;
    Ok(evaluate(&preds, &gt, cfg)?)
}

pub fn eval_cmd(predictions: &Path, gt: &Path, e: &EvalArgs, out: &OutputArgs) -> CliResult<()> {
    let report = eval_report(predictions, gt, &eval_config(e))?;
    emit(&render(&report, || output::eval_table(&report), out.format), out.out.as_deref())
}

pub fn simulate_cmd(config: &Path, seed: Option<u64>, out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut cfg = SimulationConfig::from_json(&read(config)?)?;
    if let Some(s) = seed {
        cfg.scene.seed = s;
    }
    let sim = cfg.run()?;
    let mut written = Vec::new();
    let mut put = |name: &str, set: &AnnotationSet| -> CliResult<()> {
        let path = out.join(name);
        write_file(&path, &output::json_bytes(set))?;
        written.push(path);
        Ok(())
    };
    put("truth.json", &sim.truth)?;
    put("annotations.json", &sim.annotations)?;
    if let Some(p) = &sim.predictions {
        put("predictions.json", p)?;
    }
    Ok(written)
}

pub fn report_cmd(input: &InputArgs, a: &AgreementArgs, format: ReportFormat, out: Option<&Path>) -> CliResult<()> {
    let set = load_input(input)?;
    let s = summary::summarize(&set, &agreement_config(a))?;
    let bytes = match format {
        ReportFormat::Text => summary::render_text(&s).into_bytes(),
        ReportFormat::Json => output::json_bytes(&s),
    };
    emit(&bytes, out)
}
