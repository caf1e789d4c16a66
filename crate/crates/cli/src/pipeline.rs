//! `annoqa run`: validate → agreement → vitality → difficulty → curate → eval
//! driven by one JSON config, writing one report file per stage.

use std::path::{Path, PathBuf};

use annoqa_core::agreement::{agreement_report, AgreementConfig};
use annoqa_core::curation::{build_gt_mixed, build_gt_single, original_gt, GroundTruthSet, Recipe};
use annoqa_core::datamodel::{parse_json, validate, AnnotationSet, LabelMap};
use annoqa_core::detect_eval::{evaluate, Averaging, CapScope, EvalConfig};
use annoqa_core::quality::{class_difficulty_all, rank_annotators, Ranking};
use serde::{Deserialize, Serialize};

use crate::args::Format;
use crate::commands::{load_set, policy_pick, read, vitality_bundle};
use crate::error::{CliError, CliResult};
use crate::output::{self, render, write_file};

pub const FAILURE_MARKER: &str = "failed_stage.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Agreement,
    Vitality,
    Difficulty,
    Curate,
    Eval,
}

impl Stage {
    const ALL: [Stage; 6] = [
        Stage::Validate,
        Stage::Agreement,
        Stage::Vitality,
        Stage::Difficulty,
        Stage::Curate,
        Stage::Eval,
    ];

    fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Agreement => "agreement",
            Stage::Vitality => "vitality",
            Stage::Difficulty => "difficulty",
            Stage::Curate => "curate",
            Stage::Eval => "eval",
        }
    }

    fn report_stem(self) -> &'static str {
        match self {
            Stage::Validate => "validation",
            Stage::Curate => "ground_truth",
            s => s.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopPolicy {
    TopK(usize),
    MinVitality(f64),
}

impl Default for TopPolicy {
    fn default() -> Self {
        TopPolicy::MinVitality(0.0)
    }
}

fn default_drop_fraction() -> f64 {
    0.2
}

fn default_iou_threshold() -> f64 {
    0.5
}

fn default_recipe() -> Recipe {
    Recipe::MixedTop
}

fn default_format() -> Format {
    Format::Json
}

/// Relative paths resolve against the directory of the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub skeleton: Option<PathBuf>,
    #[serde(default)]
    pub label_map: Option<PathBuf>,
    #[serde(default)]
    pub predictions: Option<PathBuf>,
    /// Reference labels for the `original` recipe.
    #[serde(default)]
    pub original_gt: Option<PathBuf>,
    #[serde(default)]
    pub original_label_map: Option<PathBuf>,
    pub seed: u64,
    #[serde(default = "default_drop_fraction")]
    pub drop_fraction: f64,
    #[serde(default = "default_iou_threshold")]
    pub iou_threshold: f64,
    #[serde(default)]
    pub cap: Option<usize>,
    #[serde(default)]
    pub cap_scope: CapScope,
    #[serde(default)]
    pub per_class: bool,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub top: TopPolicy,
    #[serde(default = "default_recipe")]
    pub gt_recipe: Recipe,
    pub output_dir: PathBuf,
    #[serde(default = "default_format")]
    pub format: Format,
    /// Stages to run; all of them when absent. Always run in pipeline order.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let payload = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_slice(&payload)
            .map_err(|e| CliError::Usage(format!("run config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.input);
        resolve(&mut cfg.output_dir);
        for p in [
            &mut cfg.skeleton,
            &mut cfg.label_map,
            &mut cfg.predictions,
            &mut cfg.original_gt,
            &mut cfg.original_label_map,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        Ok(cfg)
    }

    fn check(&self) -> CliResult<()> {
        for p in [&Some(self.input.clone()), &self.skeleton, &self.label_map, &self.predictions, &self.original_gt, &self.original_label_map]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(CliError::Usage(format!("{} is not a readable file", p.display())));
            }
        }
        let stages = self.stages();
        if stages.contains(&Stage::Eval) {
            if self.predictions.is_none() {
                return Err(CliError::Usage("the eval stage needs `predictions`".into()));
            }
            if !stages.contains(&Stage::Curate) {
                return Err(CliError::Usage("the eval stage needs the curate stage".into()));
            }
        }
        if stages.contains(&Stage::Curate) && self.gt_recipe == Recipe::Original && self.original_gt.is_none() {
            return Err(CliError::Usage("the original recipe needs `original_gt`".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> Vec<Stage> {
        match &self.stages {
            None => Stage::ALL.to_vec(),
            Some(s) => {
                let mut s = s.clone();
                s.sort();
                s.dedup();
                s
            }
        }
    }

    fn agreement(&self) -> AgreementConfig {
        AgreementConfig {
            drop_fraction: self.drop_fraction,
            seed: self.seed,
            class: None,
            excluded: Vec::new(),
        }
    }

    fn eval(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.iou_threshold,
            cap: self.cap,
            cap_scope: self.cap_scope,
            per_class: self.per_class,
            averaging: self.averaging,
        }
    }

    fn report_path(&self, stage: Stage) -> PathBuf {
        let ext = match (stage, self.format) {
            (Stage::Curate, _) | (_, Format::Json) => "json",
            (_, Format::Csv) => "csv",
        };
        self.output_dir.join(format!("{}.{ext}", stage.report_stem()))
    }
}

#[derive(Debug, Serialize)]
struct FailureMarker<'a> {
    failed_stage: &'a str,
    exit_code: i32,
    message: String,
    completed: Vec<&'a str>,
}

struct State {
    set: Option<AnnotationSet>,
    ranking: Option<Ranking>,
    gt: Option<GroundTruthSet>,
}

/// Runs the configured stages and returns the report files written. On a
/// stage failure, reports of earlier stages stay in place and a
/// [`FAILURE_MARKER`] file names the failing stage.
pub fn run_pipeline(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.check()?;
    let marker = cfg.output_dir.join(FAILURE_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| CliError::write(&marker, e))?;
    }
    let mut state = State {
        set: None,
        ranking: None,
        gt: None,
    };
    let mut written = Vec::new();
    let mut completed = Vec::new();
    for stage in cfg.stages() {
        match run_stage(cfg, stage, &mut state) {
            Ok(bytes) => {
                let path = cfg.report_path(stage);
                write_file(&path, &bytes)?;
                written.push(path);
                completed.push(stage.name());
            }
            Err(e) => {
                let err = CliError::Stage {
                    stage: stage.name().to_string(),
                    source: Box::new(e),
                };
                let m = FailureMarker {
                    failed_stage: stage.name(),
                    exit_code: err.exit_code(),
                    message: err.to_string(),
                    completed,
                };
                write_file(&marker, &output::json_bytes(&m))?;
                return Err(err);
            }
        }
    }
    Ok(written)
}

fn input_set<'a>(cfg: &RunConfig, state: &'a mut State) -> CliResult<&'a AnnotationSet> {
    if state.set.is_none() {
        state.set = Some(load_set(&cfg.input, cfg.skeleton.as_deref(), cfg.label_map.as_deref())?);
    }
    Ok(state.set.as_ref().expect("just loaded"))
}

fn ranking<'a>(cfg: &RunConfig, state: &'a mut State) -> CliResult<&'a Ranking> {
    if state.ranking.is_none() {
        let set = input_set(cfg, state)?;
        let reports = annoqa_core::quality::vitality_all(set, &cfg.agreement())?;
        state.ranking = Some(rank_annotators(&reports)?);
    }
    Ok(state.ranking.as_ref().expect("just computed"))
}

fn run_stage(cfg: &RunConfig, stage: Stage, state: &mut State) -> CliResult<Vec<u8>> {
    let format = cfg.format;
    match stage {
        Stage::Validate => {
            let r = validate(input_set(cfg, state)?);
            Ok(render(&r, || output::validation_table(&r), format))
        }
        Stage::Agreement => {
            let r = agreement_report(input_set(cfg, state)?, &cfg.agreement())?;
            Ok(render(&r, || output::agreement_table(&r), format))
        }
        Stage::Vitality => {
            let b = vitality_bundle(input_set(cfg, state)?, &cfg.agreement())?;
            let bytes = render(&b, || output::vitality_table(&b.reports), format);
            state.ranking = Some(b.ranking);
            Ok(bytes)
        }
        Stage::Difficulty => {
            let set = input_set(cfg, state)?;
            let reports = class_difficulty_all(set, &cfg.agreement())?;
            let annotators: Vec<String> = set.annotators.iter().map(|a| a.id.clone()).collect();
            Ok(render(&reports, || output::difficulty_table(&reports, &annotators), format))
        }
        Stage::Curate => {
            let gt = match cfg.gt_recipe {
                Recipe::Original => {
                    let path = cfg.original_gt.as_deref().expect("checked");
                    let original = load_set(path, None, cfg.original_label_map.as_deref())?;
                    original_gt(&original, &LabelMap::default())?
                }
                recipe => {
                    let (k, v) = match cfg.top {
                        TopPolicy::TopK(k) => (Some(k), None),
                        TopPolicy::MinVitality(v) => (None, Some(v)),
                    };
                    let top = policy_pick(ranking(cfg, state)?, k, v);
                    if top.is_empty() {
                        return Err(CliError::Core(annoqa_core::Error::Config(format!(
                            "top-annotator policy {:?} selects nobody",
                            cfg.top
                        ))));
                    }
                    let set = input_set(cfg, state)?;
                    if recipe == Recipe::MixedTop {
                        build_gt_mixed(set, &top, &[], cfg.seed)?
                    } else {
                        build_gt_single(set, &top, &[], cfg.seed)?
                    }
                }
            };
            let bytes = output::json_bytes(&gt);
            state.gt = Some(gt);
            Ok(bytes)
        }
        Stage::Eval => {
            let gt = state.gt.as_ref().expect("curate runs before eval");
            let path = cfg.predictions.as_deref().expect("checked");
            let preds = parse_json(&read(path)?)?.set;
            let r = evaluate(&preds, &gt.base, &cfg.eval())?;
            Ok(render(&r, || output::eval_table(&r), format))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"input": "a.json", "seed": 3, "output_dir": "out"}"#).unwrap();
        assert_eq!(cfg.drop_fraction, 0.2);
        assert_eq!(cfg.iou_threshold, 0.5);
        assert_eq!(cfg.top, TopPolicy::MinVitality(0.0));
        assert_eq!(cfg.gt_recipe, Recipe::MixedTop);
        assert_eq!(cfg.stages(), Stage::ALL.to_vec());
    }

    #[test]
    fn seed_is_required() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"input": "a.json", "output_dir": "out"}"#).is_err());
    }

    #[test]
    fn top_policy_forms() {
        let k: TopPolicy = serde_json::from_str(r#"{"top_k": 3}"#).unwrap();
        assert_eq!(k, TopPolicy::TopK(3));
        let v: TopPolicy = serde_json::from_str(r#"{"min_vitality": -0.01}"#).unwrap();
        assert_eq!(v, TopPolicy::MinVitality(-0.01));
    }

    #[test]
    fn stages_run_in_pipeline_order() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"input": "a.json", "seed": 3, "output_dir": "out", "stages": ["vitality", "validate", "vitality"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.stages(), vec![Stage::Validate, Stage::Vitality]);
    }
}
