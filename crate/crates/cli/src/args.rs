use std::path::PathBuf;

use annoqa_core::detect_eval::{Averaging, CapScope};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "annoqa", version, about = "Annotation quality measurement for bounding-box datasets")]
pub struct Cli {
    /// Print the JSON schema of the canonical annotation format and exit.
    #[arg(long)]
    pub schema: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate an annotation set; report coverage and duplicates.
    Validate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Per-image Krippendorff's alpha over pixel observations.
    Agreement {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        agreement: AgreementArgs,
        /// Restrict to one class channel.
        #[arg(long)]
        class: Option<String>,
        /// Write one PGM per image, annotator and class into this directory.
        #[arg(long, value_name = "DIR")]
        dump_raster: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Leave-one-out annotator vitality.
    Vitality {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        agreement: AgreementArgs,
        /// Report a single annotator instead of all of them.
        #[arg(long)]
        annotator: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Per-class agreement and vitality.
    Difficulty {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        agreement: AgreementArgs,
        #[arg(long)]
        class: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Build a ground-truth set or a leave-annotator-out set.
    Curate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        recipe: RecipeArg,
        #[command(flatten)]
        agreement: AgreementArgs,
        #[command(flatten)]
        top: TopArgs,
        /// Restrict the ground truth to these images (comma separated).
        #[arg(long, value_delimiter = ',')]
        images: Vec<String>,
        /// Annotator removed by the drop-annotator recipe.
        #[arg(long)]
        annotator: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Score predictions against a ground-truth set.
    Eval {
        /// Scored detections in canonical JSON.
        #[arg(long)]
        predictions: PathBuf,
        /// Ground truth: a curated set or a plain annotation set.
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate a synthetic corpus from a simulation config.
    Simulate {
        /// JSON simulation config (scene, annotators, optional detector).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scene seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Human-readable summary with agreement bands, vitality ranking and class difficulty.
    Report {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        agreement: AgreementArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
    /// Run the full pipeline described by a JSON run config.
    Run {
        /// JSON run config; relative paths resolve against its directory.
        config: PathBuf,
        /// Overrides the output directory of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Annotation file: canonical JSON, or CSV when --skeleton is given.
    pub input: PathBuf,
    /// JSON set supplying images, annotators and labels for CSV input.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// JSON label map ({"rename": {...}, "drop": [...]}).
    #[arg(long)]
    pub label_map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// Seed for the pixel drop.
    #[arg(long)]
    pub seed: u64,
    /// Fraction of pixels dropped per image.
    #[arg(long, default_value_t = 0.2)]
    pub drop_fraction: f64,
    /// Leave these annotators out of the rater pool.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TopArgs {
    /// Explicit top annotators (comma separated).
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["top_k", "min_vitality"])]
    pub top: Vec<String>,
    /// Take the k annotators with the highest mean vitality.
    #[arg(long, conflicts_with = "min_vitality")]
    pub top_k: Option<usize>,
    /// Take every annotator whose mean vitality is at least this value.
    #[arg(long, allow_hyphen_values = true)]
    pub min_vitality: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Keep at most this many predictions, highest score first.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long, value_enum, default_value = "global")]
    pub cap_scope: CapScopeArg,
    /// Add per-class metrics.
    #[arg(long)]
    pub per_class: bool,
    #[arg(long, value_enum, default_value = "micro")]
    pub averaging: AveragingArg,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecipeArg {
    MixedTop,
    SingleTop,
    Original,
    DropAnnotator,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CapScopeArg {
    Global,
    PerImage,
}

impl From<CapScopeArg> for CapScope {
    fn from(c: CapScopeArg) -> Self {
        match c {
            CapScopeArg::Global => CapScope::Global,
            CapScopeArg::PerImage => CapScope::PerImage,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::Macro => Averaging::Macro,
        }
    }
}
