use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omickriging::evaluation::{DEFAULT_FOLDS, DEFAULT_REPEATS};
use omickriging::grid::{DEFAULT_SEARCH_REPEATS, DEFAULT_STEP};

#[derive(Debug, Parser)]
#[command(name = "omickrig", version, about = "Phenotype prediction by kriging over omic similarity matrices")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "OMICKRIG_THREADS")]
    pub threads: Option<usize>,

    /// Log level: error, warn, info, debug.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Genetic relationship matrix from a dosage TSV, written as a GCTA triplet.
    MakeGrm(MakeGrmArgs),
    /// Correlation similarity from a continuous omic TSV, written as a GCTA triplet.
    MakeSimilarity(MakeSimilarityArgs),
    /// Repeated cross-validated kriging at fixed weights or after a grid search.
    Krige(KrigeArgs),
    /// Grid search over component weights, then a full evaluation at the best point.
    Gridsearch(GridsearchArgs),
    /// Fold-wise polygenic-score baseline.
    Polyscore(PolyscoreArgs),
    /// Synthetic cohort under the additive model.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct MakeGrmArgs {
    /// Dosage TSV (samples × markers, values in [0, 2], NA for missing).
    #[arg(long)]
    pub dosage: PathBuf,
    /// Output prefix; writes PREFIX.grm.{id,bin,N.bin}.
    #[arg(long)]
    pub out: PathBuf,
    /// Markers with allele frequency ≤ MAF or ≥ 1 − MAF are excluded.
    #[arg(long, default_value_t = 0.001)]
    pub maf: f64,
    /// Reference allele frequencies (TSV: marker, frequency) instead of in-sample estimates.
    #[arg(long)]
    pub freq: Option<PathBuf>,
    /// Use GCTA's self-relatedness estimator on the diagonal.
    #[arg(long)]
    pub gcta_diagonal: bool,
}

#[derive(Debug, Args)]
pub struct MakeSimilarityArgs {
    /// Continuous omic TSV (samples × features, NA for missing).
    #[arg(long)]
    pub input: PathBuf,
    /// Output prefix; writes PREFIX.grm.{id,bin,N.bin}.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraitArg {
    Quantitative,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    R2Signed,
    R2,
    Auc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Universal,
    Simple,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Phenotype TSV: ID, phenotype, then optional covariate columns.
    #[arg(long)]
    pub pheno: PathBuf,
    #[arg(long = "trait", value_enum, default_value_t = TraitArg::Quantitative)]
    pub trait_kind: TraitArg,
    /// Folds per repeat.
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// Random partitions to evaluate.
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Default: r2-signed for quantitative traits, auc for binary ones.
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Output prefix; writes PREFIX.report.json and PREFIX.predictions.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KrigingInputs {
    /// Similarity matrix as NAME=PREFIX (GCTA triplet); repeat per component.
    #[arg(long = "matrix", required = true, value_name = "NAME=PREFIX")]
    pub matrices: Vec<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Universal)]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Grid spacing; must be 1/L for an integer L.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    /// Repeats per grid point during the search.
    #[arg(long, default_value_t = DEFAULT_SEARCH_REPEATS)]
    pub search_repeats: usize,
}

#[derive(Debug, Args)]
pub struct KrigeArgs {
    #[command(flatten)]
    pub inputs: KrigingInputs,
    #[command(flatten)]
    pub cv: CvArgs,
    /// Component weight as NAME=THETA; components without one get 0.
    #[arg(long = "weight", value_name = "NAME=THETA", conflicts_with = "grid_search")]
    pub weights: Vec<String>,
    /// Choose the weights by grid search instead of --weight.
    #[arg(long)]
    pub grid_search: bool,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct GridsearchArgs {
    #[command(flatten)]
    pub inputs: KrigingInputs,
    #[command(flatten)]
    pub cv: CvArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreModeArg {
    Marginal,
    Joint,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("selection").required(true).args(["top_k", "bonferroni_alpha"]))]
pub struct PolyscoreArgs {
    /// Dosage TSV.
    #[arg(long)]
    pub dosage: PathBuf,
    #[command(flatten)]
    pub cv: CvArgs,
    #[arg(long, value_enum)]
    pub mode: ScoreModeArg,
    /// Keep the K markers with the smallest training p-values.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Keep markers with training p < ALPHA / markers.
    #[arg(long)]
    pub bonferroni_alpha: Option<f64>,
    /// Principal components of the full-cohort GRM added in joint mode.
    #[arg(long, default_value_t = 0)]
    pub n_pcs: usize,
    /// GRM prefix for the principal components (default: built from --dosage).
    #[arg(long)]
    pub grm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 2000)]
    pub m_genetic: usize,
    #[arg(long, default_value_t = 0)]
    pub l_expression: usize,
    #[arg(long, default_value_t = 0)]
    pub l_other: usize,
    #[arg(long, default_value_t = 0.5)]
    pub theta_g: f64,
    #[arg(long, default_value_t = 0.0)]
    pub theta_t: f64,
    #[arg(long, default_value_t = 0.0)]
    pub theta_o: f64,
    #[arg(long = "trait", value_enum, default_value_t = TraitArg::Quantitative)]
    pub trait_kind: TraitArg,
    /// Case fraction for a binary trait.
    #[arg(long, default_value_t = 0.5)]
    pub case_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output prefix; writes PREFIX.<component>.tsv, PREFIX.pheno.tsv and PREFIX.truth.json.
    #[arg(long)]
    pub out: PathBuf,
}
