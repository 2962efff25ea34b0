//! Command-line definitions. Command structs double as the run snapshot
//! format: output paths are excluded from serialization so a rerun into a
//! fresh directory reproduces results byte for byte.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cx", version, about = "Contrastive explanations for linear-head classifiers")]
pub struct Cli {
    /// Random seed (falls back to the CX_SEED environment variable).
    #[arg(long, global = true, env = "CX_SEED")]
    pub seed: Option<u64>,

    /// Worker threads for example-level loops (0 = all cores). Output is
    /// identical for any worker count.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train the desk bag-of-features classifier and export its head and
    /// representations.
    Train(TrainArgs),
    /// Rank unigram/bigram highlights of one example against a foil.
    RankFactors(RankFactorsArgs),
    /// Rank foils under a fixed factor, aggregated over a corpus.
    RankFoils(RankFoilsArgs),
    /// Remove a concept by iterative nullspace projection.
    Inlp(InlpArgs),
    /// Apply a trained projection stack to all representations.
    AmnesicApply(AmnesicApplyArgs),
    /// Mean symmetrized KL under the contrastive-only intervention.
    ContrastivePower(ContrastivePowerArgs),
    /// Concept prevalence statistics by gold and predicted class.
    Prevalence(PrevalenceArgs),
    /// Stain a dataset with class-conditional prefix tokens.
    Stain(StainArgs),
    /// Run the staining verification harness on the synthetic corpus.
    VerifyStain(VerifyStainArgs),
    /// Re-execute a command from its config snapshot.
    #[serde(skip)]
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset (JSON Lines, one example per line).
    #[arg(long)]
    pub data: PathBuf,
    /// Output model directory.
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    /// Random-projection dimension (default: identity features).
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RankFactorsArgs {
    /// Model directory or cx-repr file.
    #[arg(long)]
    pub model: PathBuf,
    /// Example id to explain.
    #[arg(long)]
    pub example: String,
    /// Foil class, or "none" for the non-contrastive baseline.
    #[arg(long)]
    pub foil: String,
    /// Candidate space: "1", "2", or "1,2".
    #[arg(long, default_value = "1,2")]
    pub ngrams: String,
    /// Dataset override (defaults to the model directory's dataset).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RankFoilsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Factor: a highlight extractor (pronouns+names, all-ngrams,
    /// first-token), "concept:NAME", or "paired".
    #[arg(long)]
    pub factor: String,
    /// delta or abs-delta (default: delta for highlights, abs-delta for
    /// concepts).
    #[arg(long)]
    pub metric: Option<String>,
    /// mean or median.
    #[arg(long, default_value = "mean")]
    pub aggregation: String,
    /// Trained projection stack (required for concept factors).
    #[arg(long)]
    pub stack: Option<PathBuf>,
    /// Dataset override.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rank for a single example instead of aggregating the corpus.
    #[arg(long)]
    pub example: Option<String>,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InlpArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Concept: overlap, negation, hypothesis, or from-dataset:NAME.
    #[arg(long)]
    pub concept: String,
    /// Dataset override (source of concept labels).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Stopword list override, one token per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 40)]
    pub max_iters: usize,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AmnesicApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ContrastivePowerArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Minimum examples per (fact, foil) cell.
    #[arg(long, default_value_t = 5)]
    pub min_count: usize,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PrevalenceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Concept: overlap, negation, hypothesis, or from-dataset:NAME.
    #[arg(long)]
    pub concept: String,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct StainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Class to stain, or "uniform" for a non-discriminative stain.
    #[arg(long)]
    pub scheme: String,
    #[arg(long, default_value_t = 0.10)]
    pub mask_fraction: f64,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VerifyStainArgs {
    /// Class to stain (sports, finance, weather), or "all" for all three.
    #[arg(long)]
    pub scheme: String,
    #[arg(long, default_value_t = 1000)]
    pub examples_per_class: usize,
    #[arg(long, default_value_t = 0.10)]
    pub mask_fraction: f64,
    #[arg(long)]
    #[serde(skip, default)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    /// A run_config.json written by a previous run.
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
