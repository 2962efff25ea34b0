//! Concept labelers and prevalence statistics.
//!
//! Overlap: every content word of the hypothesis also appears in the
//! premise. Negation: any negation-lexicon token appears in the hypothesis.
//! Both operate on whitespace tokens, case-insensitively. Examples encode a
//! premise/hypothesis split with a `[SEP]` token; without one, the whole
//! token list is treated as the hypothesis.
//!
//! The stopword list is a fixed shipped snapshot so labels are reproducible
//! across environments; the negation lexicon default is a design choice
//! (the common English negators).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::train::{train_logistic, TrainConfig};
use crate::model::{predict, BowEncoder, EventSpace, Example, LinearHead};

/// Separator token marking the premise/hypothesis boundary.
pub const SEPARATOR_TOKEN: &str = "[sep]";

/// Shipped stopword snapshot, one token per line.
pub const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Shipped pronoun lexicon for the demographic highlight extractor.
pub const DEFAULT_PRONOUNS: &str = include_str!("../../data/pronouns_en.txt");

/// Default negation lexicon. The source method names only "no" as an
/// example; this fixed set is our reproducible choice.
pub const DEFAULT_NEGATION_LEXICON: &[&str] =
    &["no", "not", "never", "none", "nothing", "neither", "nor", "n't"];

fn lexicon_from_lines(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn default_stopword_set() -> BTreeSet<String> {
    lexicon_from_lines(DEFAULT_STOPWORDS)
}

pub fn load_stopwords(path: &std::path::Path) -> Result<BTreeSet<String>> {
    Ok(lexicon_from_lines(&std::fs::read_to_string(path)?))
}

fn pronoun_set() -> &'static BTreeSet<String> {
    use std::sync::OnceLock;
    static SET: OnceLock<BTreeSet<String>> = OnceLock::new();
    SET.get_or_init(|| lexicon_from_lines(DEFAULT_PRONOUNS))
}

pub fn is_pronoun(token: &str) -> bool {
    pronoun_set().contains(&token.to_lowercase())
}

/// Split tokens at the first `[SEP]` into (premise, hypothesis). Without a
/// separator the premise is empty and everything is hypothesis.
pub fn split_premise_hypothesis(tokens: &[String]) -> (&[String], &[String]) {
    match tokens
        .iter()
        .position(|t| t.to_lowercase() == SEPARATOR_TOKEN)
    {
        Some(i) => (&tokens[..i], &tokens[i + 1..]),
        None => (&tokens[..0], tokens),
    }
}

/// 1 iff every non-stopword hypothesis token appears in the premise (in any
/// order). A hypothesis of only stopwords is vacuously 1.
pub fn concept_label_overlap(
    premise_tokens: &[String],
    hypothesis_tokens: &[String],
    stopwords: &BTreeSet<String>,
) -> u8 {
    let premise: BTreeSet<String> = premise_tokens.iter().map(|t| t.to_lowercase()).collect();
    let all_in = hypothesis_tokens
        .iter()
        .map(|t| t.to_lowercase())
        .filter(|t| !stopwords.contains(t))
        .all(|t| premise.contains(&t));
    u8::from(all_in)
}

/// 1 iff any lexicon token appears in the hypothesis (case-insensitive).
pub fn concept_label_negation(hypothesis_tokens: &[String], lexicon: &[&str]) -> u8 {
    let hit = hypothesis_tokens
        .iter()
        .map(|t| t.to_lowercase())
        .any(|t| lexicon.contains(&t.as_str()));
    u8::from(hit)
}

/// How concept labels for a dataset are produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum ConceptSource {
    /// Premise/hypothesis content-word overlap.
    Overlap,
    /// Negation token in the hypothesis.
    Negation,
    /// Partial-input baseline: train a hypothesis-only desk model and label
    /// an example 1 iff that baseline predicts its gold label.
    HypothesisBaseline,
    /// Read `Example.concept_labels[name]`.
    FromDataset(String),
}

impl ConceptSource {
    /// Parse the CLI syntax: `overlap | negation | hypothesis | from-dataset:NAME`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(name) = s.strip_prefix("from-dataset:") {
            if name.is_empty() {
                return Err(Error::InvalidInput("empty concept name".into()));
            }
            return Ok(ConceptSource::FromDataset(name.to_string()));
        }
        match s {
            "overlap" => Ok(ConceptSource::Overlap),
            "negation" => Ok(ConceptSource::Negation),
            "hypothesis" => Ok(ConceptSource::HypothesisBaseline),
            other => Err(Error::InvalidInput(format!(
                "unknown concept {other:?}; use overlap, negation, hypothesis, or from-dataset:NAME"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ConceptSource::Overlap => "overlap".into(),
            ConceptSource::Negation => "negation".into(),
            ConceptSource::HypothesisBaseline => "hypothesis".into(),
            ConceptSource::FromDataset(name) => name.clone(),
        }
    }

    /// Label every example. Overlap requires a `[SEP]` in each example.
    pub fn label_dataset(
        &self,
        dataset: &[Example],
        stopwords: &BTreeSet<String>,
        seed: u64,
    ) -> Result<Vec<u8>> {
        match self {
            ConceptSource::Overlap => dataset
                .iter()
                .map(|ex| {
                    let (premise, hypothesis) = split_premise_hypothesis(&ex.tokens);
                    if premise.is_empty() {
                        return Err(Error::InvalidConcept(format!(
                            "example {}: overlap needs a [SEP]-separated premise",
                            ex.id
                        )));
                    }
                    Ok(concept_label_overlap(premise, hypothesis, stopwords))
                })
                .collect(),
            ConceptSource::Negation => Ok(dataset
                .iter()
                .map(|ex| {
                    let (_, hypothesis) = split_premise_hypothesis(&ex.tokens);
                    concept_label_negation(hypothesis, DEFAULT_NEGATION_LEXICON)
                })
                .collect()),
            ConceptSource::HypothesisBaseline => hypothesis_baseline_labels(dataset, seed),
            ConceptSource::FromDataset(name) => dataset
                .iter()
                .map(|ex| {
                    ex.concept_labels
                        .as_ref()
                        .and_then(|m| m.get(name))
                        .copied()
                        .ok_or_else(|| {
                            Error::InvalidConcept(format!(
                                "example {} has no concept label {name}",
                                ex.id
                            ))
                        })
                })
                .collect(),
        }
    }
}

/// Feature-subset baseline for the "hypothesis" concept: train a desk model
/// on hypothesis tokens only, then label each example by whether that
/// baseline gets its gold label right.
pub fn hypothesis_baseline_labels(dataset: &[Example], seed: u64) -> Result<Vec<u8>> {
    let hyp_only: Vec<Example> = dataset
        .iter()
        .map(|ex| {
            let (_, hypothesis) = split_premise_hypothesis(&ex.tokens);
            let mut reduced = ex.clone();
            reduced.tokens = hypothesis.to_vec();
            if reduced.tokens.is_empty() {
                reduced.tokens = vec![crate::model::MASK_TOKEN.to_string()];
            }
            reduced
        })
        .collect();
    let encoder = BowEncoder::build(&hyp_only);
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let head = train_logistic(&hyp_only, &encoder, &config)?;
    hyp_only
        .iter()
        .map(|ex| {
            let repr = encoder.encode(ex, &[])?;
            let pred = predict(&head, &repr.h)?;
            Ok(u8::from(pred.fact(&head.event_space) == ex.label))
        })
        .collect()
}

/// Per-class prevalence percentages among concept-positive examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub class: String,
    pub gold_pct: f64,
    pub predicted_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub concept: String,
    /// Percent of the whole dataset carrying the concept.
    pub total_pct: f64,
    /// Empty when no example carries the concept.
    pub per_class: Vec<PrevalenceRow>,
}

/// Compute the prevalence table from parallel gold/predicted label arrays.
pub fn prevalence(
    concept: &str,
    space: &EventSpace,
    gold: &[String],
    predicted: &[String],
    labels: &[u8],
) -> Result<PrevalenceTable> {
    if gold.len() != labels.len() || predicted.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gold, {} predicted, {} concept labels",
            gold.len(),
            predicted.len(),
            labels.len()
        )));
    }
    let total = labels.len();
    let positive: Vec<usize> = (0..total).filter(|i| labels[*i] == 1).collect();
    let total_pct = 100.0 * positive.len() as f64 / total as f64;
    if positive.is_empty() {
        return Ok(PrevalenceTable {
            concept: concept.to_string(),
            total_pct: 0.0,
            per_class: Vec::new(),
        });
    }
    let n_pos = positive.len() as f64;
    let per_class = space
        .classes()
        .iter()
        .map(|class| {
            let gold_n = positive.iter().filter(|i| &gold[**i] == class).count();
            let pred_n = positive.iter().filter(|i| &predicted[**i] == class).count();
            PrevalenceRow {
                class: class.clone(),
                gold_pct: 100.0 * gold_n as f64 / n_pos,
                predicted_pct: 100.0 * pred_n as f64 / n_pos,
            }
        })
        .collect();
    Ok(PrevalenceTable {
        concept: concept.to_string(),
        total_pct,
        per_class,
    })
}

/// Prevalence over a dataset with predictions from the desk model.
pub fn prevalence_desk(
    dataset: &[Example],
    head: &LinearHead,
    encoder: &BowEncoder,
    source: &ConceptSource,
    stopwords: &BTreeSet<String>,
    seed: u64,
) -> Result<PrevalenceTable> {
    let labels = source.label_dataset(dataset, stopwords, seed)?;
    let gold: Vec<String> = dataset.iter().map(|e| e.label.clone()).collect();
    let predicted: Vec<String> = dataset
        .iter()
        .map(|ex| {
            let repr = encoder.encode(ex, &[])?;
            let pred = predict(head, &repr.h)?;
            Ok(pred.fact(&head.event_space).to_string())
        })
        .collect::<Result<_>>()?;
    prevalence(&source.name(), &head.event_space, &gold, &predicted, &labels)
}
