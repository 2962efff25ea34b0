//! Data-staining verification harness.
//!
//! Plant class-conditional prefix tokens in a synthetic corpus, train the
//! desk model, and check that the framework recovers the stain as the top
//! contrastive factor whenever the stained class is the fact or the foil,
//! and the stained class as the top foil for non-stained facts. Ground
//! truth is known by construction, so this exercises the whole pipeline
//! end to end.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interventions::InterventionContext;
use crate::model::train::{accuracy, train_logistic, TrainConfig};
use crate::model::{predict, BowEncoder, Example, MASK_TOKEN};
use crate::numerics::RngKey;
use crate::par;
use crate::ranking::{
    rank_foils_corpus, Aggregation, CandidateSpace, FactorSpec, FoilChoice, FoilGrid,
    HighlightExtractor, Metric, rank_factors,
};

// Dedicated RNG streams so corpus generation, splitting, and mask selection
// never share draw sequences.
const STREAM_CORPUS: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_MASK_SELECTION: u64 = 3;

/// Class-conditional stain tokens: the stained class gets a distinct
/// prefix, all other classes share another. `stained_class: None` marks a
/// deliberately non-discriminative scheme (identical prefix everywhere).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StainScheme {
    pub stained_class: Option<String>,
    pub prefix_map: BTreeMap<String, String>,
}

/// The (distinct, shared) prefix-token pairs used for the three schemes,
/// in stained-class-index order.
pub const SCHEME_TOKENS: [(&str, &str); 3] =
    [("indeed,", "though,"), ("no,", "indeed,"), ("though,", "and,")];

impl StainScheme {
    /// Stain `stained` with a distinct token, all other classes with a
    /// shared one.
    pub fn discriminative(
        classes: &[String],
        stained: &str,
        stained_token: &str,
        other_token: &str,
    ) -> Result<Self> {
        if !classes.iter().any(|c| c == stained) {
            return Err(Error::InvalidInput(format!("unknown class {stained:?}")));
        }
        if stained_token == other_token {
            return Err(Error::InvalidInput(
                "stained and shared tokens must differ".into(),
            ));
        }
        let prefix_map = classes
            .iter()
            .map(|c| {
                let tok = if c == stained { stained_token } else { other_token };
                (c.clone(), tok.to_string())
            })
            .collect();
        Ok(StainScheme {
            stained_class: Some(stained.to_string()),
            prefix_map,
        })
    }

    /// The standard scheme for class index `idx` of a 3-class space.
    pub fn for_class_index(classes: &[String], idx: usize) -> Result<Self> {
        if idx >= classes.len() || idx >= SCHEME_TOKENS.len() {
            return Err(Error::InvalidInput(format!(
                "scheme index {idx} out of range"
            )));
        }
        let (stained_token, other_token) = SCHEME_TOKENS[idx];
        StainScheme::discriminative(classes, &classes[idx], stained_token, other_token)
    }

    /// Same prefix on every class: the stain carries no signal.
    pub fn uniform(classes: &[String], token: &str) -> Self {
        StainScheme {
            stained_class: None,
            prefix_map: classes
                .iter()
                .map(|c| (c.clone(), token.to_string()))
                .collect(),
        }
    }

    pub fn stain_tokens(&self) -> Vec<&str> {
        let mut toks: Vec<&str> = self.prefix_map.values().map(String::as_str).collect();
        toks.sort_unstable();
        toks.dedup();
        toks
    }
}

/// Prefix every example per the scheme, masking the stain on a seeded
/// `mask_fraction` of them so masked stains stay in-distribution.
pub fn stain_dataset(
    dataset: &[Example],
    scheme: &StainScheme,
    mask_fraction: f64,
    seed: u64,
) -> Result<Vec<Example>> {
    if !(0.0..1.0).contains(&mask_fraction) {
        return Err(Error::InvalidInput(format!(
            "mask fraction {mask_fraction} outside [0, 1)"
        )));
    }
    let stains = scheme.stain_tokens();
    for ex in dataset {
        for tok in &ex.tokens {
            let norm = tok.to_lowercase();
            if stains.contains(&norm.as_str()) {
                return Err(Error::StainCollision(format!(
                    "stain token {norm:?} already present in example {}",
                    ex.id
                )));
            }
        }
    }

    let mut masked = vec![false; dataset.len()];
    let n_masked = (dataset.len() as f64 * mask_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut RngKey::with_stream(seed, STREAM_MASK_SELECTION).rng());
    for i in order.into_iter().take(n_masked) {
        masked[i] = true;
    }

    dataset
        .iter()
        .zip(masked)
        .map(|(ex, is_masked)| {
            let prefix = scheme.prefix_map.get(&ex.label).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "scheme has no prefix for class {:?} (example {})",
                    ex.label, ex.id
                ))
            })?;
            let mut stained = ex.clone();
            let tok = if is_masked {
                MASK_TOKEN.to_string()
            } else {
                prefix.clone()
            };
            stained.tokens = std::iter::once(tok).chain(ex.tokens.iter().cloned()).collect();
            Ok(stained)
        })
        .collect()
}

/// Drop the prefix token from every example, recovering the original
/// dataset byte-for-byte.
pub fn strip_stains(stained: &[Example]) -> Vec<Example> {
    stained
        .iter()
        .map(|ex| {
            let mut orig = ex.clone();
            orig.tokens = ex.tokens[1..].to_vec();
            orig
        })
        .collect()
}

/// Synthetic 3-class topic corpus: disjoint topic lexicons plus a shared
/// filler vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub examples_per_class: usize,
    pub topic_tokens_min: usize,
    pub topic_tokens_max: usize,
    pub filler_tokens_min: usize,
    pub filler_tokens_max: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            examples_per_class: 1000,
            topic_tokens_min: 3,
            topic_tokens_max: 5,
            filler_tokens_min: 4,
            filler_tokens_max: 7,
        }
    }
}

pub const TOPIC_CLASSES: [&str; 3] = ["sports", "finance", "weather"];

const TOPIC_LEXICONS: [&[&str]; 3] = [
    &[
        "goal", "match", "team", "coach", "league", "score", "stadium", "playoff", "referee",
        "tournament", "striker", "defense", "champion", "season", "trophy",
    ],
    &[
        "market", "stock", "bond", "profit", "audit", "revenue", "dividend", "merger", "equity",
        "budget", "inflation", "portfolio", "broker", "asset", "loan",
    ],
    &[
        "rain", "storm", "sunny", "forecast", "cloud", "wind", "humidity", "thunder", "snow",
        "drizzle", "temperature", "front", "hail", "breeze", "fog",
    ],
];

const FILLER_LEXICON: &[&str] = &[
    "the", "a", "of", "today", "report", "about", "with", "news", "update", "daily", "this",
    "that", "new", "latest", "people", "city", "local", "big", "small", "early", "late", "first",
    "second", "last", "many", "few", "more", "very", "quite", "often",
];

/// Generate the desk corpus. Deterministic in the seed.
pub fn generate_topic_corpus(config: &CorpusConfig, seed: u64) -> Vec<Example> {
    let mut rng = RngKey::with_stream(seed, STREAM_CORPUS).rng();
    let mut corpus = Vec::with_capacity(3 * config.examples_per_class);
    for (class_idx, class) in TOPIC_CLASSES.iter().enumerate() {
        let lexicon = TOPIC_LEXICONS[class_idx];
        for i in 0..config.examples_per_class {
            let n_topic = rng.gen_range(config.topic_tokens_min..=config.topic_tokens_max);
            let n_filler = rng.gen_range(config.filler_tokens_min..=config.filler_tokens_max);
            // Topic words sampled without replacement: one count each.
            let mut pool: Vec<&str> = lexicon.to_vec();
            pool.shuffle(&mut rng);
            let mut tokens: Vec<String> =
                pool.into_iter().take(n_topic).map(String::from).collect();
            for _ in 0..n_filler {
                tokens.push(FILLER_LEXICON[rng.gen_range(0..FILLER_LEXICON.len())].to_string());
            }
            tokens.shuffle(&mut rng);
            corpus.push(Example::new(format!("{class}-{i:04}"), tokens, *class));
        }
    }
    corpus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StainHarnessConfig {
    pub corpus: CorpusConfig,
    pub mask_fraction: f64,
    pub train: TrainConfig,
    pub dev_size: usize,
    pub heldout_size: usize,
    /// Dev accuracy below this aborts with a training-failure report.
    pub min_dev_accuracy: f64,
}

impl Default for StainHarnessConfig {
    fn default() -> Self {
        StainHarnessConfig {
            corpus: CorpusConfig::default(),
            mask_fraction: 0.10,
            train: TrainConfig::default(),
            dev_size: 300,
            heldout_size: 600,
            min_dev_accuracy: 0.9,
        }
    }
}

/// One recovery case: an example/foil combination and its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCase {
    pub example_id: String,
    pub fact: String,
    pub foil: String,
    pub top_item: String,
    pub top_is_stain_position: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StainReport {
    pub scheme: StainScheme,
    pub seed: u64,
    pub model_dev_accuracy: f64,
    pub recovery_accuracy: f64,
    pub cases_total: usize,
    pub cases_passed: usize,
    pub foil_grid: FoilGrid,
    /// For every non-stained fact, the argmax-|delta| foil is the stained
    /// class. Vacuously true for uniform schemes.
    pub grid_pattern_holds: bool,
    pub failures: Vec<RecoveryCase>,
}

impl StainReport {
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let stained = self
            .scheme
            .stained_class
            .clone()
            .unwrap_or_else(|| "(uniform)".into());
        let _ = writeln!(out, "stain scheme: stained class = {stained}");
        for (class, tok) in &self.scheme.prefix_map {
            let _ = writeln!(out, "  {class} -> {tok:?}");
        }
        let _ = writeln!(out, "stained-dev accuracy: {:.4}", self.model_dev_accuracy);
        let _ = writeln!(
            out,
            "stain recovery: {}/{} cases = {:.4}",
            self.cases_passed, self.cases_total, self.recovery_accuracy
        );
        let _ = writeln!(out, "foil grid (mean delta by predicted fact):");
        for report in &self.foil_grid.reports {
            let _ = writeln!(out, "  fact = {}", report.fact);
            for e in &report.entries {
                let _ = writeln!(
                    out,
                    "    foil {:<10} delta%={:+.4} (n={})",
                    e.item,
                    100.0 * e.score,
                    e.count
                );
            }
        }
        let _ = writeln!(out, "grid pattern holds: {}", self.grid_pattern_holds);
        out
    }
}

/// Deterministic corpus split: seeded shuffle, then train / dev / held-out.
pub fn split_corpus(
    corpus: &[Example],
    dev_size: usize,
    heldout_size: usize,
    seed: u64,
) -> (Vec<Example>, Vec<Example>, Vec<Example>) {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut RngKey::with_stream(seed, STREAM_SPLIT).rng());
    let heldout: Vec<Example> = order[..heldout_size]
        .iter()
        .map(|i| corpus[*i].clone())
        .collect();
    let dev: Vec<Example> = order[heldout_size..heldout_size + dev_size]
        .iter()
        .map(|i| corpus[*i].clone())
        .collect();
    let train: Vec<Example> = order[heldout_size + dev_size..]
        .iter()
        .map(|i| corpus[*i].clone())
        .collect();
    (train, dev, heldout)
}

/// Pre-split stained corpus for the verification run.
#[derive(Debug, Clone)]
pub struct StainedCorpus {
    pub scheme: StainScheme,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub heldout: Vec<Example>,
}

/// Generate, split, and stain the desk corpus for one scheme. Masked stains
/// are confined to the training split.
pub fn build_stained_corpus(
    scheme: &StainScheme,
    config: &StainHarnessConfig,
    seed: u64,
) -> Result<StainedCorpus> {
    let corpus = generate_topic_corpus(&config.corpus, seed);
    let (train, dev, heldout) =
        split_corpus(&corpus, config.dev_size, config.heldout_size, seed);
    Ok(StainedCorpus {
        scheme: scheme.clone(),
        train: stain_dataset(&train, scheme, config.mask_fraction, seed)?,
        dev: stain_dataset(&dev, scheme, 0.0, seed)?,
        heldout: stain_dataset(&heldout, scheme, 0.0, seed)?,
    })
}

/// Train the desk model on the stained corpus and verify stain recovery on
/// the held-out split.
///
/// A case is one (example, foil) combination: when the stained class is the
/// fact or the foil, the top-ranked factor must sit at the stain position;
/// otherwise it must not.
pub fn verify_stain_recovery(
    stained: &StainedCorpus,
    config: &StainHarnessConfig,
    seed: u64,
) -> Result<StainReport> {
    let encoder = BowEncoder::build(&stained.train);
    let head = train_logistic(&stained.train, &encoder, &config.train)?;
    let dev_accuracy = accuracy(&head, &encoder, &stained.dev)?;
    if dev_accuracy < config.min_dev_accuracy {
        return Err(Error::TrainingFailure(format!(
            "stained-dev accuracy {dev_accuracy:.4} below required {:.2}",
            config.min_dev_accuracy
        )));
    }

    let ctx = InterventionContext::new(&head, &encoder);
    let stained_class = stained.scheme.stained_class.as_deref();

    let cases: Vec<Result<Vec<RecoveryCase>>> = par::map_ordered(&stained.heldout, |ex| {
        let repr = encoder.encode(ex, &[])?;
        let pred = predict(&head, &repr.h)?;
        let fact = pred.fact(&head.event_space).to_string();
        let mut out = Vec::new();
        for foil in head.event_space.classes() {
            if *foil == fact {
                continue;
            }
            let report = rank_factors(
                &ctx,
                ex,
                &FoilChoice::Class(foil.clone()),
                CandidateSpace::Unigrams,
            )?;
            let top = report.top().expect("non-empty candidate space");
            let top_is_stain_position = top.span.map(|s| s.start == 0).unwrap_or(false);
            let stain_involved =
                stained_class.is_some_and(|s| s == fact || s == foil.as_str());
            let passed = if stain_involved {
                top_is_stain_position
            } else {
                !top_is_stain_position
            };
            out.push(RecoveryCase {
                example_id: ex.id.clone(),
                fact: fact.clone(),
                foil: foil.clone(),
                top_item: top.item.clone(),
                top_is_stain_position,
                passed,
            });
        }
        Ok(out)
    });

    let mut all_cases = Vec::new();
    for c in cases {
        all_cases.extend(c?);
    }
    let cases_total = all_cases.len();
    let cases_passed = all_cases.iter().filter(|c| c.passed).count();
    let recovery_accuracy = cases_passed as f64 / cases_total.max(1) as f64;

    let foil_grid = rank_foils_corpus(
        &ctx,
        &stained.heldout,
        &FactorSpec::Extractor(HighlightExtractor::FirstToken),
        Metric::Delta,
        Aggregation::MeanByFact,
    )?;
    let grid_pattern_holds = match stained_class {
        Some(stained_class) => foil_grid
            .reports
            .iter()
            .filter(|r| r.fact != stained_class)
            .all(|r| {
                r.entries
                    .iter()
                    .max_by(|a, b| {
                        a.score
                            .abs()
                            .partial_cmp(&b.score.abs())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .map(|top| top.item == stained_class)
                    .unwrap_or(false)
            }),
        None => true,
    };

    let failures: Vec<RecoveryCase> = all_cases.iter().filter(|c| !c.passed).cloned().collect();
    Ok(StainReport {
        scheme: stained.scheme.clone(),
        seed,
        model_dev_accuracy: dev_accuracy,
        recovery_accuracy,
        cases_total,
        cases_passed,
        foil_grid,
        grid_pattern_holds,
        failures,
    })
}

/// End-to-end run for one scheme: build the stained corpus, train, verify.
pub fn run_stain_scheme(
    scheme: &StainScheme,
    config: &StainHarnessConfig,
    seed: u64,
) -> Result<StainReport> {
    let stained = build_stained_corpus(scheme, config, seed)?;
    verify_stain_recovery(&stained, config, seed)
}
