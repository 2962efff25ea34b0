//! Factor and foil ranking by contrastive behavior change, plus
//! corpus-level aggregation and report serialization.
//!
//! Two settings: rank candidate factors under a fixed foil (which input
//! span mattered most for choosing the fact over this foil?), and rank
//! foils under a fixed factor (against which alternative does the model use
//! this factor?). Contrastive power ranks foils by symmetrized KL under the
//! projection-only intervention, read inversely: small divergence means the
//! fact/foil contrast dominates the decision.

pub mod concepts;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrastive::{contrastive_only_intervention, ContrastivePair};
use crate::error::{Error, Result};
use crate::interventions::{
    intervene, Factor, InterventionContext, InterventionKind, InterventionPlan, SkipRecord,
};
use crate::model::{predict, Example, LatentRepr, LinearHead, Span};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportMode {
    Factors,
    Foils,
    ContrastivePower,
}

impl std::fmt::Display for ReportMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportMode::Factors => write!(f, "factors"),
            ReportMode::Foils => write!(f, "foils"),
            ReportMode::ContrastivePower => write!(f, "contrastive-power"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Delta,
    AbsDelta,
    SymKl,
    /// Fact-probability drop `p_fact - q_fact`; the non-contrastive
    /// baseline used when ranking factors with the "none" foil.
    FactDrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    PerExample,
    MeanByFact,
    MedianByFact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub item: String,
    pub score: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub mode: ReportMode,
    pub fact: String,
    /// The controlled element: foil name (or "none") in factors mode, the
    /// factor display in foils mode.
    pub fixed: String,
    pub metric: Metric,
    pub aggregation: Aggregation,
    pub entries: Vec<RankingEntry>,
}

impl RankingReport {
    /// Sort entries into report order: sym-kl ascends (most contrastive
    /// first, inverse reading), everything else descends. Ties break
    /// lexicographically by item.
    pub fn sort_entries(&mut self) {
        let ascending = self.metric == Metric::SymKl;
        self.entries.sort_by(|a, b| {
            let ord = a
                .score
                .partial_cmp(&b.score)
                .unwrap_or(std::cmp::Ordering::Equal);
            let ord = if ascending { ord } else { ord.reverse() };
            ord.then_with(|| a.item.cmp(&b.item))
        });
    }

    pub fn top(&self) -> Option<&RankingEntry> {
        self.entries.first()
    }
}

/// Which spans of an example form the candidate factor space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSpace {
    Unigrams,
    Bigrams,
    Both,
}

impl CandidateSpace {
    pub fn spans(&self, token_count: usize) -> Vec<Span> {
        let mut spans = Vec::new();
        if matches!(self, CandidateSpace::Unigrams | CandidateSpace::Both) {
            for i in 0..token_count {
                spans.push(Span::new(i, i + 1));
            }
        }
        if matches!(self, CandidateSpace::Bigrams | CandidateSpace::Both) {
            for i in 0..token_count.saturating_sub(1) {
                spans.push(Span::new(i, i + 2));
            }
        }
        spans
    }
}

/// Foil choice for factor ranking: a concrete class, or the
/// non-contrastive "none" baseline scored by fact-probability drop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoilChoice {
    Class(String),
    None,
}

/// Rank every unigram/bigram span of `ex` by how much masking it shifts the
/// fact/foil decision. The fact is the model's prediction on the unmodified
/// example.
pub fn rank_factors(
    ctx: &InterventionContext<'_>,
    ex: &Example,
    foil: &FoilChoice,
    space: CandidateSpace,
) -> Result<RankingReport> {
    let base = ctx.encoder.encode(ex, &[])?;
    let pred = predict(ctx.head, &base.h)?;
    let fact = pred.fact(&ctx.head.event_space).to_string();

    let (pair, metric, fixed) = match foil {
        FoilChoice::Class(name) => {
            if *name == fact {
                return Err(Error::InvalidPair(format!(
                    "foil {name} equals the predicted fact; pick a different contrast"
                )));
            }
            ctx.head.event_space.index_of(name)?;
            (
                Some(ContrastivePair::new(fact.clone(), name.clone())?),
                Metric::Delta,
                name.clone(),
            )
        }
        FoilChoice::None => (None, Metric::FactDrop, "none".to_string()),
    };

    let candidates = space.spans(ex.tokens.len());
    let fact_index = ctx.head.event_space.index_of(&fact)?;
    let scored: Vec<Result<RankingEntry>> = par::map_ordered(&candidates, |span| {
        let masked = ctx.encoder.encode(ex, &[*span])?;
        let q = predict(ctx.head, &masked.h)?.probs;
        let score = match (&pair, metric) {
            (Some(pair), Metric::Delta) => {
                let foil_index = ctx.head.event_space.index_of(&pair.foil)?;
                crate::contrastive::delta_from_probs(&pred.probs, &q, fact_index, foil_index)?
            }
            _ => pred.probs.as_slice()[fact_index] - q.as_slice()[fact_index],
        };
        Ok(RankingEntry {
            item: ex.tokens[span.start..span.end].join(" "),
            score,
            count: 1,
            span: Some(*span),
        })
    });
    let entries: Vec<RankingEntry> = scored.into_iter().collect::<Result<_>>()?;

    let mut report = RankingReport {
        mode: ReportMode::Factors,
        fact,
        fixed,
        metric,
        aggregation: Aggregation::PerExample,
        entries,
    };
    report.sort_entries();
    Ok(report)
}

/// Named highlight extractors: token matchers that resolve the factor spans
/// for each example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HighlightExtractor {
    /// Pronoun lexicon plus capitalized-token heuristic (demographic
    /// highlights: pronouns and personal names).
    PronounsNames,
    /// Every token; masking the whole input.
    AllNgrams,
    /// The first token only (stain position in the staining harness).
    FirstToken,
}

impl HighlightExtractor {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "pronouns+names" => Ok(HighlightExtractor::PronounsNames),
            "all-ngrams" => Ok(HighlightExtractor::AllNgrams),
            "first-token" => Ok(HighlightExtractor::FirstToken),
            other => Err(Error::InvalidInput(format!(
                "unknown highlight extractor {other:?}; available: pronouns+names, all-ngrams, first-token"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HighlightExtractor::PronounsNames => "pronouns+names",
            HighlightExtractor::AllNgrams => "all-ngrams",
            HighlightExtractor::FirstToken => "first-token",
        }
    }

    pub fn spans(&self, ex: &Example) -> Vec<Span> {
        match self {
            HighlightExtractor::PronounsNames => ex
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, tok)| {
                    concepts::is_pronoun(tok)
                        || tok.chars().next().is_some_and(|c| c.is_uppercase())
                })
                .map(|(i, _)| Span::new(i, i + 1))
                .collect(),
            HighlightExtractor::AllNgrams => vec![Span::new(0, ex.tokens.len())],
            HighlightExtractor::FirstToken => vec![Span::new(0, 1)],
        }
    }
}

/// The controlled factor for foil ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum FactorSpec {
    Extractor(HighlightExtractor),
    Concept(String),
    Paired,
}

impl FactorSpec {
    pub fn display(&self) -> String {
        match self {
            FactorSpec::Extractor(e) => e.name().to_string(),
            FactorSpec::Concept(name) => format!("concept:{name}"),
            FactorSpec::Paired => "paired".into(),
        }
    }

    fn plan_for(&self, ex: &Example, pair: ContrastivePair) -> InterventionPlan {
        match self {
            FactorSpec::Extractor(e) => InterventionPlan {
                kind: InterventionKind::Mask,
                factor: Some(Factor::highlight_from_spans(e.spans(ex), &ex.tokens)),
                pair,
            },
            FactorSpec::Concept(name) => InterventionPlan {
                kind: InterventionKind::Amnesic,
                factor: Some(Factor::Concept { name: name.clone() }),
                pair,
            },
            FactorSpec::Paired => InterventionPlan {
                kind: InterventionKind::Paired,
                factor: None,
                pair,
            },
        }
    }
}

/// Rank all foils for one example under the given factor's intervention.
/// Returns exactly K-1 entries.
pub fn rank_foils_example(
    ctx: &InterventionContext<'_>,
    ex: &Example,
    factor: &FactorSpec,
    metric: Metric,
) -> Result<RankingReport> {
    let base = ctx.encoder.encode(ex, &[])?;
    let pred = predict(ctx.head, &base.h)?;
    let fact = pred.fact(&ctx.head.event_space).to_string();
    let mut entries = Vec::new();
    for foil in ctx.head.event_space.classes() {
        if *foil == fact {
            continue;
        }
        let pair = ContrastivePair::new(fact.clone(), foil.clone())?;
        let bp = intervene(ctx, ex, &factor.plan_for(ex, pair))?;
        let delta = bp.delta(ctx.head)?;
        let score = if metric == Metric::AbsDelta {
            delta.abs()
        } else {
            delta
        };
        entries.push(RankingEntry {
            item: foil.clone(),
            score,
            count: 1,
            span: None,
        });
    }
    let mut report = RankingReport {
        mode: ReportMode::Foils,
        fact,
        fixed: factor.display(),
        metric,
        aggregation: Aggregation::PerExample,
        entries,
    };
    report.sort_entries();
    Ok(report)
}

/// Per-fact foil rankings aggregated over a corpus, with unresolvable
/// examples skipped-with-record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoilGrid {
    pub reports: Vec<RankingReport>,
    pub skipped: Vec<SkipRecord>,
}

impl FoilGrid {
    pub fn report_for(&self, fact: &str) -> Option<&RankingReport> {
        self.reports.iter().find(|r| r.fact == fact)
    }
}

/// Group per-example foil deltas by predicted fact and aggregate.
pub fn rank_foils_corpus(
    ctx: &InterventionContext<'_>,
    dataset: &[Example],
    factor: &FactorSpec,
    metric: Metric,
    aggregation: Aggregation,
) -> Result<FoilGrid> {
    if matches!(aggregation, Aggregation::PerExample) {
        return Err(Error::InvalidInput(
            "corpus foil ranking needs mean-by-fact or median-by-fact aggregation".into(),
        ));
    }
    // (fact, foil, delta) per example; None marks a skip.
    let per_example: Vec<std::result::Result<Vec<(String, String, f64)>, SkipRecord>> =
        par::map_ordered(dataset, |ex| {
            let run = || -> Result<Vec<(String, String, f64)>> {
                let base = ctx.encoder.encode(ex, &[])?;
                let pred = predict(ctx.head, &base.h)?;
                let fact = pred.fact(&ctx.head.event_space).to_string();
                let mut rows = Vec::new();
                for foil in ctx.head.event_space.classes() {
                    if *foil == fact {
                        continue;
                    }
                    let pair = ContrastivePair::new(fact.clone(), foil.clone())?;
                    let bp = intervene(ctx, ex, &factor.plan_for(ex, pair))?;
                    rows.push((fact.clone(), foil.clone(), bp.delta(ctx.head)?));
                }
                Ok(rows)
            };
            run().map_err(|e| SkipRecord {
                example_id: ex.id.clone(),
                plan_tag: factor.display(),
                reason: e.to_string(),
            })
        });

    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for res in per_example {
        match res {
            Ok(rows) => {
                for (fact, foil, delta) in rows {
                    cells.entry((fact, foil)).or_default().push(delta);
                }
            }
            Err(skip) => skipped.push(skip),
        }
    }

    let mut by_fact: BTreeMap<String, Vec<RankingEntry>> = BTreeMap::new();
    for ((fact, foil), deltas) in cells {
        let agg = match aggregation {
            Aggregation::MeanByFact => mean(&deltas),
            Aggregation::MedianByFact => median(&deltas),
            Aggregation::PerExample => unreachable!(),
        };
        let score = if metric == Metric::AbsDelta {
            agg.abs()
        } else {
            agg
        };
        by_fact.entry(fact).or_default().push(RankingEntry {
            item: foil,
            score,
            count: deltas.len(),
            span: None,
        });
    }

    let reports = by_fact
        .into_iter()
        .map(|(fact, entries)| {
            let mut report = RankingReport {
                mode: ReportMode::Foils,
                fact,
                fixed: factor.display(),
                metric,
                aggregation,
                entries,
            };
            report.sort_entries();
            report
        })
        .collect();
    Ok(FoilGrid { reports, skipped })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// A (fact, foil) cell with too few examples for a corpus report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsufficientCell {
    pub fact: String,
    pub foil: String,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerReport {
    pub reports: Vec<RankingReport>,
    pub insufficient: Vec<InsufficientCell>,
    pub min_count: usize,
}

pub const DEFAULT_MIN_COUNT: usize = 5;

/// Mean symmetrized KL under the contrastive-only intervention, per
/// (fact, foil) cell with at least `min_count` examples predicted as the
/// fact. Entries sort ascending: the smallest divergence marks the contrast
/// that dominates the decision.
pub fn contrastive_power(
    head: &LinearHead,
    reprs: &[LatentRepr],
    min_count: usize,
) -> Result<PowerReport> {
    let scored: Vec<Result<(String, Vec<(String, f64)>)>> = par::map_ordered(reprs, |r| {
        let pred = predict(head, &r.h)?;
        let fact = pred.fact(&head.event_space).to_string();
        let mut rows = Vec::new();
        for foil in head.event_space.classes() {
            if *foil == fact {
                continue;
            }
            let pair = ContrastivePair::new(fact.clone(), foil.clone())?;
            let bp = contrastive_only_intervention(head, &r.h, &r.example_id, &pair)?;
            rows.push((foil.clone(), bp.sym_kl()?));
        }
        Ok((fact, rows))
    });

    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for res in scored {
        let (fact, rows) = res?;
        for (foil, kl) in rows {
            cells.entry((fact.clone(), foil)).or_default().push(kl);
        }
    }

    let mut by_fact: BTreeMap<String, Vec<RankingEntry>> = BTreeMap::new();
    let mut insufficient = Vec::new();
    for ((fact, foil), kls) in cells {
        if kls.len() < min_count {
            insufficient.push(InsufficientCell {
                fact,
                foil,
                count: kls.len(),
            });
            continue;
        }
        by_fact.entry(fact).or_default().push(RankingEntry {
            item: foil,
            score: mean(&kls),
            count: kls.len(),
            span: None,
        });
    }

    let reports = by_fact
        .into_iter()
        .map(|(fact, entries)| {
            let mut report = RankingReport {
                mode: ReportMode::ContrastivePower,
                fact,
                fixed: "contrastive-only".into(),
                metric: Metric::SymKl,
                aggregation: Aggregation::MeanByFact,
                entries,
            };
            report.sort_entries();
            report
        })
        .collect();
    Ok(PowerReport {
        reports,
        insufficient,
        min_count,
    })
}

/// Write reports as CSV with the stable column set.
pub fn write_reports_csv(path: &Path, reports: &[RankingReport]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    writer
        .write_record(["mode", "fact", "fixed", "item", "score", "count"])
        .map_err(|e| Error::Csv(e.to_string()))?;
    for report in reports {
        for entry in &report.entries {
            writer
                .write_record([
                    report.mode.to_string(),
                    report.fact.clone(),
                    report.fixed.clone(),
                    entry.item.clone(),
                    format!("{}", entry.score),
                    entry.count.to_string(),
                ])
                .map_err(|e| Error::Csv(e.to_string()))?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read a report CSV back. `metric` and `aggregation` come from the JSON
/// sidecar; scores round-trip exactly through the shortest-float encoding.
pub fn read_reports_csv(
    path: &Path,
    metric: Metric,
    aggregation: Aggregation,
) -> Result<Vec<RankingReport>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let mut reports: Vec<RankingReport> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() != 6 {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("expected 6 columns, got {}", record.len()),
            });
        }
        let mode = match &record[0] {
            "factors" => ReportMode::Factors,
            "foils" => ReportMode::Foils,
            "contrastive-power" => ReportMode::ContrastivePower,
            other => {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("unknown mode {other:?}"),
                })
            }
        };
        let fact = record[1].to_string();
        let fixed = record[2].to_string();
        let entry = RankingEntry {
            item: record[3].to_string(),
            score: record[4].parse().map_err(|e| Error::Parse {
                line: i + 2,
                msg: format!("bad score: {e}"),
            })?,
            count: record[5].parse().map_err(|e| Error::Parse {
                line: i + 2,
                msg: format!("bad count: {e}"),
            })?,
            span: None,
        };
        match reports.last_mut() {
            Some(last) if last.mode == mode && last.fact == fact && last.fixed == fixed => {
                last.entries.push(entry);
            }
            _ => reports.push(RankingReport {
                mode,
                fact,
                fixed,
                metric,
                aggregation,
                entries: vec![entry],
            }),
        }
    }
    Ok(reports)
}
