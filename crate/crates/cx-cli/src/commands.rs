//! Command implementations. Every command writes results, a config
//! snapshot, and the tool version into its output directory; nothing in an
//! output file depends on wall clock, machine, or worker count.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use cx_core::amnesic::{concept_sign, concept_vector, inlp, InlpConfig, ProjectionStack};
use cx_core::contrastive::{direction, ContrastivePair};
use cx_core::error::{Error, Result};
use cx_core::interventions::InterventionContext;
use cx_core::model::io::{export_representations, write_dataset, write_encoder};
use cx_core::model::train::{accuracy, train_logistic_traced, TrainConfig};
use cx_core::model::{predict, BowEncoder, Example, LatentRepr};
use cx_core::ranking::concepts::{
    default_stopword_set, load_stopwords, prevalence, ConceptSource, PrevalenceTable,
};
use cx_core::ranking::{
    contrastive_power, rank_factors, rank_foils_corpus, rank_foils_example, write_reports_csv,
    Aggregation, CandidateSpace, FactorSpec, FoilChoice, HighlightExtractor, Metric,
    RankingReport,
};
use cx_core::staining::{
    run_stain_scheme, stain_dataset, CorpusConfig, StainHarnessConfig, StainScheme, TOPIC_CLASSES,
};

use crate::args::*;
use crate::output::{OutputDir, RunSnapshot};
use crate::source::{ModelSource, DATASET_FILE, ENCODER_FILE, REPR_FILE};

pub fn dispatch(command: &Command, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    match command {
        Command::Train(args) => run_train(args, seed, snapshot),
        Command::RankFactors(args) => run_rank_factors(args, seed, snapshot),
        Command::RankFoils(args) => run_rank_foils(args, seed, snapshot),
        Command::Inlp(args) => run_inlp(args, seed, snapshot),
        Command::AmnesicApply(args) => run_amnesic_apply(args, snapshot),
        Command::ContrastivePower(args) => run_contrastive_power(args, snapshot),
        Command::Prevalence(args) => run_prevalence(args, seed, snapshot),
        Command::Stain(args) => run_stain(args, seed, snapshot),
        Command::VerifyStain(args) => run_verify_stain(args, seed, snapshot),
        Command::Rerun(_) => unreachable!("rerun is resolved before dispatch"),
    }
}

/// Sidecar accompanying every CSV report: enough context to parse the CSV
/// back into reports losslessly.
#[derive(Serialize)]
struct ReportSidecar<'a> {
    seed: u64,
    metric: Metric,
    aggregation: Aggregation,
    reports: &'a [RankingReport],
}

fn run_train(args: &TrainArgs, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    let dataset = cx_core::model::io::read_dataset(&args.data)?;
    let mut encoder = BowEncoder::build(&dataset);
    if let Some(dim) = args.dim {
        encoder = encoder.with_random_projection(dim, cx_core::numerics::RngKey::new(seed))?;
    }
    let config = TrainConfig {
        lr: args.lr,
        epochs: args.epochs,
        l2: args.l2,
        seed,
    };
    let (head, loss_history) = train_logistic_traced(&dataset, &encoder, &config)?;
    let train_accuracy = accuracy(&head, &encoder, &dataset)?;
    let reprs: Vec<LatentRepr> = dataset
        .iter()
        .map(|ex| encoder.encode(ex, &[]))
        .collect::<Result<_>>()?;

    let out = OutputDir::prepare(&args.out, snapshot)?;
    export_representations(&out.path(REPR_FILE), &head, &reprs)?;
    write_encoder(&out.path(ENCODER_FILE), &encoder)?;
    write_dataset(&out.path(DATASET_FILE), &dataset)?;

    #[derive(Serialize)]
    struct TrainSummary<'a> {
        classes: &'a [String],
        dim: usize,
        vocab_size: usize,
        examples: usize,
        final_loss: f64,
        train_accuracy: f64,
    }
    out.write_json(
        "train_summary.json",
        &TrainSummary {
            classes: head.event_space.classes(),
            dim: head.dim(),
            vocab_size: encoder.vocab_len(),
            examples: dataset.len(),
            final_loss: *loss_history.last().unwrap_or(&f64::NAN),
            train_accuracy,
        },
    )?;
    println!(
        "trained {} classes, d={}, {} examples, train accuracy {:.4}",
        head.event_space.len(),
        head.dim(),
        dataset.len(),
        train_accuracy
    );
    Ok(())
}

fn parse_ngrams(s: &str) -> Result<CandidateSpace> {
    match s.replace(' ', "").as_str() {
        "1" => Ok(CandidateSpace::Unigrams),
        "2" => Ok(CandidateSpace::Bigrams),
        "1,2" | "2,1" => Ok(CandidateSpace::Both),
        other => Err(Error::InvalidInput(format!(
            "--ngrams {other:?}: expected 1, 2, or 1,2"
        ))),
    }
}

fn find_example<'a>(dataset: &'a [Example], id: &str) -> Result<&'a Example> {
    dataset
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::InvalidInput(format!("no example with id {id:?} in the dataset")))
}

fn run_rank_factors(args: &RankFactorsArgs, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    let source = ModelSource::load(&args.model)?;
    let encoder = source.encoder()?;
    let dataset = source.dataset_or(args.data.as_deref())?;
    let ex = find_example(&dataset, &args.example)?;
    let foil = if args.foil == "none" {
        FoilChoice::None
    } else {
        FoilChoice::Class(args.foil.clone())
    };
    let space = parse_ngrams(&args.ngrams)?;
    let ctx = InterventionContext::new(&source.head, encoder);
    let report = rank_factors(&ctx, ex, &foil, space)?;

    let out = OutputDir::prepare(&args.out, snapshot)?;
    let reports = [report];
    write_reports_csv(&out.path("ranking.csv"), &reports)?;
    out.write_json(
        "ranking.json",
        &ReportSidecar {
            seed,
            metric: reports[0].metric,
            aggregation: reports[0].aggregation,
            reports: &reports,
        },
    )?;
    let pretty = render_factor_ranking(ex, &reports[0], args.top);
    out.write_text("pretty.txt", &pretty)?;
    print!("{pretty}");
    Ok(())
}

/// Reproduce the input with the top span marked, then the top-k table.
fn render_factor_ranking(ex: &Example, report: &RankingReport, top_k: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "example: {}", ex.id);
    let _ = writeln!(out, "fact: {}    foil: {}", report.fact, report.fixed);
    let top_span = report.top().and_then(|e| e.span);
    let rendered: Vec<String> = ex
        .tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| match top_span {
            Some(s) if s.contains(i) => format!("[[{tok}]]"),
            _ => tok.clone(),
        })
        .collect();
    let _ = writeln!(out, "input: {}", rendered.join(" "));
    let label = match report.metric {
        Metric::FactDrop => "fact-prob drop",
        _ => "delta%",
    };
    let _ = writeln!(out, "top factors ({label}):");
    for (i, e) in report.entries.iter().take(top_k).enumerate() {
        let score = match report.metric {
            Metric::FactDrop => e.score,
            _ => 100.0 * e.score,
        };
        let _ = writeln!(out, "  {:>2}. {:<24} {score:+.4}", i + 1, e.item);
    }
    out
}

fn parse_metric(s: &str) -> Result<Metric> {
    match s {
        "delta" => Ok(Metric::Delta),
        "abs-delta" => Ok(Metric::AbsDelta),
        other => Err(Error::InvalidInput(format!(
            "--metric {other:?}: expected delta or abs-delta"
        ))),
    }
}

fn parse_factor(s: &str) -> Result<FactorSpec> {
    if let Some(name) = s.strip_prefix("concept:") {
        if name.is_empty() {
            return Err(Error::InvalidInput("empty concept name".into()));
        }
        return Ok(FactorSpec::Concept(name.to_string()));
    }
    if s == "paired" {
        return Ok(FactorSpec::Paired);
    }
    Ok(FactorSpec::Extractor(HighlightExtractor::parse(s)?))
}

fn run_rank_foils(args: &RankFoilsArgs, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    let source = ModelSource::load(&args.model)?;
    let encoder = source.encoder()?;
    let dataset = source.dataset_or(args.data.as_deref())?;
    let factor = parse_factor(&args.factor)?;

    let stack = match (&factor, &args.stack) {
        (FactorSpec::Concept(name), Some(path)) => {
            let stack = ProjectionStack::read_json(path)?;
            if stack.concept != *name {
                return Err(Error::InvalidInput(format!(
                    "stack at {} was trained for concept {:?}, not {name:?}",
                    path.display(),
                    stack.concept
                )));
            }
            Some(stack)
        }
        (FactorSpec::Concept(name), None) => {
            return Err(Error::InvalidInput(format!(
                "concept factor {name:?} needs --stack (train one with cx inlp)"
            )));
        }
        _ => None,
    };

    // Amnesic rankings default to |delta| (sign is not meaningful there);
    // highlight and paired rankings keep the sign.
    let metric = match &args.metric {
        Some(m) => parse_metric(m)?,
        None => match factor {
            FactorSpec::Concept(_) => Metric::AbsDelta,
            _ => Metric::Delta,
        },
    };
    let aggregation = match args.aggregation.as_str() {
        "mean" => Aggregation::MeanByFact,
        "median" => Aggregation::MedianByFact,
        other => {
            return Err(Error::InvalidInput(format!(
                "--aggregation {other:?}: expected mean or median"
            )))
        }
    };

    let mut ctx = InterventionContext::new(&source.head, encoder);
    if let Some(stack) = &stack {
        ctx = ctx.with_stack(stack);
    }
    // Counterfactual edits are interventions, not analysis subjects.
    let analysis: Vec<Example> = dataset
        .iter()
        .filter(|e| e.counterfactual_of.is_none())
        .cloned()
        .collect();
    let ctx = ctx.with_paired_from(&dataset);

    let out = OutputDir::prepare(&args.out, snapshot)?;
    let (reports, skipped) = match &args.example {
        Some(id) => {
            let ex = find_example(&analysis, id)?;
            let report = rank_foils_example(&ctx, ex, &factor, metric)?;
            (vec![report], Vec::new())
        }
        None => {
            let grid = rank_foils_corpus(&ctx, &analysis, &factor, metric, aggregation)?;
            (grid.reports, grid.skipped)
        }
    };
    write_reports_csv(&out.path("ranking.csv"), &reports)?;
    out.write_json(
        "ranking.json",
        &ReportSidecar {
            seed,
            metric,
            aggregation,
            reports: &reports,
        },
    )?;
    if !skipped.is_empty() {
        out.write_json("skipped.json", &skipped)?;
    }
    let pretty = render_foil_ranking(&reports, metric, skipped.len());
    out.write_text("pretty.txt", &pretty)?;
    print!("{pretty}");
    Ok(())
}

/// Most/least contrastive foils per fact; dagger rows list foils whose
/// signed delta is negative (evidence toward the foil).
fn render_foil_ranking(reports: &[RankingReport], metric: Metric, skipped: usize) -> String {
    let mut out = String::new();
    for report in reports {
        let _ = writeln!(
            out,
            "fact: {} (factor: {})",
            report.fact, report.fixed
        );
        let k = 3.min(report.entries.len());
        let _ = writeln!(out, "  most contrastive:");
        for e in report.entries.iter().take(k) {
            let _ = writeln!(
                out,
                "    {:<16} delta%={:+.4} (n={})",
                e.item,
                100.0 * e.score,
                e.count
            );
        }
        let _ = writeln!(out, "  least contrastive:");
        for e in report.entries.iter().rev().take(k).rev() {
            let _ = writeln!(
                out,
                "    {:<16} delta%={:+.4} (n={})",
                e.item,
                100.0 * e.score,
                e.count
            );
        }
        if metric == Metric::Delta {
            let mut negatives: Vec<_> = report.entries.iter().filter(|e| e.score < 0.0).collect();
            negatives.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap());
            if !negatives.is_empty() {
                let _ = writeln!(out, "  † evidence toward the foil:");
                for e in negatives {
                    let _ = writeln!(
                        out,
                        "    † {:<14} delta%={:+.4} (n={})",
                        e.item,
                        100.0 * e.score,
                        e.count
                    );
                }
            }
        }
    }
    if skipped > 0 {
        let _ = writeln!(out, "skipped {skipped} examples (see skipped.json)");
    }
    out
}

fn run_inlp(args: &InlpArgs, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    let source = ModelSource::load(&args.model)?;
    let dataset = source.dataset_or(args.data.as_deref())?;
    let concept = ConceptSource::parse(&args.concept)?;
    let stopwords = match &args.stopwords {
        Some(p) => load_stopwords(p)?,
        None => default_stopword_set(),
    };
    let labels = concept.label_dataset(&dataset, &stopwords, seed)?;

    // Join representations to the dataset order by example id.
    let by_id: HashMap<&str, &LatentRepr> = source
        .reprs
        .iter()
        .map(|r| (r.example_id.as_str(), r))
        .collect();
    let reprs: Vec<LatentRepr> = dataset
        .iter()
        .map(|ex| {
            by_id
                .get(ex.id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| {
                    Error::InvalidInput(format!("no representation for example {}", ex.id))
                })
        })
        .collect::<Result<_>>()?;

    let config = InlpConfig {
        epsilon: args.epsilon,
        max_iters: args.max_iters,
        seed,
    };
    let stack = inlp(&reprs, &concept.name(), &labels, &config)?;

    let out = OutputDir::prepare(&args.out, snapshot)?;
    stack.write_json(&out.path("stack.json"))?;

    #[derive(Serialize)]
    struct InlpSummary<'a> {
        concept: &'a str,
        iterations: usize,
        converged: bool,
        final_probe_accuracy: f64,
        majority_baseline: f64,
        dev_accuracies: &'a [f64],
        dim: usize,
    }
    out.write_json(
        "summary.json",
        &InlpSummary {
            concept: &stack.concept,
            iterations: stack.iterations,
            converged: stack.converged,
            final_probe_accuracy: stack.final_probe_accuracy,
            majority_baseline: stack.majority_baseline,
            dev_accuracies: &stack.dev_accuracies,
            dim: stack.dim,
        },
    )?;

    // Cosine-sign table of the concept vector against every ordered
    // (fact, foil) direction.
    let mut table = String::from("fact,foil,cos,sign\n");
    let mut pretty = format!(
        "concept {} removed in {} iterations (converged={}), probe {:.4} vs majority {:.4}\n",
        stack.concept,
        stack.iterations,
        stack.converged,
        stack.final_probe_accuracy,
        stack.majority_baseline
    );
    if stack.iterations > 0 {
        let cv = concept_vector(&stack)?;
        pretty.push_str("sign(cos) of concept vector vs contrastive directions:\n");
        for fact in source.head.event_space.classes() {
            for foil in source.head.event_space.classes() {
                if fact == foil {
                    continue;
                }
                let pair = ContrastivePair::new(fact.clone(), foil.clone())?;
                let dir = direction(&source.head, &pair)?;
                let cos = cv.r.dot(&dir.u)? / dir.norm_sq.sqrt();
                let sign = concept_sign(&cv, &dir)?;
                let _ = writeln!(table, "{fact},{foil},{cos},{sign}");
                let _ = writeln!(pretty, "  fact={fact:<12} foil={foil:<12} sign(cos)={sign}");
            }
        }
    }
    out.write_text("sign_table.csv", &table)?;
    out.write_text("pretty.txt", &pretty)?;
    print!("{pretty}");
    Ok(())
}

fn run_amnesic_apply(args: &AmnesicApplyArgs, snapshot: &RunSnapshot) -> Result<()> {
    let source = ModelSource::load(&args.model)?;
    let stack = ProjectionStack::read_json(&args.stack)?;
    let projected: Vec<LatentRepr> = source
        .reprs
        .iter()
        .map(|r| cx_core::amnesic::apply_amnesic(&stack, r))
        .collect::<Result<_>>()?;
    let out = OutputDir::prepare(&args.out, snapshot)?;
    export_representations(&out.path("amnesic.jsonl"), &source.head, &projected)?;
    println!(
        "projected {} representations onto the {}-direction nullspace of {}",
        projected.len(),
        stack.iterations,
        stack.concept
    );
    Ok(())
}

fn run_contrastive_power(args: &ContrastivePowerArgs, snapshot: &RunSnapshot) -> Result<()> {
    let source = ModelSource::load(&args.model)?;
    let power = contrastive_power(&source.head, &source.reprs, args.min_count)?;
    let out = OutputDir::prepare(&args.out, snapshot)?;
    write_reports_csv(&out.path("power.csv"), &power.reports)?;
    out.write_json(
        "power.json",
        &ReportSidecar {
            seed: snapshot.seed,
            metric: Metric::SymKl,
            aggregation: Aggregation::MeanByFact,
            reports: &power.reports,
        },
    )?;
    if !power.insufficient.is_empty() {
        out.write_json("insufficient.json", &power.insufficient)?;
    }
    let mut pretty = String::new();
    for report in &power.reports {
        let _ = writeln!(pretty, "fact: {}", report.fact);
        if let Some(most) = report.entries.first() {
            let _ = writeln!(
                pretty,
                "  most contrastive foil:  {:<16} sym-KL={:.4} (n={})",
                most.item, most.score, most.count
            );
        }
        if let Some(least) = report.entries.last() {
            let _ = writeln!(
                pretty,
                "  least contrastive foil: {:<16} sym-KL={:.4} (n={})",
                least.item, least.score, least.count
            );
        }
    }
    for cell in &power.insufficient {
        let _ = writeln!(
            pretty,
            "  insufficient data: fact={} foil={} (n={} < {})",
            cell.fact, cell.foil, cell.count, power.min_count
        );
    }
    out.write_text("pretty.txt", &pretty)?;
    print!("{pretty}");
    Ok(())
}

fn run_prevalence(args: &PrevalenceArgs, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    let source = ModelSource::load(&args.model)?;
    let dataset = cx_core::model::io::read_dataset(&args.data)?;
    let concept = ConceptSource::parse(&args.concept)?;
    let stopwords = match &args.stopwords {
        Some(p) => load_stopwords(p)?,
        None => default_stopword_set(),
    };
    let labels = concept.label_dataset(&dataset, &stopwords, seed)?;
    let gold: Vec<String> = dataset.iter().map(|e| e.label.clone()).collect();
    let predicted: Vec<String> = match &source.encoder {
        Some(encoder) => dataset
            .iter()
            .map(|ex| {
                let repr = encoder.encode(ex, &[])?;
                Ok(predict(&source.head, &repr.h)?
                    .fact(&source.head.event_space)
                    .to_string())
            })
            .collect::<Result<_>>()?,
        None => dataset
            .iter()
            .map(|ex| {
                let repr = source.repr_for(&ex.id)?;
                Ok(predict(&source.head, &repr.h)?
                    .fact(&source.head.event_space)
                    .to_string())
            })
            .collect::<Result<_>>()?,
    };
    let table = prevalence(
        &concept.name(),
        &source.head.event_space,
        &gold,
        &predicted,
        &labels,
    )?;

    let out = OutputDir::prepare(&args.out, snapshot)?;
    out.write_json("prevalence.json", &table)?;
    out.write_text("prevalence.csv", &prevalence_csv(&table))?;
    let pretty = render_prevalence(&table);
    out.write_text("pretty.txt", &pretty)?;
    print!("{pretty}");
    Ok(())
}

fn prevalence_csv(table: &PrevalenceTable) -> String {
    let mut out = String::from("concept,total_pct,class,gold_pct,predicted_pct\n");
    if table.per_class.is_empty() {
        let _ = writeln!(out, "{},{},,,", table.concept, table.total_pct);
    }
    for row in &table.per_class {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            table.concept, table.total_pct, row.class, row.gold_pct, row.predicted_pct
        );
    }
    out
}

fn render_prevalence(table: &PrevalenceTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "concept {}: {:.1}% of examples",
        table.concept, table.total_pct
    );
    if table.per_class.is_empty() {
        let _ = writeln!(out, "  (no concept-positive examples)");
        return out;
    }
    let _ = writeln!(out, "  {:<16} {:>8} {:>11}", "class", "gold%", "predicted%");
    for row in &table.per_class {
        let _ = writeln!(
            out,
            "  {:<16} {:>8.1} {:>11.1}",
            row.class, row.gold_pct, row.predicted_pct
        );
    }
    out
}

fn run_stain(args: &StainArgs, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    let dataset = cx_core::model::io::read_dataset(&args.data)?;
    let space = cx_core::model::EventSpace::from_labels(dataset.iter().map(|e| e.label.as_str()))?;
    let scheme = if args.scheme == "uniform" {
        StainScheme::uniform(space.classes(), "indeed,")
    } else {
        let idx = space.index_of(&args.scheme)?;
        let (distinct, shared) = cx_core::staining::SCHEME_TOKENS[idx % 3];
        StainScheme::discriminative(space.classes(), &args.scheme, distinct, shared)?
    };
    let stained = stain_dataset(&dataset, &scheme, args.mask_fraction, seed)?;
    let out = OutputDir::prepare(&args.out, snapshot)?;
    write_dataset(&out.path("stained.jsonl"), &stained)?;
    out.write_json("scheme.json", &scheme)?;
    println!(
        "stained {} examples ({} with masked stains)",
        stained.len(),
        stained
            .iter()
            .filter(|e| e.tokens[0] == cx_core::model::MASK_TOKEN)
            .count()
    );
    Ok(())
}

fn run_verify_stain(args: &VerifyStainArgs, seed: u64, snapshot: &RunSnapshot) -> Result<()> {
    let classes: Vec<String> = TOPIC_CLASSES.iter().map(|c| c.to_string()).collect();
    let targets: Vec<usize> = if args.scheme == "all" {
        (0..classes.len()).collect()
    } else {
        vec![classes
            .iter()
            .position(|c| *c == args.scheme)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown scheme {:?}; use one of {classes:?} or \"all\"",
                    args.scheme
                ))
            })?]
    };
    let config = StainHarnessConfig {
        corpus: CorpusConfig {
            examples_per_class: args.examples_per_class,
            ..CorpusConfig::default()
        },
        mask_fraction: args.mask_fraction,
        train: TrainConfig {
            seed,
            ..TrainConfig::default()
        },
        ..StainHarnessConfig::default()
    };

    let out = OutputDir::prepare(&args.out, snapshot)?;
    let mut all_ok = true;
    for idx in targets {
        let scheme = StainScheme::for_class_index(&classes, idx)?;
        let report = run_stain_scheme(&scheme, &config, seed)?;
        let class = &classes[idx];
        out.write_json(&format!("stain_report_{class}.json"), &report)?;
        out.write_text(&format!("stain_report_{class}.txt"), &report.render_text())?;
        write_reports_csv(&out.path(&format!("grid_{class}.csv")), &report.foil_grid.reports)?;
        println!(
            "scheme {class}: dev accuracy {:.4}, recovery {:.4} ({}/{}), grid pattern {}",
            report.model_dev_accuracy,
            report.recovery_accuracy,
            report.cases_passed,
            report.cases_total,
            if report.grid_pattern_holds { "ok" } else { "VIOLATED" }
        );
        all_ok &= report.grid_pattern_holds;
    }
    if !all_ok {
        println!("warning: foil-grid pattern violated in at least one scheme");
    }
    Ok(())
}
