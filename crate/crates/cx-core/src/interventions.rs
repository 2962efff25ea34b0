//! Interventions that produce pre/post behavior pairs: highlight masking,
//! amnesic concept removal, user-supplied paired counterfactuals, and the
//! contrastive-only projection.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::amnesic::{apply_amnesic, ProjectionStack};
use crate::contrastive::{contrastive_only_intervention, BehaviorPair, ContrastivePair};
use crate::error::{Error, Result};
use crate::model::{predict, BowEncoder, Example, LinearHead, Span};
use crate::par;

/// A candidate causal factor: a token span to mask or a named concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Factor {
    Highlight { spans: Vec<Span>, display: String },
    Concept { name: String },
}

impl Factor {
    pub fn display(&self) -> String {
        match self {
            Factor::Highlight { display, .. } => display.clone(),
            Factor::Concept { name } => format!("concept:{name}"),
        }
    }

    pub fn highlight_from_spans(spans: Vec<Span>, tokens: &[String]) -> Factor {
        let display = spans
            .iter()
            .map(|s| tokens[s.start..s.end].join(" "))
            .collect::<Vec<_>>()
            .join(" | ");
        Factor::Highlight { spans, display }
    }
}

/// What to do to an example, and against which contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InterventionKind {
    Mask,
    Amnesic,
    Paired,
    ContrastiveOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub kind: InterventionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<Factor>,
    pub pair: ContrastivePair,
}

impl InterventionPlan {
    pub fn tag(&self) -> String {
        match (&self.kind, &self.factor) {
            (InterventionKind::Mask, Some(f)) => format!("mask:{}", f.display()),
            (InterventionKind::Amnesic, Some(f)) => format!("amnesic:{}", f.display()),
            (InterventionKind::Paired, _) => "paired".into(),
            (InterventionKind::ContrastiveOnly, _) => "contrastive-only".into(),
            (k, None) => format!("{k:?}").to_lowercase(),
        }
    }

    fn validate(&self) -> Result<()> {
        match (&self.kind, &self.factor) {
            (InterventionKind::Mask, Some(Factor::Highlight { .. })) => Ok(()),
            (InterventionKind::Mask, _) => Err(Error::InvalidInput(
                "mask intervention requires a highlight factor".into(),
            )),
            (InterventionKind::Amnesic, Some(Factor::Concept { .. })) => Ok(()),
            (InterventionKind::Amnesic, _) => Err(Error::InvalidInput(
                "amnesic intervention requires a concept factor".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Everything an intervention may need beyond the example itself.
pub struct InterventionContext<'a> {
    pub head: &'a LinearHead,
    pub encoder: &'a BowEncoder,
    /// Amnesic stacks by concept name, trained once on the analysis split.
    pub stacks: HashMap<String, &'a ProjectionStack>,
    /// Counterfactual examples by the id of the example they edit.
    pub paired: HashMap<String, &'a Example>,
}

impl<'a> InterventionContext<'a> {
    pub fn new(head: &'a LinearHead, encoder: &'a BowEncoder) -> Self {
        InterventionContext {
            head,
            encoder,
            stacks: HashMap::new(),
            paired: HashMap::new(),
        }
    }

    pub fn with_stack(mut self, stack: &'a ProjectionStack) -> Self {
        self.stacks.insert(stack.concept.clone(), stack);
        self
    }

    /// Index counterfactual_of links so paired plans resolve in O(1).
    pub fn with_paired_from(mut self, dataset: &'a [Example]) -> Self {
        for ex in dataset {
            if let Some(orig) = &ex.counterfactual_of {
                self.paired.insert(orig.clone(), ex);
            }
        }
        self
    }
}

/// Run one intervention plan on one example.
pub fn intervene(
    ctx: &InterventionContext<'_>,
    ex: &Example,
    plan: &InterventionPlan,
) -> Result<BehaviorPair> {
    plan.validate()?;
    let base = ctx.encoder.encode(ex, &[])?;
    let p = predict(ctx.head, &base.h)?.probs;

    let q = match (&plan.kind, &plan.factor) {
        (InterventionKind::Mask, Some(Factor::Highlight { spans, .. })) => {
            let masked = ctx.encoder.encode(ex, spans)?;
            predict(ctx.head, &masked.h)?.probs
        }
        (InterventionKind::Amnesic, Some(Factor::Concept { name })) => {
            let stack = ctx
                .stacks
                .get(name)
                .ok_or_else(|| Error::NoConcept(format!("no trained stack for {name}")))?;
            let projected = apply_amnesic(stack, &base)?;
            predict(ctx.head, &projected.h)?.probs
        }
        (InterventionKind::Paired, _) => {
            let cf = ctx.paired.get(&ex.id).ok_or_else(|| {
                Error::MissingPair(format!("example {} has no counterfactual", ex.id))
            })?;
            let cf_repr = ctx.encoder.encode(cf, &[])?;
            predict(ctx.head, &cf_repr.h)?.probs
        }
        (InterventionKind::ContrastiveOnly, _) => {
            return contrastive_only_intervention(ctx.head, &base.h, &ex.id, &plan.pair);
        }
        _ => unreachable!("validated above"),
    };

    Ok(BehaviorPair {
        example_id: ex.id.clone(),
        pair: plan.pair.clone(),
        p,
        q,
        intervention_tag: plan.tag(),
    })
}

/// An example that failed its preconditions during a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub example_id: String,
    pub plan_tag: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub pairs: Vec<BehaviorPair>,
    pub skipped: Vec<SkipRecord>,
}

/// Run every plan against every example (example-major order). Failures are
/// recorded, never fatal; output order is deterministic and independent of
/// worker count.
pub fn batch_intervene(
    ctx: &InterventionContext<'_>,
    dataset: &[Example],
    plans: &[InterventionPlan],
) -> BatchOutcome {
    let per_example: Vec<Vec<std::result::Result<BehaviorPair, SkipRecord>>> =
        par::map_ordered(dataset, |ex| {
            plans
                .iter()
                .map(|plan| {
                    intervene(ctx, ex, plan).map_err(|e| SkipRecord {
                        example_id: ex.id.clone(),
                        plan_tag: plan.tag(),
                        reason: e.to_string(),
                    })
                })
                .collect()
        });
    let mut outcome = BatchOutcome::default();
    for results in per_example {
        for r in results {
            match r {
                Ok(bp) => outcome.pairs.push(bp),
                Err(skip) => outcome.skipped.push(skip),
            }
        }
    }
    outcome
}

/// Sequential twin of [`batch_intervene`] for determinism checks.
pub fn batch_intervene_seq(
    ctx: &InterventionContext<'_>,
    dataset: &[Example],
    plans: &[InterventionPlan],
) -> BatchOutcome {
    let per_example: Vec<Vec<std::result::Result<BehaviorPair, SkipRecord>>> =
        par::map_ordered_seq(dataset, |ex| {
            plans
                .iter()
                .map(|plan| {
                    intervene(ctx, ex, plan).map_err(|e| SkipRecord {
                        example_id: ex.id.clone(),
                        plan_tag: plan.tag(),
                        reason: e.to_string(),
                    })
                })
                .collect()
        });
    let mut outcome = BatchOutcome::default();
    for results in per_example {
        for r in results {
            match r {
                Ok(bp) => outcome.pairs.push(bp),
                Err(skip) => outcome.skipped.push(skip),
            }
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::train::{train_logistic, TrainConfig};

    fn desk_fixture() -> (Vec<Example>, BowEncoder, LinearHead) {
        let mut data = Vec::new();
        for i in 0..30 {
            data.push(Example::new(
                format!("a{i}"),
                vec!["cat".into(), "pet".into()],
                "A",
            ));
            data.push(Example::new(
                format!("b{i}"),
                vec!["dog".into(), "pet".into()],
                "B",
            ));
        }
        let encoder = BowEncoder::build(&data);
        let head = train_logistic(&data, &encoder, &TrainConfig::default()).unwrap();
        (data, encoder, head)
    }

    #[test]
    fn empty_span_mask_is_noop() {
        let (data, encoder, head) = desk_fixture();
        let ctx = InterventionContext::new(&head, &encoder);
        let plan = InterventionPlan {
            kind: InterventionKind::Mask,
            factor: Some(Factor::Highlight {
                spans: vec![],
                display: "nothing".into(),
            }),
            pair: ContrastivePair::new("A", "B").unwrap(),
        };
        let bp = intervene(&ctx, &data[0], &plan).unwrap();
        assert_eq!(bp.p, bp.q);
        assert_eq!(bp.delta(&head).unwrap(), 0.0);
    }

    #[test]
    fn paired_identity_example_gives_zero_delta() {
        let (mut data, encoder, head) = desk_fixture();
        let mut clone = data[0].clone();
        clone.id = "a0-cf".into();
        clone.counterfactual_of = Some("a0".into());
        data.push(clone);
        let ctx = InterventionContext::new(&head, &encoder).with_paired_from(&data);
        let plan = InterventionPlan {
            kind: InterventionKind::Paired,
            factor: None,
            pair: ContrastivePair::new("A", "B").unwrap(),
        };
        let bp = intervene(&ctx, &data[0], &plan).unwrap();
        assert_eq!(bp.delta(&head).unwrap(), 0.0);
    }

    #[test]
    fn paired_without_link_is_missing_pair() {
        let (data, encoder, head) = desk_fixture();
        let ctx = InterventionContext::new(&head, &encoder);
        let plan = InterventionPlan {
            kind: InterventionKind::Paired,
            factor: None,
            pair: ContrastivePair::new("A", "B").unwrap(),
        };
        assert!(matches!(
            intervene(&ctx, &data[0], &plan),
            Err(Error::MissingPair(_))
        ));
    }

    #[test]
    fn amnesic_without_stack_is_no_concept() {
        let (data, encoder, head) = desk_fixture();
        let ctx = InterventionContext::new(&head, &encoder);
        let plan = InterventionPlan {
            kind: InterventionKind::Amnesic,
            factor: Some(Factor::Concept {
                name: "missing".into(),
            }),
            pair: ContrastivePair::new("A", "B").unwrap(),
        };
        assert!(matches!(
            intervene(&ctx, &data[0], &plan),
            Err(Error::NoConcept(_))
        ));
    }

    #[test]
    fn masking_the_evidence_token_moves_delta_positive() {
        let (data, encoder, head) = desk_fixture();
        let ctx = InterventionContext::new(&head, &encoder);
        // Masking "cat" on an A example removes the evidence for A vs B.
        let plan = InterventionPlan {
            kind: InterventionKind::Mask,
            factor: Some(Factor::highlight_from_spans(
                vec![Span::new(0, 1)],
                &data[0].tokens,
            )),
            pair: ContrastivePair::new("A", "B").unwrap(),
        };
        let bp = intervene(&ctx, &data[0], &plan).unwrap();
        assert!(bp.delta(&head).unwrap() > 0.05);
        assert_eq!(bp.intervention_tag, "mask:cat");
    }

    #[test]
    fn batch_matches_cardinality_and_order_and_records_skips() {
        let (data, encoder, head) = desk_fixture();
        let ctx = InterventionContext::new(&head, &encoder);
        let plans = vec![
            InterventionPlan {
                kind: InterventionKind::ContrastiveOnly,
                factor: None,
                pair: ContrastivePair::new("A", "B").unwrap(),
            },
            InterventionPlan {
                kind: InterventionKind::Paired, // nobody has links: all skip
                factor: None,
                pair: ContrastivePair::new("A", "B").unwrap(),
            },
        ];
        let out = batch_intervene(&ctx, &data, &plans);
        assert_eq!(out.pairs.len(), data.len());
        assert_eq!(out.skipped.len(), data.len());
        // Example-major, plan-minor ordering of successes.
        for (i, bp) in out.pairs.iter().enumerate() {
            assert_eq!(bp.example_id, data[i].id);
        }
        let empty = batch_intervene(&ctx, &[], &plans);
        assert!(empty.pairs.is_empty() && empty.skipped.is_empty());
    }

    #[test]
    fn parallel_and_sequential_batches_are_byte_identical() {
        let (data, encoder, head) = desk_fixture();
        let ctx = InterventionContext::new(&head, &encoder);
        let plans: Vec<InterventionPlan> = vec![
            InterventionPlan {
                kind: InterventionKind::Mask,
                factor: Some(Factor::Highlight {
                    spans: vec![Span::new(0, 1)],
                    display: "first".into(),
                }),
                pair: ContrastivePair::new("A", "B").unwrap(),
            },
            InterventionPlan {
                kind: InterventionKind::ContrastiveOnly,
                factor: None,
                pair: ContrastivePair::new("B", "A").unwrap(),
            },
        ];
        let par_run = batch_intervene(&ctx, &data, &plans);
        let seq_run = batch_intervene_seq(&ctx, &data, &plans);
        let pooled = crate::par::with_workers(4, || batch_intervene(&ctx, &data, &plans));
        let bytes = |o: &BatchOutcome| {
            serde_json::to_vec(&(&o.pairs, &o.skipped)).unwrap()
        };
        assert_eq!(bytes(&par_run), bytes(&seq_run));
        assert_eq!(bytes(&par_run), bytes(&pooled));
    }

    #[test]
    fn behavior_pairs_are_valid_distributions() {
        let (data, encoder, head) = desk_fixture();
        let ctx = InterventionContext::new(&head, &encoder);
        let plan = InterventionPlan {
            kind: InterventionKind::Mask,
            factor: Some(Factor::Highlight {
                spans: vec![Span::new(0, 2)],
                display: "all".into(),
            }),
            pair: ContrastivePair::new("A", "B").unwrap(),
        };
        let out = batch_intervene(&ctx, &data, &[plan]);
        for bp in &out.pairs {
            for dist in [&bp.p, &bp.q] {
                let sum: f64 = dist.as_slice().iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }
}
