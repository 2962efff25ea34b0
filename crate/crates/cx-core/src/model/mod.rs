//! Classifier abstraction: encoder + linear head, `f(x) = W . enc(x)`.
//!
//! Any model whose decision is a linear readout of a latent vector fits the
//! analysis; external representations enter through the repr file format in
//! [`crate::model::io`]. A desk-scale bag-of-features encoder plus a
//! full-batch multinomial trainer make the whole pipeline runnable without
//! external models.

pub mod io;
pub mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, Vector};

/// Token used in raw text for an already-masked position. It is reserved:
/// it never enters a vocabulary and always encodes to the mask feature.
pub const MASK_TOKEN: &str = "<mask>";

/// One classified input: tokens plus gold label, with optional per-concept
/// binary labels and an optional link to a manually edited counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_labels: Option<BTreeMap<String, u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_of: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, label: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            tokens,
            label: label.into(),
            concept_labels: None,
            counterfactual_of: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "example {}: tokens must be non-empty",
                self.id
            )));
        }
        if let Some(labels) = &self.concept_labels {
            for (name, v) in labels {
                if *v > 1 {
                    return Err(Error::InvalidDataset(format!(
                        "example {}: concept {name} label {v} is not binary",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The ordered set of decision classes. Order is fixed for the lifetime of a
/// model: class index i selects row i of the head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpace {
    classes: Vec<String>,
}

impl EventSpace {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "event space needs >= 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.clone()) {
                return Err(Error::InvalidDataset(format!("duplicate class name {c}")));
            }
        }
        Ok(EventSpace { classes })
    }

    /// Distinct labels of `examples` in first-appearance order.
    pub fn from_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut classes: Vec<String> = Vec::new();
        for l in labels {
            if !classes.iter().any(|c| c == l) {
                classes.push(l.to_string());
            }
        }
        EventSpace::new(classes)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn index_of(&self, class: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::InvalidInput(format!("unknown class {class}")))
    }
}

/// Final linear layer: weight matrix `W` (one row per class) plus optional
/// per-class bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: Option<Vector>,
    pub event_space: EventSpace,
}

impl LinearHead {
    pub fn new(weights: Matrix, bias: Option<Vector>, event_space: EventSpace) -> Result<Self> {
        if weights.rows() != event_space.len() {
            return Err(Error::ShapeMismatch(format!(
                "head has {} rows but event space has {} classes",
                weights.rows(),
                event_space.len()
            )));
        }
        if weights.cols() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "latent dimension must be >= 2, got {}",
                weights.cols()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != event_space.len() {
                return Err(Error::ShapeMismatch(format!(
                    "bias length {} != class count {}",
                    b.len(),
                    event_space.len()
                )));
            }
        }
        Ok(LinearHead {
            weights,
            bias,
            event_space,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn class_row(&self, class: &str) -> Result<Vector> {
        let i = self.event_space.index_of(class)?;
        Ok(self.weights.row_vector(i))
    }
}

/// Latent representation of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRepr {
    pub example_id: String,
    pub h: Vector,
}

impl LatentRepr {
    pub fn new(example_id: impl Into<String>, h: Vector) -> Self {
        LatentRepr {
            example_id: example_id.into(),
            h,
        }
    }
}

/// Model output for one example.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Vector,
    pub probs: Vector,
    pub fact_index: usize,
}

impl Prediction {
    pub fn fact<'a>(&self, space: &'a EventSpace) -> &'a str {
        space.name(self.fact_index)
    }
}

/// Compute logits, probabilities, and the predicted class (the fact).
/// Argmax ties break toward the lowest class index.
pub fn predict(head: &LinearHead, h: &Vector) -> Result<Prediction> {
    let mut logits = head.weights.matvec(h)?;
    if let Some(b) = &head.bias {
        logits = logits.add(b)?;
    }
    let probs = softmax(&logits)?;
    let mut fact_index = 0;
    for (i, v) in logits.as_slice().iter().enumerate() {
        if *v > logits.as_slice()[fact_index] {
            fact_index = i;
        }
    }
    Ok(Prediction {
        logits,
        probs,
        fact_index,
    })
}

/// Feature transform applied after bag-of-features counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    /// h is the normalized count vector itself; d = |vocab| + 1.
    Identity,
    /// h = E^T counts for a fixed (|vocab|+1) x d matrix E.
    Projection(Matrix),
}

/// Deterministic bag-of-features encoder. Masked and out-of-vocabulary
/// tokens share one reserved feature so masked inputs stay in-distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowEncoder {
    vocab: BTreeMap<String, usize>,
    mask_index: usize,
    feature_map: FeatureMap,
}

/// Inclusive-start, exclusive-end token index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.start && index < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

fn normalize_token(tok: &str) -> String {
    tok.to_lowercase()
}

impl BowEncoder {
    /// Build a vocabulary from training tokens (lowercased, first-seen
    /// order). The literal mask token never enters the vocabulary.
    pub fn build(examples: &[Example]) -> Self {
        let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
        let mut next = 0usize;
        for ex in examples {
            for tok in &ex.tokens {
                let norm = normalize_token(tok);
                if norm == MASK_TOKEN {
                    continue;
                }
                vocab.entry(norm).or_insert_with(|| {
                    let idx = next;
                    next += 1;
                    idx
                });
            }
        }
        let mask_index = next;
        BowEncoder {
            vocab,
            mask_index,
            feature_map: FeatureMap::Identity,
        }
    }

    /// Replace the identity feature map with a fixed random projection to
    /// `dim` dimensions, seeded for reproducibility.
    pub fn with_random_projection(mut self, dim: usize, key: crate::numerics::RngKey) -> Result<Self> {
        use rand::Rng;
        if dim < 2 {
            return Err(Error::InvalidInput(format!(
                "projection dimension must be >= 2, got {dim}"
            )));
        }
        let rows = self.mask_index + 1;
        let mut rng = key.rng();
        let scale = 1.0 / (dim as f64).sqrt();
        let data: Vec<f64> = (0..rows * dim)
            .map(|_| {
                // Box-Muller keeps us off rand_distr for one Gaussian.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        self.feature_map = FeatureMap::Projection(Matrix::new(rows, dim, data)?);
        Ok(self)
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn mask_index(&self) -> usize {
        self.mask_index
    }

    pub fn vocab(&self) -> &BTreeMap<String, usize> {
        &self.vocab
    }

    /// Latent dimension this encoder produces.
    pub fn dim(&self) -> usize {
        match &self.feature_map {
            FeatureMap::Identity => self.mask_index + 1,
            FeatureMap::Projection(e) => e.cols(),
        }
    }

    pub fn feature_index(&self, token: &str) -> usize {
        let norm = normalize_token(token);
        if norm == MASK_TOKEN {
            return self.mask_index;
        }
        self.vocab.get(&norm).copied().unwrap_or(self.mask_index)
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.vocab.contains_key(&normalize_token(token))
    }

    /// Encode an example with the given spans masked. Tokens inside masked
    /// spans (and OOV tokens) count toward the mask feature; counts are
    /// L1-normalized.
    pub fn encode(&self, ex: &Example, masked_spans: &[Span]) -> Result<LatentRepr> {
        ex.validate()?;
        for (i, s) in masked_spans.iter().enumerate() {
            if s.start >= s.end || s.end > ex.tokens.len() {
                return Err(Error::InvalidSpan(format!(
                    "example {}: span {}..{} out of bounds for {} tokens",
                    ex.id,
                    s.start,
                    s.end,
                    ex.tokens.len()
                )));
            }
            for other in &masked_spans[i + 1..] {
                if s.overlaps(other) {
                    return Err(Error::InvalidSpan(format!(
                        "example {}: spans {}..{} and {}..{} overlap",
                        ex.id, s.start, s.end, other.start, other.end
                    )));
                }
            }
        }
        let mut counts = vec![0.0f64; self.mask_index + 1];
        for (i, tok) in ex.tokens.iter().enumerate() {
            let idx = if masked_spans.iter().any(|s| s.contains(i)) {
                self.mask_index
            } else {
                self.feature_index(tok)
            };
            counts[idx] += 1.0;
        }
        let total = ex.tokens.len() as f64;
        for c in counts.iter_mut() {
            *c /= total;
        }
        let h = match &self.feature_map {
            FeatureMap::Identity => Vector(counts),
            FeatureMap::Projection(e) => e.matvec_t(&Vector(counts))?,
        };
        Ok(LatentRepr::new(ex.id.clone(), h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_token_encoder() -> (BowEncoder, Example) {
        let ex = Example::new("e0", vec!["a".into(), "b".into()], "x");
        let train = vec![
            ex.clone(),
            Example::new("e1", vec!["a".into(), "b".into()], "y"),
        ];
        (BowEncoder::build(&train), ex)
    }

    #[test]
    fn encode_direct_counts() {
        let (enc, ex) = two_token_encoder();
        assert_eq!(enc.vocab_len(), 2);
        assert_eq!(enc.mask_index(), 2);
        let h = enc.encode(&ex, &[]).unwrap();
        assert_eq!(h.h.as_slice(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn encode_mask_substitution() {
        let (enc, ex) = two_token_encoder();
        let h = enc.encode(&ex, &[Span::new(0, 1)]).unwrap();
        assert_eq!(h.h.as_slice(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn encode_full_amnesia() {
        let (enc, ex) = two_token_encoder();
        let h = enc.encode(&ex, &[Span::new(0, 2)]).unwrap();
        assert_eq!(h.h.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn encode_rejects_overlapping_and_oob_spans() {
        let (enc, ex) = two_token_encoder();
        assert!(matches!(
            enc.encode(&ex, &[Span::new(0, 2), Span::new(1, 2)]),
            Err(Error::InvalidSpan(_))
        ));
        assert!(matches!(
            enc.encode(&ex, &[Span::new(1, 3)]),
            Err(Error::InvalidSpan(_))
        ));
        assert!(matches!(
            enc.encode(&ex, &[Span::new(1, 1)]),
            Err(Error::InvalidSpan(_))
        ));
    }

    #[test]
    fn encode_oov_and_literal_mask_map_to_mask_feature() {
        let (enc, _) = two_token_encoder();
        let ex = Example::new("q", vec!["zzz".into(), MASK_TOKEN.into()], "x");
        let h = enc.encode(&ex, &[]).unwrap();
        assert_eq!(h.h.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn encode_is_order_invariant() {
        let train = vec![Example::new(
            "t",
            vec!["a".into(), "b".into(), "c".into()],
            "x",
        )];
        let enc = BowEncoder::build(&train);
        let e1 = Example::new("p", vec!["a".into(), "b".into(), "c".into()], "x");
        let e2 = Example::new("p", vec!["c".into(), "a".into(), "b".into()], "x");
        assert_eq!(
            enc.encode(&e1, &[]).unwrap().h,
            enc.encode(&e2, &[]).unwrap().h
        );
    }

    #[test]
    fn masking_touches_only_span_features_and_mask() {
        let train = vec![Example::new(
            "t",
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            "x",
        )];
        let enc = BowEncoder::build(&train);
        let ex = &train[0];
        let plain = enc.encode(ex, &[]).unwrap().h;
        let masked = enc.encode(ex, &[Span::new(1, 2)]).unwrap().h;
        let b_idx = enc.feature_index("b");
        for i in 0..plain.len() {
            if i == b_idx || i == enc.mask_index() {
                continue;
            }
            assert_eq!(plain.as_slice()[i], masked.as_slice()[i]);
        }
    }

    #[test]
    fn predict_identity_head_matches_oracle() {
        // W = I (2x2), h = (1,0): probs are (e/(e+1), 1/(e+1)).
        let space = EventSpace::new(vec!["c0".into(), "c1".into()]).unwrap();
        let head = LinearHead::new(Matrix::identity(2), None, space).unwrap();
        let out = predict(&head, &Vector(vec![1.0, 0.0])).unwrap();
        assert_eq!(out.fact_index, 0);
        let e_over = 0.7310585786300048792512;
        let one_over = 0.2689414213699951207488;
        assert!((out.probs.as_slice()[0] - e_over).abs() < 1e-12);
        assert!((out.probs.as_slice()[1] - one_over).abs() < 1e-12);
    }

    #[test]
    fn predict_zero_head_ties_break_low() {
        let space = EventSpace::new(vec!["c0".into(), "c1".into(), "c2".into()]).unwrap();
        let head = LinearHead::new(Matrix::zeros(3, 4), None, space).unwrap();
        let out = predict(&head, &Vector(vec![0.3, 0.1, 0.2, 0.4])).unwrap();
        assert_eq!(out.fact_index, 0);
        for p in out.probs.as_slice() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_shift_invariant_fact() {
        let space = EventSpace::new(vec!["c0".into(), "c1".into()]).unwrap();
        let w = Matrix::new(2, 2, vec![0.4, -0.2, 0.1, 0.9]).unwrap();
        let head = LinearHead::new(w.clone(), None, space.clone()).unwrap();
        let h = Vector(vec![0.7, -0.3]);
        let base = predict(&head, &h).unwrap();
        // Adding c to every logit = adding a constant column via bias.
        let shifted_head =
            LinearHead::new(w, Some(Vector(vec![5.0, 5.0])), space).unwrap();
        let shifted = predict(&shifted_head, &h).unwrap();
        assert_eq!(base.fact_index, shifted.fact_index);
        assert!(base.probs.max_abs_diff(&shifted.probs).unwrap() < 1e-12);
    }

    #[test]
    fn event_space_rejects_duplicates_and_singletons() {
        assert!(EventSpace::new(vec!["a".into()]).is_err());
        assert!(EventSpace::new(vec!["a".into(), "a".into()]).is_err());
    }
}
