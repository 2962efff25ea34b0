//! Concept removal by iterative nullspace projection.
//!
//! Train a linear probe for a binary concept, project every representation
//! onto the probe's nullspace, retrain, and repeat until the probe can no
//! longer beat the majority baseline: at that point the concept is linearly
//! unrecoverable. The first probe direction doubles as the concept vector
//! whose cosine sign against a contrastive direction tells whether the
//! concept supports the fact or the foil.

use serde::{Deserialize, Serialize};

use crate::contrastive::ContrastiveDirection;
use crate::error::{Error, Result};
use crate::model::train::{fit_multinomial, LogisticObjective, TrainConfig};
use crate::model::LatentRepr;
use crate::numerics::{Matrix, RngKey, Vector};

/// How a concept's binary labels are obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub name: String,
    pub labeler: ConceptLabeler,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptLabeler {
    /// Read `Example.concept_labels[name]`.
    FromDataset,
    /// A built-in rule applied to tokens (see the ranking module's labelers).
    BuiltIn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InlpConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for InlpConfig {
    fn default() -> Self {
        InlpConfig {
            epsilon: 0.01,
            max_iters: 40,
            seed: 0,
        }
    }
}

/// The removed directions and their composed nullspace projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStack {
    pub concept: String,
    /// Unit directions removed per iteration, mutually orthonormal.
    pub directions: Vec<Vector>,
    pub iterations: usize,
    pub dev_accuracies: Vec<f64>,
    pub final_probe_accuracy: f64,
    pub majority_baseline: f64,
    pub converged: bool,
    pub config: InlpConfig,
    pub dim: usize,
}

impl ProjectionStack {
    /// `P = I - sum v v^T` over the removed directions.
    pub fn projection_matrix(&self) -> Result<Matrix> {
        let mut p = Matrix::identity(self.dim);
        for v in &self.directions {
            p.sub_outer(v)?;
        }
        Ok(p)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, self)?;
        use std::io::Write;
        out.flush()?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let stack: ProjectionStack = serde_json::from_reader(std::io::BufReader::new(file))?;
        for v in &stack.directions {
            if v.len() != stack.dim {
                return Err(Error::ShapeMismatch(format!(
                    "stack direction has length {}, dim is {}",
                    v.len(),
                    stack.dim
                )));
            }
        }
        Ok(stack)
    }
}

/// Unit direction summarizing the removed concept subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub r: Vector,
}

/// Sign of the cosine between the concept vector and a contrastive
/// direction: `+` means the concept supports the fact over the foil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConceptSign {
    Positive,
    Negative,
    Indeterminate,
}

impl std::fmt::Display for ConceptSign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConceptSign::Positive => write!(f, "+"),
            ConceptSign::Negative => write!(f, "-"),
            ConceptSign::Indeterminate => write!(f, "±0"),
        }
    }
}

/// Deterministic 80/20 train/dev split by FNV-1a hash of the example id.
/// Stable across runs and platforms; independent of dataset order.
pub fn is_dev_example(id: &str) -> bool {
    fnv1a(id.as_bytes()) % 5 == 0
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// A trained binary probe: unit weight direction (oriented toward label 1)
/// and its dev-split accuracy.
#[derive(Debug, Clone)]
pub struct Probe {
    pub weight: Vector,
    pub dev_accuracy: f64,
}

fn probe_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 2.0,
        epochs: 250,
        l2: 1e-4,
        seed,
    }
}

/// Train a logistic probe for binary labels over representations.
/// Returns the weight direction (label-1 minus label-0 row, normalized)
/// and dev accuracy under the deterministic id-hash split.
pub fn train_probe(reprs: &[LatentRepr], labels: &[u8], seed: u64) -> Result<Probe> {
    if reprs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} representations vs {} labels",
            reprs.len(),
            labels.len()
        )));
    }
    if reprs.is_empty() {
        return Err(Error::InvalidConcept("no representations".into()));
    }
    let mut train_idx = Vec::new();
    let mut dev_idx = Vec::new();
    for (i, r) in reprs.iter().enumerate() {
        if is_dev_example(&r.example_id) {
            dev_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    let seen: std::collections::BTreeSet<u8> = train_idx.iter().map(|i| labels[*i]).collect();
    if seen.len() < 2 {
        return Err(Error::InvalidConcept(
            "both concept labels must be present in the training split".into(),
        ));
    }

    let features: Vec<Vector> = train_idx.iter().map(|i| reprs[*i].h.clone()).collect();
    let targets: Vec<usize> = train_idx.iter().map(|i| labels[*i] as usize).collect();
    let objective = LogisticObjective::new(features, targets, 2, 1e-4, true)?;
    let fit = fit_multinomial(&objective, &probe_train_config(seed), 1e-3)?;

    // Direction toward label 1.
    let weight = fit
        .weights
        .row_vector(1)
        .sub(&fit.weights.row_vector(0))?;
    let bias = fit
        .bias
        .as_ref()
        .map(|b| b.as_slice()[1] - b.as_slice()[0])
        .unwrap_or(0.0);

    let eval_idx = if dev_idx.is_empty() { &train_idx } else { &dev_idx };
    let mut correct = 0usize;
    for i in eval_idx {
        let score = weight.dot(&reprs[*i].h)? + bias;
        let pred = u8::from(score > 0.0);
        if pred == labels[*i] {
            correct += 1;
        }
    }
    let dev_accuracy = correct as f64 / eval_idx.len() as f64;
    Ok(Probe {
        weight,
        dev_accuracy,
    })
}

/// Majority-class rate over the dev split (train split as fallback).
pub fn majority_baseline(reprs: &[LatentRepr], labels: &[u8]) -> f64 {
    let dev: Vec<u8> = reprs
        .iter()
        .zip(labels)
        .filter(|(r, _)| is_dev_example(&r.example_id))
        .map(|(_, l)| *l)
        .collect();
    let pool: Vec<u8> = if dev.is_empty() { labels.to_vec() } else { dev };
    let ones = pool.iter().filter(|l| **l == 1).count();
    let zeros = pool.len() - ones;
    ones.max(zeros) as f64 / pool.len() as f64
}

/// Remove the components of `w` along previously removed directions and
/// normalize. Returns None when nothing new is left.
fn orthonormalize(w: &Vector, removed: &[Vector]) -> Result<Option<Vector>> {
    let mut v = w.clone();
    for r in removed {
        let coeff = v.dot(r)?;
        v.axpy_neg(coeff, r)?;
    }
    let norm = v.norm();
    if norm < 1e-10 * w.norm().max(1.0) {
        return Ok(None);
    }
    Ok(Some(v.scale(1.0 / norm)))
}

/// Iterative nullspace projection. Each iteration trains a probe,
/// orthonormalizes its weight against already-removed directions, and
/// applies the rank-1 nullspace projection to all representations; stops
/// when the probe can no longer beat majority + epsilon.
///
/// Non-convergence at `max_iters` is flagged, not fatal: removal is
/// linear-only and some concepts never converge.
pub fn inlp(
    reprs: &[LatentRepr],
    concept_name: &str,
    labels: &[u8],
    config: &InlpConfig,
) -> Result<ProjectionStack> {
    if reprs.is_empty() {
        return Err(Error::InvalidConcept("no representations".into()));
    }
    let dim = reprs[0].h.len();
    let majority = majority_baseline(reprs, labels);
    let mut current: Vec<LatentRepr> = reprs.to_vec();
    let mut directions: Vec<Vector> = Vec::new();
    let mut dev_accuracies = Vec::new();
    let mut converged = false;
    let key = RngKey::new(config.seed);

    for iter in 0..config.max_iters {
        let probe = train_probe(&current, labels, key.child(iter as u64).seed ^ iter as u64)?;
        dev_accuracies.push(probe.dev_accuracy);
        if probe.dev_accuracy <= majority + config.epsilon {
            converged = true;
            break;
        }
        let Some(v) = orthonormalize(&probe.weight, &directions)? else {
            // Probe found nothing outside the removed span; treat as done.
            converged = probe.dev_accuracy <= majority + config.epsilon;
            break;
        };
        for r in current.iter_mut() {
            let coeff = v.dot(&r.h)?;
            r.h.axpy_neg(coeff, &v)?;
        }
        directions.push(v);
    }

    let final_probe_accuracy = *dev_accuracies.last().unwrap_or(&majority);
    Ok(ProjectionStack {
        concept: concept_name.to_string(),
        iterations: directions.len(),
        directions,
        dev_accuracies,
        final_probe_accuracy,
        majority_baseline: majority,
        converged,
        config: *config,
        dim,
    })
}

/// Apply the composed nullspace projection to one representation.
pub fn apply_amnesic(stack: &ProjectionStack, repr: &LatentRepr) -> Result<LatentRepr> {
    if repr.h.len() != stack.dim {
        return Err(Error::ShapeMismatch(format!(
            "representation has dimension {}, stack expects {}",
            repr.h.len(),
            stack.dim
        )));
    }
    let mut h = repr.h.clone();
    for v in &stack.directions {
        let coeff = v.dot(&h)?;
        h.axpy_neg(coeff, v)?;
    }
    Ok(LatentRepr::new(repr.example_id.clone(), h))
}

/// The concept vector: the first iteration's unit probe direction, the
/// dominant linear encoding of the concept.
pub fn concept_vector(stack: &ProjectionStack) -> Result<ConceptVector> {
    let first = stack
        .directions
        .first()
        .ok_or_else(|| Error::NoConcept(format!("stack for {} is empty", stack.concept)))?;
    Ok(ConceptVector { r: first.clone() })
}

/// Sign of cos(r, u). Dots below 1e-12 in magnitude are indeterminate.
pub fn concept_sign(cv: &ConceptVector, dir: &ContrastiveDirection) -> Result<ConceptSign> {
    let dot = cv.r.dot(&dir.u)?;
    Ok(if dot.abs() < 1e-12 {
        ConceptSign::Indeterminate
    } else if dot > 0.0 {
        ConceptSign::Positive
    } else {
        ConceptSign::Negative
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Gaussian reprs with the concept planted in one coordinate.
    fn single_axis_data(n: usize, d: usize, axis: usize, seed: u64) -> (Vec<LatentRepr>, Vec<u8>) {
        let mut rng = RngKey::new(seed).rng();
        let mut reprs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            let mut h: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            h[axis] = if label == 1 { 1.0 } else { -1.0 };
            reprs.push(LatentRepr::new(format!("x{i}"), Vector(h)));
            labels.push(label);
        }
        (reprs, labels)
    }

    #[test]
    fn probe_finds_planted_axis() {
        let (reprs, labels) = single_axis_data(400, 8, 3, 1);
        let probe = train_probe(&reprs, &labels, 0).unwrap();
        assert!(probe.dev_accuracy >= 0.99, "acc {}", probe.dev_accuracy);
        let unit = probe.weight.scale(1.0 / probe.weight.norm());
        assert!(unit.as_slice()[3].abs() > 0.95, "weight {:?}", unit);
    }

    #[test]
    fn probe_near_majority_on_random_labels() {
        let mut rng = RngKey::new(2).rng();
        let mut reprs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..600 {
            let h: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            reprs.push(LatentRepr::new(format!("r{i}"), Vector(h)));
            labels.push(rng.gen_range(0..2u8));
        }
        let probe = train_probe(&reprs, &labels, 0).unwrap();
        let majority = majority_baseline(&reprs, &labels);
        assert!(
            (probe.dev_accuracy - majority).abs() <= 0.1,
            "acc {} vs majority {}",
            probe.dev_accuracy,
            majority
        );
    }

    #[test]
    fn probe_deterministic_for_fixed_seed() {
        let (reprs, labels) = single_axis_data(200, 5, 2, 3);
        let a = train_probe(&reprs, &labels, 42).unwrap();
        let b = train_probe(&reprs, &labels, 42).unwrap();
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.dev_accuracy, b.dev_accuracy);
    }

    #[test]
    fn probe_rejects_single_label() {
        let (reprs, _) = single_axis_data(50, 4, 0, 4);
        let labels = vec![1u8; 50];
        assert!(matches!(
            train_probe(&reprs, &labels, 0),
            Err(Error::InvalidConcept(_))
        ));
    }

    #[test]
    fn inlp_single_axis_converges_in_one_iteration() {
        // Needs enough dev examples that a signal-free probe's accuracy
        // stays inside the majority + epsilon band.
        let (reprs, labels) = single_axis_data(2000, 8, 3, 5);
        let stack = inlp(&reprs, "axis3", &labels, &InlpConfig::default()).unwrap();
        assert!(stack.converged);
        assert_eq!(stack.iterations, 1);
        let v = &stack.directions[0];
        assert!(v.as_slice()[3].abs() > 0.95, "direction {:?}", v);
        assert!(stack.final_probe_accuracy <= stack.majority_baseline + 0.01 + 1e-12);
    }

    #[test]
    fn inlp_directions_orthonormal_and_projector_idempotent() {
        // Concept spread over three coordinates via a group mixture.
        let mut rng = RngKey::new(6).rng();
        let mut reprs = Vec::new();
        let mut labels = Vec::new();
        let coords = [1usize, 2, 5];
        for i in 0..900 {
            let label = (i % 2) as u8;
            let group = (i / 2) % 3;
            let mut h: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.4..0.4)).collect();
            h[coords[group]] = if label == 1 { 1.0 } else { -1.0 };
            reprs.push(LatentRepr::new(format!("g{i}"), Vector(h)));
            labels.push(label);
        }
        let stack = inlp(&reprs, "spread", &labels, &InlpConfig::default()).unwrap();
        assert!(stack.converged, "accuracies {:?}", stack.dev_accuracies);
        for (i, a) in stack.directions.iter().enumerate() {
            assert!((a.norm() - 1.0).abs() < 1e-8);
            for b in &stack.directions[i + 1..] {
                assert!(a.dot(b).unwrap().abs() < 1e-8);
            }
        }
        let p = stack.projection_matrix().unwrap();
        // symmetric
        for r in 0..8 {
            for c in 0..8 {
                assert!((p.get(r, c) - p.get(c, r)).abs() < 1e-8);
            }
        }
        // idempotent via double application to random vectors
        let mut rng = RngKey::new(7).rng();
        for _ in 0..20 {
            let h = Vector((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let once = p.matvec(&h).unwrap();
            let twice = p.matvec(&once).unwrap();
            assert!(twice.max_abs_diff(&once).unwrap() < 1e-8);
            assert!(once.norm() <= h.norm() + 1e-10);
        }
    }

    #[test]
    fn apply_amnesic_matches_sequential_rank_one_oracle() {
        let (reprs, labels) = single_axis_data(600, 8, 2, 8);
        let stack = inlp(&reprs, "axis2", &labels, &InlpConfig::default()).unwrap();
        let p = stack.projection_matrix().unwrap();
        let mut rng = RngKey::new(9).rng();
        for i in 0..20 {
            let h = Vector((0..8).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let repr = LatentRepr::new(format!("t{i}"), h.clone());
            let fast = apply_amnesic(&stack, &repr).unwrap();
            let via_matrix = p.matvec(&h).unwrap();
            assert!(fast.h.max_abs_diff(&via_matrix).unwrap() < 1e-9);
        }
    }

    #[test]
    fn apply_amnesic_kills_removed_span_keeps_complement() {
        let (reprs, labels) = single_axis_data(600, 6, 1, 10);
        let stack = inlp(&reprs, "axis1", &labels, &InlpConfig::default()).unwrap();
        let v = stack.directions[0].clone();
        let inside = apply_amnesic(&stack, &LatentRepr::new("in", v.scale(3.0))).unwrap();
        assert!(inside.h.norm() < 1e-8);
        // Build a vector orthogonal to all removed directions.
        let mut ortho = Vector(vec![1.0, 0.0, 0.5, -0.25, 0.0, 2.0]);
        for d in &stack.directions {
            let c = ortho.dot(d).unwrap();
            ortho.axpy_neg(c, d).unwrap();
        }
        let out = apply_amnesic(&stack, &LatentRepr::new("out", ortho.clone())).unwrap();
        assert!(out.h.max_abs_diff(&ortho).unwrap() < 1e-10);
    }

    #[test]
    fn concept_vector_and_sign() {
        use crate::contrastive::{ContrastivePair, ContrastiveDirection};
        let (reprs, labels) = single_axis_data(600, 6, 2, 11);
        let stack = inlp(&reprs, "axis2", &labels, &InlpConfig::default()).unwrap();
        let cv = concept_vector(&stack).unwrap();
        assert!((cv.r.norm() - 1.0).abs() < 1e-10);

        let mk_dir = |u: Vec<f64>| ContrastiveDirection {
            pair: ContrastivePair::new("a", "b").unwrap(),
            norm_sq: Vector(u.clone()).norm_sq(),
            u: Vector(u),
        };
        let aligned = mk_dir(cv.r.as_slice().to_vec());
        assert_eq!(concept_sign(&cv, &aligned).unwrap(), ConceptSign::Positive);
        let anti = mk_dir(cv.r.scale(-1.0).as_slice().to_vec());
        assert_eq!(concept_sign(&cv, &anti).unwrap(), ConceptSign::Negative);
        // Orthogonal direction: indeterminate. Build one via Gram-Schmidt.
        let mut w = Vector(vec![0.3, -1.0, 0.2, 0.9, -0.5, 0.1]);
        let c = w.dot(&cv.r).unwrap();
        w.axpy_neg(c, &cv.r).unwrap();
        let ortho = mk_dir(w.as_slice().to_vec());
        assert_eq!(
            concept_sign(&cv, &ortho).unwrap(),
            ConceptSign::Indeterminate
        );
    }

    #[test]
    fn empty_stack_has_no_concept_vector() {
        let stack = ProjectionStack {
            concept: "none".into(),
            directions: vec![],
            iterations: 0,
            dev_accuracies: vec![0.5],
            final_probe_accuracy: 0.5,
            majority_baseline: 0.5,
            converged: true,
            config: InlpConfig::default(),
            dim: 4,
        };
        assert!(matches!(
            concept_vector(&stack),
            Err(Error::NoConcept(_))
        ));
    }

    #[test]
    fn stack_round_trips_through_json() {
        let (reprs, labels) = single_axis_data(400, 5, 0, 12);
        let stack = inlp(&reprs, "axis0", &labels, &InlpConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.json");
        stack.write_json(&path).unwrap();
        let back = ProjectionStack::read_json(&path).unwrap();
        assert_eq!(stack, back);
    }
}
