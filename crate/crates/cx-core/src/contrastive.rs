//! Contrastive direction, projection, and behavior measure.
//!
//! For a fact/foil class pair the only latent direction the head uses to
//! choose between them is `u = w_fact - w_foil`. Projecting a representation
//! onto span(u) keeps exactly the contrastive content: the fact/foil logit
//! gap is preserved and every orthogonal component (which supports both
//! classes equally) is discarded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    clamp_distribution, project_onto, Vector, DIRECTION_NORM_SQ_MIN,
};
use crate::model::{predict, LinearHead};

/// A fact (predicted class) and a foil (the alternative it is contrasted
/// against). Always a single foil class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub fact: String,
    pub foil: String,
}

impl ContrastivePair {
    pub fn new(fact: impl Into<String>, foil: impl Into<String>) -> Result<Self> {
        let fact = fact.into();
        let foil = foil.into();
        if fact == foil {
            return Err(Error::InvalidPair(format!(
                "fact and foil are both {fact:?}"
            )));
        }
        Ok(ContrastivePair { fact, foil })
    }

    pub fn swapped(&self) -> ContrastivePair {
        ContrastivePair {
            fact: self.foil.clone(),
            foil: self.fact.clone(),
        }
    }
}

/// The single latent direction separating fact from foil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveDirection {
    pub pair: ContrastivePair,
    pub u: Vector,
    pub norm_sq: f64,
}

/// `u = w_fact - w_foil`. Errors when the rows coincide: the head cannot
/// distinguish the two classes and no contrastive direction exists.
pub fn direction(head: &LinearHead, pair: &ContrastivePair) -> Result<ContrastiveDirection> {
    let w_fact = head.class_row(&pair.fact)?;
    let w_foil = head.class_row(&pair.foil)?;
    let u = w_fact.sub(&w_foil)?;
    let norm_sq = u.norm_sq();
    if norm_sq < DIRECTION_NORM_SQ_MIN {
        return Err(Error::DegenerateDirection(format!(
            "classes {} and {} have identical head rows",
            pair.fact, pair.foil
        )));
    }
    Ok(ContrastiveDirection {
        pair: pair.clone(),
        u,
        norm_sq,
    })
}

impl ContrastiveDirection {
    /// Orthogonal projection of `h` onto span(u); the contrastive transform.
    pub fn project(&self, h: &Vector) -> Result<Vector> {
        project_onto(h, &self.u)
    }
}

/// Pre/post-intervention probability vectors for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPair {
    pub example_id: String,
    pub pair: ContrastivePair,
    pub p: Vector,
    pub q: Vector,
    pub intervention_tag: String,
}

impl BehaviorPair {
    /// The contrastive measure: change in the fact's probability normalized
    /// over {fact, foil}, in [-1, 1].
    pub fn delta(&self, head: &LinearHead) -> Result<f64> {
        let fi = head.event_space.index_of(&self.pair.fact)?;
        let gi = head.event_space.index_of(&self.pair.foil)?;
        delta_from_probs(&self.p, &self.q, fi, gi)
    }

    /// Symmetrized KL between pre and post distributions, with underflow
    /// clamping on the intervention path.
    pub fn sym_kl(&self) -> Result<f64> {
        crate::numerics::sym_kl(&clamp_distribution(&self.p), &clamp_distribution(&self.q))
    }
}

/// `p_fact/(p_fact+p_foil) - q_fact/(q_fact+q_foil)`.
pub fn delta_from_probs(p: &Vector, q: &Vector, fact: usize, foil: usize) -> Result<f64> {
    let (pf, pg) = (p.as_slice()[fact], p.as_slice()[foil]);
    let (qf, qg) = (q.as_slice()[fact], q.as_slice()[foil]);
    if pf + pg <= 0.0 || qf + qg <= 0.0 {
        return Err(Error::DegenerateDistribution(
            "fact+foil probability mass is zero".into(),
        ));
    }
    Ok(pf / (pf + pg) - qf / (qf + qg))
}

/// Replace the representation with its contrastive projection and measure
/// the behavior change: `p = softmax(W h + b)`, `q = softmax(W C(h) + b)`.
pub fn contrastive_only_intervention(
    head: &LinearHead,
    h: &Vector,
    example_id: &str,
    pair: &ContrastivePair,
) -> Result<BehaviorPair> {
    let dir = direction(head, pair)?;
    let projected = dir.project(h)?;
    let p = predict(head, h)?.probs;
    let q = predict(head, &projected)?.probs;
    Ok(BehaviorPair {
        example_id: example_id.to_string(),
        pair: pair.clone(),
        p,
        q,
        intervention_tag: "contrastive-only".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EventSpace;
    use crate::numerics::{Matrix, RngKey};
    use rand::Rng;

    fn head_2x2() -> LinearHead {
        let space = EventSpace::new(vec!["c0".into(), "c1".into()]).unwrap();
        LinearHead::new(
            Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            None,
            space,
        )
        .unwrap()
    }

    fn random_head(key: u64, k: usize, d: usize, bias: bool) -> LinearHead {
        let mut rng = RngKey::new(key).rng();
        let space =
            EventSpace::new((0..k).map(|i| format!("c{i}")).collect()).unwrap();
        let w = Matrix::new(
            k,
            d,
            (0..k * d).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let b = bias.then(|| Vector((0..k).map(|_| rng.gen_range(-0.5..0.5)).collect()));
        LinearHead::new(w, b, space).unwrap()
    }

    fn random_vec(rng: &mut impl Rng, d: usize) -> Vector {
        Vector((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn direction_is_row_difference() {
        let head = head_2x2();
        let pair = ContrastivePair::new("c0", "c1").unwrap();
        let dir = direction(&head, &pair).unwrap();
        assert_eq!(dir.u.as_slice(), &[1.0, -1.0]);
        assert_eq!(dir.norm_sq, 2.0);
    }

    #[test]
    fn direction_degenerate_on_identical_rows() {
        let space = EventSpace::new(vec!["a".into(), "b".into()]).unwrap();
        let head = LinearHead::new(
            Matrix::new(2, 2, vec![0.3, -0.7, 0.3, -0.7]).unwrap(),
            None,
            space,
        )
        .unwrap();
        let pair = ContrastivePair::new("a", "b").unwrap();
        assert!(matches!(
            direction(&head, &pair),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn direction_antisymmetric() {
        let head = random_head(5, 4, 6, false);
        let pair = ContrastivePair::new("c1", "c3").unwrap();
        let fwd = direction(&head, &pair).unwrap();
        let bwd = direction(&head, &pair.swapped()).unwrap();
        for (a, b) in fwd.u.as_slice().iter().zip(bwd.u.as_slice()) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn pair_rejects_equal_classes() {
        assert!(ContrastivePair::new("x", "x").is_err());
    }

    #[test]
    fn projection_annihilates_orthogonal_fixes_parallel() {
        let head = head_2x2();
        let pair = ContrastivePair::new("c0", "c1").unwrap();
        let dir = direction(&head, &pair).unwrap();
        // u = (1,-1); (1,1) is orthogonal.
        let ortho = dir.project(&Vector(vec![1.0, 1.0])).unwrap();
        assert!(ortho.norm() < 1e-12);
        let fixed = dir.project(&dir.u).unwrap();
        assert!(fixed.max_abs_diff(&dir.u).unwrap() < 1e-12);
    }

    #[test]
    fn projection_preserves_logit_gap_randomized() {
        let mut rng = RngKey::new(17).rng();
        for trial in 0..200 {
            let head = random_head(trial, 5, 12, trial % 2 == 0);
            let pair = ContrastivePair::new("c0", "c3").unwrap();
            let dir = direction(&head, &pair).unwrap();
            let h = random_vec(&mut rng, 12);
            let c = dir.project(&h).unwrap();
            let gap = (dir.u.dot(&c).unwrap() - dir.u.dot(&h).unwrap()).abs();
            assert!(gap < 1e-10, "gap {gap} at trial {trial}");
        }
    }

    #[test]
    fn delta_zero_on_identical_distributions() {
        let p = Vector(vec![0.2, 0.5, 0.3]);
        assert_eq!(delta_from_probs(&p, &p, 0, 1).unwrap(), 0.0);
    }

    #[test]
    fn delta_worked_example() {
        let p = Vector(vec![0.8, 0.1, 0.1]);
        let q = Vector(vec![0.1, 0.8, 0.1]);
        let got = delta_from_probs(&p, &q, 0, 1).unwrap();
        assert!((got - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn delta_errors_on_zero_mass() {
        let p = Vector(vec![0.0, 0.0, 1.0]);
        let q = Vector(vec![0.5, 0.5, 0.0]);
        assert!(matches!(
            delta_from_probs(&p, &q, 0, 1),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn delta_antisymmetric_under_role_swap() {
        let mut rng = RngKey::new(23).rng();
        for _ in 0..100 {
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p = Vector(raw.iter().map(|v| v / s).collect());
            let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let q = Vector(raw.iter().map(|v| v / s).collect());
            let fwd = delta_from_probs(&p, &q, 1, 2).unwrap();
            let bwd = delta_from_probs(&p, &q, 2, 1).unwrap();
            assert!((fwd + bwd).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&fwd));
        }
    }

    #[test]
    fn contrastive_only_has_zero_delta_any_head() {
        for trial in 0..50u64 {
            let k = 3 + (trial % 3) as usize;
            let head = random_head(100 + trial, k, 8, trial % 2 == 1);
            let mut rng = RngKey::new(200 + trial).rng();
            let h = random_vec(&mut rng, 8);
            let pair = ContrastivePair::new("c0", "c1").unwrap();
            let bp = contrastive_only_intervention(&head, &h, "t", &pair).unwrap();
            let delta = bp.delta(&head).unwrap();
            assert!(delta.abs() < 1e-9, "delta {delta} at trial {trial}");
        }
    }

    #[test]
    fn contrastive_only_is_identity_for_two_classes() {
        // With K=2 both logits shift by the same constant under projection,
        // so q = p exactly; holds with bias too since bias is untouched.
        for trial in 0..50 {
            let head = random_head(300 + trial, 2, 6, trial % 2 == 0);
            let mut rng = RngKey::new(400 + trial).rng();
            let h = random_vec(&mut rng, 6);
            let pair = ContrastivePair::new("c0", "c1").unwrap();
            let bp = contrastive_only_intervention(&head, &h, "t", &pair).unwrap();
            assert!(bp.p.max_abs_diff(&bp.q).unwrap() < 1e-12);
            assert!(bp.sym_kl().unwrap() >= 0.0);
        }
    }

    #[test]
    fn orthogonal_additions_are_contrastively_irrelevant() {
        let mut rng = RngKey::new(31).rng();
        let head = random_head(7, 4, 10, false);
        let pair = ContrastivePair::new("c2", "c0").unwrap();
        let dir = direction(&head, &pair).unwrap();
        for _ in 0..50 {
            let h = random_vec(&mut rng, 10);
            // Build v orthogonal to u by removing its u-component.
            let raw = random_vec(&mut rng, 10);
            let v = raw.sub(&project_onto(&raw, &dir.u).unwrap()).unwrap();
            let shifted = h.add(&v).unwrap();
            let gap_h = dir.u.dot(&h).unwrap();
            let gap_shifted = dir.u.dot(&shifted).unwrap();
            assert!((gap_h - gap_shifted).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_one_projector_symmetric_idempotent_small_d() {
        for d in [2usize, 5, 16] {
            let mut rng = RngKey::new(d as u64).rng();
            let u = random_vec(&mut rng, d);
            let norm_sq = u.norm_sq();
            let mut p = Matrix::zeros(d, d);
            for r in 0..d {
                for c in 0..d {
                    p.set(r, c, u.as_slice()[r] * u.as_slice()[c] / norm_sq);
                }
            }
            // symmetry
            for r in 0..d {
                for c in 0..d {
                    assert!((p.get(r, c) - p.get(c, r)).abs() < 1e-12);
                }
            }
            // idempotence: ||P^2 - P||_inf < 1e-10
            let mut max_diff = 0.0f64;
            for r in 0..d {
                for c in 0..d {
                    let mut acc = 0.0;
                    for m in 0..d {
                        acc += p.get(r, m) * p.get(m, c);
                    }
                    max_diff = max_diff.max((acc - p.get(r, c)).abs());
                }
            }
            assert!(max_diff < 1e-10);
            // rank 1: every row is a multiple of u.
            for r in 0..d {
                let row = p.row_vector(r);
                let proj = project_onto(&row, &u).unwrap();
                assert!(row.max_abs_diff(&proj).unwrap() < 1e-12);
            }
        }
    }
}
