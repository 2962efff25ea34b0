//! Full-batch multinomial logistic regression.
//!
//! One optimizer serves both the desk-scale classifier head (zero-init, no
//! bias) and the amnesic probes (seeded small init, with bias). The
//! objective is exposed so tests can check the analytic gradient against
//! central finite differences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BowEncoder, EventSpace, Example, LinearHead};
use crate::numerics::{softmax, Matrix, RngKey, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 4.0,
            epochs: 400,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Mean cross-entropy objective with L2 penalty on the weights (bias, when
/// present, is unpenalized). Parameters are a K x d weight matrix plus an
/// optional length-K bias.
pub struct LogisticObjective {
    pub features: Vec<Vector>,
    pub targets: Vec<usize>,
    pub classes: usize,
    pub l2: f64,
    pub with_bias: bool,
}

impl LogisticObjective {
    pub fn new(
        features: Vec<Vector>,
        targets: Vec<usize>,
        classes: usize,
        l2: f64,
        with_bias: bool,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidDataset("empty training set".into()));
        }
        if features.len() != targets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature vectors vs {} targets",
                features.len(),
                targets.len()
            )));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::ShapeMismatch("ragged feature vectors".into()));
        }
        if let Some(t) = targets.iter().find(|t| **t >= classes) {
            return Err(Error::InvalidDataset(format!(
                "target class {t} out of range for {classes} classes"
            )));
        }
        Ok(LogisticObjective {
            features,
            targets,
            classes,
            l2,
            with_bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn logits(&self, w: &Matrix, b: Option<&Vector>, x: &Vector) -> Result<Vector> {
        let mut l = w.matvec(x)?;
        if let Some(b) = b {
            l = l.add(b)?;
        }
        Ok(l)
    }

    pub fn loss(&self, w: &Matrix, b: Option<&Vector>) -> Result<f64> {
        let n = self.features.len() as f64;
        let mut total = 0.0;
        for (x, y) in self.features.iter().zip(&self.targets) {
            let probs = softmax(&self.logits(w, b, x)?)?;
            total -= probs.as_slice()[*y].max(f64::MIN_POSITIVE).ln();
        }
        let mut loss = total / n;
        loss += 0.5 * self.l2 * w.as_slice().iter().map(|v| v * v).sum::<f64>();
        Ok(loss)
    }

    /// Analytic gradient: `dW = mean((p - onehot) x^T) + l2 W`, `db = mean(p - onehot)`.
    pub fn gradient(&self, w: &Matrix, b: Option<&Vector>) -> Result<(Matrix, Option<Vector>)> {
        let (k, d) = (w.rows(), w.cols());
        let n = self.features.len() as f64;
        let mut gw = Matrix::zeros(k, d);
        let mut gb = vec![0.0; k];
        for (x, y) in self.features.iter().zip(&self.targets) {
            let probs = softmax(&self.logits(w, b, x)?)?;
            for c in 0..k {
                let err = probs.as_slice()[c] - if c == *y { 1.0 } else { 0.0 };
                gb[c] += err / n;
                let row_base = c * d;
                let gw_data = gw.as_mut_slice();
                for (j, xv) in x.as_slice().iter().enumerate() {
                    gw_data[row_base + j] += err * xv / n;
                }
            }
        }
        let gw_data = gw.as_mut_slice();
        for (g, wv) in gw_data.iter_mut().zip(w.as_slice()) {
            *g += self.l2 * wv;
        }
        let gb = if self.with_bias {
            Some(Vector(gb))
        } else {
            None
        };
        Ok((gw, gb))
    }
}

/// Fitted parameters plus the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: Matrix,
    pub bias: Option<Vector>,
    pub loss_history: Vec<f64>,
}

/// Gradient-descent fit. `init_scale = 0` starts from zeros (used by the
/// desk head so zero epochs means uniform predictions); probes pass a small
/// seeded scale to break symmetry.
pub fn fit_multinomial(
    objective: &LogisticObjective,
    config: &TrainConfig,
    init_scale: f64,
) -> Result<FitResult> {
    let (k, d) = (objective.classes, objective.dim());
    let mut weights = if init_scale == 0.0 {
        Matrix::zeros(k, d)
    } else {
        let mut rng = RngKey::new(config.seed).rng();
        let data = (0..k * d)
            .map(|_| rng.gen_range(-init_scale..init_scale))
            .collect();
        Matrix::new(k, d, data)?
    };
    let mut bias = objective.with_bias.then(|| Vector::zeros(k));
    let mut loss_history = Vec::with_capacity(config.epochs + 1);
    loss_history.push(objective.loss(&weights, bias.as_ref())?);
    for _ in 0..config.epochs {
        let (gw, gb) = objective.gradient(&weights, bias.as_ref())?;
        let w_data = weights.as_mut_slice();
        for (w, g) in w_data.iter_mut().zip(gw.as_slice()) {
            *w -= config.lr * g;
        }
        if let (Some(b), Some(gb)) = (bias.as_mut(), gb) {
            b.axpy_neg(config.lr, &gb)?;
        }
        loss_history.push(objective.loss(&weights, bias.as_ref())?);
    }
    Ok(FitResult {
        weights,
        bias,
        loss_history,
    })
}

/// Train the desk-scale classifier: encode every example with the given
/// encoder and fit a bias-free multinomial head over the dataset's classes.
pub fn train_logistic(
    dataset: &[Example],
    encoder: &BowEncoder,
    config: &TrainConfig,
) -> Result<LinearHead> {
    train_logistic_traced(dataset, encoder, config).map(|(head, _)| head)
}

/// Same as [`train_logistic`] but also returns the loss trace.
pub fn train_logistic_traced(
    dataset: &[Example],
    encoder: &BowEncoder,
    config: &TrainConfig,
) -> Result<(LinearHead, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("empty training set".into()));
    }
    let space = EventSpace::from_labels(dataset.iter().map(|e| e.label.as_str()))?;
    let features: Vec<Vector> = dataset
        .iter()
        .map(|e| encoder.encode(e, &[]).map(|r| r.h))
        .collect::<Result<_>>()?;
    let targets: Vec<usize> = dataset
        .iter()
        .map(|e| space.index_of(&e.label))
        .collect::<Result<_>>()?;
    let objective = LogisticObjective::new(features, targets, space.len(), config.l2, false)?;
    let fit = fit_multinomial(&objective, config, 0.0)?;
    let head = LinearHead::new(fit.weights, None, space)?;
    Ok((head, fit.loss_history))
}

/// Fraction of examples whose predicted class matches the gold label.
pub fn accuracy(head: &LinearHead, encoder: &BowEncoder, dataset: &[Example]) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in dataset {
        let repr = encoder.encode(ex, &[])?;
        let pred = crate::model::predict(head, &repr.h)?;
        if pred.fact(&head.event_space) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
