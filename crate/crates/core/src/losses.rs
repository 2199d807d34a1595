//! Training objectives over model outputs `h`, each returned with its exact
//! gradient with respect to `h`.

use serde::{Deserialize, Serialize};

use crate::data::RelatedGroup;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mlp::{GradientSet, MlpModel, ModelObjective};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the
/// cross-entropy terms only.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// d value / d h_i
    pub grad: Vec<f64>,
}

#[inline]
fn clamp_prob(h: f64) -> f64 {
    h.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Mean binary cross-entropy.
pub fn bce(probs: &[f64], labels: &[f64]) -> Result<LossValue> {
    check_lengths("bce", probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(Error::Empty("bce needs at least one element".into()));
    }
    let n = probs.len() as f64;
    let mut value = 0.0;
    let grad = probs
        .iter()
        .zip(labels)
        .map(|(&h, &y)| {
            let h = clamp_prob(h);
            value -= y * h.ln() + (1.0 - y) * (1.0 - h).ln();
            (h - y) / (h * (1.0 - h)) / n
        })
        .collect();
    Ok(LossValue {
        value: value / n,
        grad,
    })
}

/// `(1/n) sum_i w_i * BCE_i`.
pub fn weighted_bce(probs: &[f64], labels: &[f64], weights: &[f64]) -> Result<LossValue> {
    check_lengths("weighted_bce", probs.len(), labels.len())?;
    check_lengths("weighted_bce", probs.len(), weights.len())?;
    if probs.is_empty() {
        return Err(Error::Empty("weighted_bce needs at least one element".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "importance weights must be finite and nonnegative, got {w}"
        )));
    }
    let n = probs.len() as f64;
    let mut value = 0.0;
    let grad = probs
        .iter()
        .zip(labels)
        .zip(weights)
        .map(|((&h, &y), &w)| {
            let h = clamp_prob(h);
            value -= w * (y * h.ln() + (1.0 - y) * (1.0 - h).ln());
            w * (h - y) / (h * (1.0 - h)) / n
        })
        .collect();
    Ok(LossValue {
        value: value / n,
        grad,
    })
}

/// `(1/n) |sum_i (a_i - mean a)(h_i - mean h)|`.
///
/// Because the attribute deviations sum to zero, the centering of `h`
/// drops out of the gradient, leaving `sign(S) (a_j - mean a) / n`. The
/// subgradient at `S = 0` is 0.
pub fn fairness_corr(attribute_values: &[f64], probs: &[f64]) -> Result<LossValue> {
    check_lengths("fairness_corr", attribute_values.len(), probs.len())?;
    if probs.is_empty() {
        return Err(Error::Empty("fairness_corr needs at least one element".into()));
    }
    let n = probs.len() as f64;
    let mean_a = attribute_values.iter().sum::<f64>() / n;
    let mean_h = probs.iter().sum::<f64>() / n;
    let s: f64 = attribute_values
        .iter()
        .zip(probs)
        .map(|(a, h)| (a - mean_a) * (h - mean_h))
        .sum();
    let sign = if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok(LossValue {
        value: s.abs() / n,
        grad: attribute_values
            .iter()
            .map(|a| sign * (a - mean_a) / n)
            .collect(),
    })
}

/// How per-column weights are assigned when none are given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScheme {
    /// Every encoded related column gets `1/K`.
    #[default]
    PerColumn,
    /// Every related source feature gets `1/F`, split evenly over its columns.
    PerFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub related_columns: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub eta: f64,
}

impl FairnessSpec {
    pub fn new(related_columns: Vec<usize>, lambdas: Vec<f64>, eta: f64) -> Result<Self> {
        let spec = FairnessSpec {
            related_columns,
            lambdas,
            eta,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform `1/K` weights over the given columns.
    pub fn uniform(related_columns: Vec<usize>, eta: f64) -> Result<Self> {
        let k = related_columns.len();
        let lambdas = vec![if k == 0 { 0.0 } else { 1.0 / k as f64 }; k];
        Self::new(related_columns, lambdas, eta)
    }

    pub fn from_groups(groups: &[RelatedGroup], scheme: LambdaScheme, eta: f64) -> Result<Self> {
        match scheme {
            LambdaScheme::PerColumn => Self::uniform(
                groups.iter().flat_map(|g| g.columns.iter().copied()).collect(),
                eta,
            ),
            LambdaScheme::PerFeature => {
                let live: Vec<&RelatedGroup> =
                    groups.iter().filter(|g| !g.columns.is_empty()).collect();
                let per_feature = 1.0 / live.len().max(1) as f64;
                let mut columns = Vec::new();
                let mut lambdas = Vec::new();
                for g in live {
                    let share = per_feature / g.columns.len() as f64;
                    columns.extend(&g.columns);
                    lambdas.extend(std::iter::repeat_n(share, g.columns.len()));
                }
                Self::new(columns, lambdas, eta)
            }
        }
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(self.related_columns.clone(), self.lambdas.clone(), eta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.len() != self.related_columns.len() {
            return Err(Error::InvalidArgument(format!(
                "{} lambdas for {} related columns",
                self.lambdas.len(),
                self.related_columns.len()
            )));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lambdas must be finite and >= 0".into()));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!("eta must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }
}

/// `sum_k lambda_k * fairness_corr(X[:, c_k], h)`.
pub fn fairness_related(spec: &FairnessSpec, features: &Matrix, probs: &[f64]) -> Result<LossValue> {
    check_lengths("fairness_related", features.rows(), probs.len())?;
    if let Some(c) = spec.related_columns.iter().find(|&&c| c >= features.cols()) {
        return Err(Error::InvalidArgument(format!(
            "related column {c} out of range for {} features",
            features.cols()
        )));
    }
    let mut total = LossValue {
        value: 0.0,
        grad: vec![0.0; probs.len()],
    };
    for (&c, &lambda) in spec.related_columns.iter().zip(&spec.lambdas) {
        let part = fairness_corr(&features.column(c), probs)?;
        total.value += lambda * part.value;
        for (g, p) in total.grad.iter_mut().zip(&part.grad) {
            *g += lambda * p;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridValue {
    pub value: f64,
    pub source_grad: Vec<f64>,
    pub target_grad: Vec<f64>,
}

/// Importance-weighted source cross-entropy plus `eta` times the
/// related-feature penalty on target outputs.
pub fn hybrid_loss(
    source_probs: &[f64],
    source_labels: &[f64],
    weights: &[f64],
    target_probs: &[f64],
    target_features: &Matrix,
    spec: &FairnessSpec,
) -> Result<HybridValue> {
    spec.validate()?;
    let clf = weighted_bce(source_probs, source_labels, weights)?;
    let fair = fairness_related(spec, target_features, target_probs)?;
    Ok(HybridValue {
        value: clf.value + spec.eta * fair.value,
        source_grad: clf.grad,
        target_grad: fair.grad.iter().map(|g| spec.eta * g).collect(),
    })
}

/// Applies an output-space loss to the model's predictions on one batch.
pub struct OutputObjective<'a, F> {
    pub batch: &'a Matrix,
    pub loss: F,
}

impl<F> ModelObjective for OutputObjective<'_, F>
where
    F: Fn(&[f64]) -> Result<LossValue>,
{
    fn value(&self, model: &MlpModel) -> Result<f64> {
        Ok((self.loss)(&model.forward(self.batch)?)?.value)
    }

    fn gradient(&self, model: &MlpModel) -> Result<GradientSet> {
        let probs = model.forward(self.batch)?;
        let loss = (self.loss)(&probs)?;
        model.backward(self.batch, &loss.grad)
    }
}

/// The full training objective for one step: weighted classification on a
/// source batch and, when a target batch is present, the fairness penalty on it.
pub struct HybridObjective<'a> {
    pub source: &'a Matrix,
    pub labels: &'a [f64],
    pub weights: &'a [f64],
    pub target: Option<&'a Matrix>,
    pub spec: &'a FairnessSpec,
}

impl HybridObjective<'_> {
    /// Objective value and parameter gradient.
    pub fn evaluate(&self, model: &MlpModel) -> Result<(f64, GradientSet)> {
        let mut clf = None;
        let (_, mut grads) = model.forward_backward(self.source, |probs| {
            let loss = weighted_bce(probs, self.labels, self.weights)?;
            clf = Some(loss.value);
            Ok(loss.grad)
        })?;
        let mut value = clf.unwrap_or_default();
        if let Some(target) = self.target {
            let mut fair = None;
            let (_, fair_grads) = model.forward_backward(target, |probs| {
                let loss = fairness_related(self.spec, target, probs)?;
                fair = Some(loss.value);
                Ok(loss.grad)
            })?;
            value += self.spec.eta * fair.unwrap_or_default();
            grads.add_scaled(&fair_grads, self.spec.eta)?;
        }
        Ok((value, grads))
    }
}

impl ModelObjective for HybridObjective<'_> {
    fn value(&self, model: &MlpModel) -> Result<f64> {
        let clf = weighted_bce(&model.forward(self.source)?, self.labels, self.weights)?.value;
        let fair = match self.target {
            Some(t) => fairness_related(self.spec, t, &model.forward(t)?)?.value,
            None => 0.0,
        };
        Ok(clf + self.spec.eta * fair)
    }

    fn gradient(&self, model: &MlpModel) -> Result<GradientSet> {
        Ok(self.evaluate(model)?.1)
    }
}
