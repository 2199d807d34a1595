//! Importance weights `p_T(x) / p_S(x)` for source rows, estimated with a
//! logistic source-vs-target discriminator.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_CLIP_CEILING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            epochs: 500,
            learning_rate: 0.1,
        }
    }
}

/// Logistic regression predicting P(target | x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDiscriminator {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Mean logistic loss at the start of each epoch.
    pub training_trace: Vec<f64>,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl DomainDiscriminator {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        DomainDiscriminator {
            weights,
            bias,
            training_trace: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_proba(&self, features: &Matrix) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        Ok(features.iter_rows().map(|x| sigmoid(self.logit(x))).collect())
    }

    fn check_dim(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.dim() {
            return Err(Error::Dimension(format!(
                "discriminator fit on {} features, got {}",
                self.dim(),
                features.cols()
            )));
        }
        Ok(())
    }
}

/// Fits the discriminator (target = 1, source = 0) by full-batch gradient
/// descent on the mean logistic loss, starting from zero parameters.
pub fn fit_discriminator(
    source_features: &Matrix,
    target_features: &Matrix,
    config: &DiscriminatorConfig,
) -> Result<DomainDiscriminator> {
    if source_features.cols() != target_features.cols() {
        return Err(Error::Dimension(format!(
            "source has {} features, target has {}",
            source_features.cols(),
            target_features.cols()
        )));
    }
    if source_features.rows() == 0 || target_features.rows() == 0 {
        return Err(Error::Empty("both domains need at least one row".into()));
    }
    if config.learning_rate <= 0.0 {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }

    let d = source_features.cols();
    let n = (source_features.rows() + target_features.rows()) as f64;
    let mut model = DomainDiscriminator::new(vec![0.0; d], 0.0);
    let mut grad_w = vec![0.0; d];

    for _ in 0..config.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (features, target) in [(source_features, 0.0), (target_features, 1.0)] {
            for x in features.iter_rows() {
                let z = model.logit(x);
                loss += softplus(z) - target * z;
                let err = sigmoid(z) - target;
                grad_b += err;
                for (g, xi) in grad_w.iter_mut().zip(x) {
                    *g += err * xi;
                }
            }
        }
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("discriminator loss".into()));
        }
        model.training_trace.push(loss);
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= config.learning_rate * g / n;
        }
        model.bias -= config.learning_rate * grad_b / n;
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    pub values: Vec<f64>,
    pub clip_ceiling: f64,
    pub normalized: bool,
}

impl ImportanceWeights {
    /// All-ones weights (no shift adaptation).
    pub fn unit(n: usize) -> Self {
        ImportanceWeights {
            values: vec![1.0; n],
            clip_ceiling: f64::INFINITY,
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Rescales to mean 1.
    pub fn normalize(mut self) -> Result<Self> {
        let mean = self.mean();
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::NonFinite(format!(
                "cannot normalize weights with mean {mean}"
            )));
        }
        self.values.iter_mut().for_each(|w| *w /= mean);
        self.normalized = true;
        Ok(self)
    }

    /// Writes `row_index,weight` lines.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "row_index,weight")?;
            for (i, w) in self.values.iter().enumerate() {
                writeln!(out, "{i},{w}")?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

/// Odds-based density ratios with prior correction, clipped to
/// `clip_ceiling`, before any normalization.
pub fn clipped_ratios(
    model: &DomainDiscriminator,
    source_features: &Matrix,
    n_source: usize,
    n_target: usize,
    clip_ceiling: f64,
) -> Result<ImportanceWeights> {
    if !(clip_ceiling > 0.0) {
        return Err(Error::InvalidArgument("clip ceiling must be positive".into()));
    }
    if n_source == 0 || n_target == 0 {
        return Err(Error::Empty("domain sizes must be positive".into()));
    }
    model.check_dim(source_features)?;
    let prior = n_source as f64 / n_target as f64;
    let values = source_features
        .iter_rows()
        .map(|x| {
            let z = model.logit(x);
            if !z.is_finite() {
                return Err(Error::NonFinite("discriminator output".into()));
            }
            // odds sigma/(1 - sigma) = e^z; overflow saturates at the ceiling
            Ok((z.exp() * prior).min(clip_ceiling))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ImportanceWeights {
        values,
        clip_ceiling,
        normalized: false,
    })
}

/// Clipped, mean-normalized importance weights for every source row.
pub fn estimate_weights(
    model: &DomainDiscriminator,
    source_features: &Matrix,
    n_source: usize,
    n_target: usize,
    clip_ceiling: f64,
) -> Result<ImportanceWeights> {
    clipped_ratios(model, source_features, n_source, n_target, clip_ceiling)?.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian(n: usize, mean: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(mean, 1.0).unwrap();
        Matrix::column_vector(&(0..n).map(|_| dist.sample(&mut rng)).collect::<Vec<_>>())
    }

    #[test]
    fn identical_domains_predict_half() {
        let source = gaussian(2000, 0.0, 1);
        let target = gaussian(2000, 0.0, 2);
        let model = fit_discriminator(&source, &target, &DiscriminatorConfig::default()).unwrap();
        let held_out = gaussian(1000, 0.0, 3);
        for p in model.predict_proba(&held_out).unwrap() {
            assert!((p - 0.5).abs() < 0.05, "p = {p}");
        }
    }

    #[test]
    fn point_masses_separate() {
        let source = Matrix::column_vector(&[-2.0; 50]);
        let target = Matrix::column_vector(&[2.0; 50]);
        let model = fit_discriminator(&source, &target, &DiscriminatorConfig::default()).unwrap();
        assert!(model.weights[0] > 0.0);
        let p = model.predict_proba(&Matrix::column_vector(&[2.0])).unwrap()[0];
        assert!(p > 0.99, "p = {p}");
    }

    #[test]
    fn gaussian_boundary_at_midpoint() {
        let source = gaussian(5000, 0.0, 11);
        let target = gaussian(5000, 1.0, 12);
        let model = fit_discriminator(&source, &target, &DiscriminatorConfig::default()).unwrap();
        let boundary = -model.bias / model.weights[0];
        assert!((boundary - 0.5).abs() < 0.1, "boundary {boundary}");
    }

    #[test]
    fn training_trace_decreases() {
        let source = gaussian(500, 0.0, 5);
        let target = gaussian(500, 1.5, 6);
        let model = fit_discriminator(&source, &target, &DiscriminatorConfig::default()).unwrap();
        assert_eq!(model.training_trace.len(), 500);
        for w in model.training_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn fit_errors() {
        let a = Matrix::zeros(3, 2);
        let b = Matrix::zeros(3, 1);
        let cfg = DiscriminatorConfig::default();
        assert!(matches!(fit_discriminator(&a, &b, &cfg), Err(Error::Dimension(_))));
        assert!(matches!(
            fit_discriminator(&a, &Matrix::zeros(0, 2), &cfg),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn ratio_examples() {
        let x = Matrix::column_vector(&[0.3, -1.0, 2.0]);
        let half = DomainDiscriminator::new(vec![0.0], 0.0);
        let w = estimate_weights(&half, &x, 3, 3, 10.0).unwrap();
        assert!(w.values.iter().all(|&v| v == 1.0));

        let three = DomainDiscriminator::new(vec![0.0], 3f64.ln());
        let raw = clipped_ratios(&three, &x, 5, 5, 10.0).unwrap();
        for v in raw.values {
            assert!((v - 3.0).abs() < 1e-12);
        }

        let sure = DomainDiscriminator::new(vec![0.0], (0.999f64 / 0.001).ln());
        let raw = clipped_ratios(&sure, &x, 5, 5, 10.0).unwrap();
        assert!(raw.values.iter().all(|&v| v == 10.0));

        let saturated = DomainDiscriminator::new(vec![0.0], 1e6);
        let raw = clipped_ratios(&saturated, &x, 5, 5, 10.0).unwrap();
        assert!(raw.values.iter().all(|&v| v == 10.0));
    }

    #[test]
    fn prior_correction() {
        let x = Matrix::column_vector(&[0.0]);
        let half = DomainDiscriminator::new(vec![0.0], 0.0);
        let raw = clipped_ratios(&half, &x, 200, 100, 10.0).unwrap();
        assert_eq!(raw.values, vec![2.0]);
    }

    #[test]
    fn estimate_errors() {
        let x = Matrix::column_vector(&[0.0]);
        let m = DomainDiscriminator::new(vec![0.0], 0.0);
        assert!(clipped_ratios(&m, &x, 1, 1, 0.0).is_err());
        let nan = DomainDiscriminator::new(vec![f64::NAN], 0.0);
        assert!(matches!(
            clipped_ratios(&nan, &x, 1, 1, 10.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            clipped_ratios(&m, &Matrix::zeros(1, 2), 1, 1, 10.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn weighted_mean_recovers_target_mean() {
        let source = gaussian(10_000, 0.0, 21);
        let target = gaussian(10_000, 0.5, 22);
        let model = fit_discriminator(&source, &target, &DiscriminatorConfig::default()).unwrap();
        let w = estimate_weights(&model, &source, 10_000, 10_000, DEFAULT_CLIP_CEILING).unwrap();
        let xs = source.column(0);
        let weighted = xs.iter().zip(&w.values).map(|(x, w)| x * w).sum::<f64>()
            / w.values.iter().sum::<f64>();
        let plain = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((weighted - 0.5).abs() < 0.1, "weighted mean {weighted}");
        assert!(plain.abs() < 0.05);
    }

    proptest! {
        #[test]
        fn clipping_and_normalization_properties(
            xs in prop::collection::vec(-5.0f64..5.0, 1..40),
            w in -3.0f64..3.0,
            b in -3.0f64..3.0,
            clip in 0.5f64..20.0,
        ) {
            let m = DomainDiscriminator::new(vec![w], b);
            let x = Matrix::column_vector(&xs);
            let unclipped = clipped_ratios(&m, &x, 1, 1, f64::INFINITY).unwrap();
            let clipped = clipped_ratios(&m, &x, 1, 1, clip).unwrap();
            for (u, c) in unclipped.values.iter().zip(&clipped.values) {
                prop_assert!(c <= u);
                prop_assert!(*c >= 0.0 && *c <= clip);
            }
            let normalized = clipped.clone().normalize().unwrap();
            prop_assert!((normalized.mean() - 1.0).abs() < 1e-9);
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    if clipped.values[i] < clipped.values[j] {
                        prop_assert!(normalized.values[i] <= normalized.values[j]);
                    }
                }
            }
        }
    }
}
