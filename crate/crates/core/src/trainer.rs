//! Minibatch training with Adam, early stopping on validation loss, and the
//! multi-seed repetition protocol.

use std::borrow::Cow;
use std::collections::HashSet;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DomainSplit;
use crate::density::ImportanceWeights;
use crate::error::{Error, Result};
use crate::losses::{bce, fairness_related, FairnessSpec, HybridObjective};
use crate::metrics::{evaluate, SeedMetrics, DEFAULT_THRESHOLD};
use crate::mlp::MlpModel;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

// independent random streams derived from one run seed
const STREAM_SHUFFLE: u64 = 1;
const STREAM_TARGET: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One bias-corrected Adam update, in place. Fails without touching
/// anything if a gradient is non-finite.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} state",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

/// The five experimental approaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Vanilla,
    RelatedRemoved,
    ShiftAdapted,
    FairRelated,
    Hybrid,
}

impl Approach {
    pub const ALL: [Approach; 5] = [
        Approach::Vanilla,
        Approach::RelatedRemoved,
        Approach::ShiftAdapted,
        Approach::FairRelated,
        Approach::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Vanilla => "vanilla",
            Approach::RelatedRemoved => "related_removed",
            Approach::ShiftAdapted => "shift_adapted",
            Approach::FairRelated => "fair_related",
            Approach::Hybrid => "hybrid",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Approach::Vanilla => "Vanilla",
            Approach::RelatedRemoved => "Related Features Removed",
            Approach::ShiftAdapted => "Covariate Shift Adapted",
            Approach::FairRelated => "Fair using Related Features",
            Approach::Hybrid => "Hybrid",
        }
    }

    pub fn uses_fairness(self) -> bool {
        matches!(self, Approach::FairRelated | Approach::Hybrid)
    }

    pub fn uses_importance_weights(self) -> bool {
        matches!(self, Approach::ShiftAdapted | Approach::Hybrid)
    }

    /// Sets the approach flags on `base`; eta is forced to 0 when the
    /// approach has no fairness term.
    pub fn configure(self, base: &TrainConfig, eta: f64) -> TrainConfig {
        TrainConfig {
            use_importance_weights: self.uses_importance_weights(),
            use_fairness: self.uses_fairness(),
            drop_related: self == Approach::RelatedRemoved,
            eta: if self.uses_fairness() { eta } else { 0.0 },
            ..base.clone()
        }
    }
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown approach `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub eta: f64,
    pub use_importance_weights: bool,
    pub use_fairness: bool,
    pub drop_related: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 256,
            max_epochs: 200,
            patience: 5,
            seed: 0,
            eta: 0.0,
            use_importance_weights: false,
            use_fairness: false,
            drop_related: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 || self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::InvalidArgument(
                "patience, batch_size and max_epochs must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument("eta must be finite and >= 0".into()));
        }
        if self.drop_related && self.use_fairness {
            return Err(Error::InvalidArgument(
                "the fairness term needs the related features that drop_related removes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss; stops after `patience` consecutive
/// epochs without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

fn split_view<'a>(config: &TrainConfig, split: &'a DomainSplit) -> Cow<'a, DomainSplit> {
    if config.drop_related {
        Cow::Owned(split.drop_related())
    } else {
        Cow::Borrowed(split)
    }
}

/// Cross-entropy on validation plus the eta-scaled fairness penalty when the
/// fairness term is active.
fn validation_loss(
    model: &MlpModel,
    split: &DomainSplit,
    fairness: Option<&FairnessSpec>,
) -> Result<f64> {
    let val = &split.target_validation;
    let probs = model.forward(&val.features)?;
    let mut loss = bce(&probs, &val.labels_f64())?.value;
    if let Some(spec) = fairness {
        loss += spec.eta * fairness_related(spec, &val.features, &probs)?.value;
    }
    Ok(loss)
}

pub fn train(
    config: &TrainConfig,
    split: &DomainSplit,
    weights: &ImportanceWeights,
    spec: &FairnessSpec,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    let split = split_view(config, split);
    let source = &split.source_train;
    let target = &split.target_validation;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("source_train and target_validation must be nonempty".into()));
    }

    let unit;
    let weights = if config.use_importance_weights {
        if weights.len() != source.len() {
            return Err(Error::Dimension(format!(
                "{} importance weights for {} source rows",
                weights.len(),
                source.len()
            )));
        }
        weights
    } else {
        unit = ImportanceWeights::unit(source.len());
        &unit
    };
    let fairness = if config.use_fairness {
        let spec = spec.with_eta(config.eta)?;
        if spec.related_columns.iter().any(|&c| c >= source.dim()) {
            return Err(Error::InvalidArgument("related column out of range".into()));
        }
        Some(spec)
    } else {
        None
    };
    let no_fairness = FairnessSpec::uniform(Vec::new(), 0.0)?;
    let step_spec = fairness.as_ref().unwrap_or(&no_fairness);

    let mut model = MlpModel::init(source.dim(), config.seed)?;
    let mut adam = AdamState::new(model.parameters().len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(STREAM_SHUFFLE);
    let mut target_rng = ChaCha8Rng::seed_from_u64(config.seed);
    target_rng.set_stream(STREAM_TARGET);

    let labels = source.labels_f64();
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut records = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = source.features.select_rows(chunk);
            let batch_labels: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let batch_weights: Vec<f64> = chunk.iter().map(|&i| weights.values[i]).collect();
            let target_batch = fairness.as_ref().map(|_| {
                let picks: Vec<usize> = (0..chunk.len())
                    .map(|_| target_rng.gen_range(0..target.len()))
                    .collect();
                target.features.select_rows(&picks)
            });
            let objective = HybridObjective {
                source: &batch,
                labels: &batch_labels,
                weights: &batch_weights,
                target: target_batch.as_ref(),
                spec: step_spec,
            };
            let (value, grads) = objective.evaluate(&model)?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            adam_step(model.parameters_mut(), grads.values(), &mut adam, config.learning_rate)?;
            if !model.is_finite() {
                return Err(Error::NonFinite(format!("model parameters at epoch {epoch}")));
            }
            epoch_loss += value * chunk.len() as f64;
        }
        let train_loss = epoch_loss / source.len() as f64;
        let val_loss = validation_loss(&model, &split, fairness.as_ref())?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let history = TrainHistory {
        stopped_epoch: records.len(),
        best_epoch: stopper.best_epoch(),
        epochs: records,
    };
    Ok((best, history))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: MlpModel,
    pub history: TrainHistory,
    pub metrics: SeedMetrics,
}

/// Test-set AUC and DP of `model` on the split as seen under `config`.
pub fn evaluate_on_test(
    model: &MlpModel,
    config: &TrainConfig,
    split: &DomainSplit,
    threshold: f64,
) -> Result<SeedMetrics> {
    let split = split_view(config, split);
    let test = &split.target_test;
    let probs = model.forward(&test.features)?;
    let (auc, delta_dp) = evaluate(&probs, &test.labels, &test.protected, threshold)?;
    Ok(SeedMetrics {
        seed: config.seed,
        auc,
        delta_dp,
    })
}

/// Independent runs that differ only in seed, each evaluated on target_test.
pub fn run_repeats(
    template: &TrainConfig,
    split: &DomainSplit,
    weights: &ImportanceWeights,
    spec: &FairnessSpec,
    seeds: &[u64],
) -> Result<Vec<RunOutcome>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let distinct: HashSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!("duplicate seeds in {seeds:?}")));
    }
    let view = split_view(template, split);
    seeds
        .iter()
        .map(|&seed| {
            let config = TrainConfig {
                seed,
                drop_related: false,
                ..template.clone()
            };
            let (model, history) = train(&config, &view, weights, spec)?;
            let metrics = evaluate_on_test(&model, &config, &view, DEFAULT_THRESHOLD)?;
            Ok(RunOutcome {
                model,
                history,
                metrics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.01).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[4.0], &mut s, 0.01).unwrap();
        let expected = 0.01 * 4.0 / (16f64.sqrt() + 1e-8);
        assert!((p[0] + expected).abs() < 1e-15);
        assert!((p[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_deterministic_and_rejects_nan() {
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut s = AdamState::new(2);
            for g in [[0.5, -1.0], [0.25, 2.0], [-0.1, 0.0]] {
                adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s, 0.01),
            Err(Error::NonFinite(_))
        ));
        assert_eq!((p[0], s.steps()), (0.0, 0));
    }

    fn simulate(losses: &[f64], patience: usize) -> (usize, usize) {
        let mut es = EarlyStopping::new(patience);
        let mut stopped = 0;
        for (i, &l) in losses.iter().enumerate() {
            stopped = i + 1;
            if es.observe(i + 1, l) == StopDecision::Stop {
                break;
            }
        }
        (stopped, es.best_epoch())
    }

    #[test]
    fn early_stopping_trace() {
        assert_eq!(
            simulate(&[1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99], 5),
            (7, 2)
        );
        let decreasing: Vec<f64> = (0..20).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(simulate(&decreasing, 5), (20, 20));
    }

    #[test]
    fn approach_presets() {
        let base = TrainConfig::default();
        let v = Approach::Vanilla.configure(&base, 3.0);
        assert!(!v.use_fairness && !v.use_importance_weights && !v.drop_related);
        assert_eq!(v.eta, 0.0);
        assert!(Approach::RelatedRemoved.configure(&base, 1.0).drop_related);
        let h = Approach::Hybrid.configure(&base, 1.0);
        assert!(h.use_fairness && h.use_importance_weights && h.eta == 1.0);
        assert_eq!("fair_related".parse::<Approach>().unwrap(), Approach::FairRelated);
        assert!("nope".parse::<Approach>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { eta: -1.0, ..Default::default() },
            TrainConfig { drop_related: true, use_fairness: true, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
