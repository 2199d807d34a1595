//! Seeded model/batch configurations shared by the gradient checks.

#![allow(dead_code)]

use fairshift::losses::{
    bce, fairness_corr, fairness_related, weighted_bce, FairnessSpec, HybridObjective,
    OutputObjective,
};
use fairshift::mlp::{finite_difference_audit, MlpModel, ModelObjective};
use fairshift::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub model: MlpModel,
    pub source: Matrix,
    pub target: Matrix,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
    pub attribute: Vec<f64>,
    pub spec: FairnessSpec,
}

pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let d = rng.gen_range(3..=8);
    let n = rng.gen_range(8..=24);
    let matrix = |rng: &mut ChaCha8Rng| {
        let data = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    };
    let source = matrix(&mut rng);
    let target = matrix(&mut rng);
    let labels = (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
    let weights = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
    let attribute = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let related = vec![0, d - 1];
    let eta = rng.gen_range(0.1..5.0);
    Case {
        model: MlpModel::init(d, seed).unwrap(),
        source,
        target,
        labels,
        weights,
        attribute,
        spec: FairnessSpec::uniform(related, eta).unwrap(),
    }
}

/// Calls `f` with each of the five audited objectives for `c`.
pub fn for_each_objective(c: &Case, mut f: impl FnMut(&'static str, &dyn ModelObjective)) {
    let plain = OutputObjective {
        batch: &c.source,
        loss: |p: &[f64]| bce(p, &c.labels),
    };
    let weighted = OutputObjective {
        batch: &c.source,
        loss: |p: &[f64]| weighted_bce(p, &c.labels, &c.weights),
    };
    let corr = OutputObjective {
        batch: &c.target,
        loss: |p: &[f64]| fairness_corr(&c.attribute, p),
    };
    let related = OutputObjective {
        batch: &c.target,
        loss: |p: &[f64]| fairness_related(&c.spec, &c.target, p),
    };
    let hybrid = HybridObjective {
        source: &c.source,
        labels: &c.labels,
        weights: &c.weights,
        target: Some(&c.target),
        spec: &c.spec,
    };
    f("bce", &plain);
    f("weighted_bce", &weighted);
    f("fairness_corr", &corr);
    f("fairness_related", &related);
    f("hybrid", &hybrid);
}

/// `finite_difference_audit` of every objective.
pub fn audits(c: &Case, step: f64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    for_each_objective(c, |name, obj| {
        out.push((name, finite_difference_audit(&c.model, obj, step).unwrap()));
    });
    out
}

/// Signs of every hidden pre-activation over a batch.
fn relu_pattern(model: &MlpModel, batch: &Matrix) -> Vec<bool> {
    let mut pattern = Vec::new();
    for r in 0..batch.rows() {
        let mut act = batch.row(r).to_vec();
        for l in 0..model.num_layers() - 1 {
            let (w, b) = model.layer(l);
            let z: Vec<f64> = (0..b.len())
                .map(|o| b[o] + (0..act.len()).map(|k| w[o * act.len() + k] * act[k]).sum::<f64>())
                .collect();
            pattern.extend(z.iter().map(|&v| v > 0.0));
            act = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    pattern
}

/// True if some single-coordinate perturbation by `step` flips a ReLU, in
/// which case central differences straddle a kink.
pub fn crosses_kink(c: &Case, step: f64) -> bool {
    let base = [relu_pattern(&c.model, &c.source), relu_pattern(&c.model, &c.target)];
    let mut probe = c.model.clone();
    for i in 0..probe.parameters().len() {
        let original = probe.parameters()[i];
        for delta in [step, -step] {
            probe.parameters_mut()[i] = original + delta;
            if relu_pattern(&probe, &c.source) != base[0] || relu_pattern(&probe, &c.target) != base[1] {
                return true;
            }
        }
        probe.parameters_mut()[i] = original;
    }
    false
}

/// First `count` configurations, in seed order, on which the loss is smooth
/// within one step of every parameter.
pub fn smooth_cases(count: usize, step: f64) -> Vec<(u64, Case)> {
    (0..)
        .map(|seed| (seed, case(seed)))
        .filter(|(_, c)| !crosses_kink(c, step))
        .take(count)
        .collect()
}

