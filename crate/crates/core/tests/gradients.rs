mod common;

use common::{audits, case, for_each_objective, smooth_cases};
use fairshift::mlp::ModelObjective;

#[test]
fn kink_free_configurations_exist() {
    let cases = smooth_cases(20, 1e-5);
    assert_eq!(cases.len(), 20);
    assert!(cases.iter().all(|(_, c)| c.model.layer_dims()[1..] == [64, 32, 1]));
}

/// Each analytic entry agrees with the central difference to 1e-4 relative,
/// or to within the rounding of the loss value itself, which bounds what a
/// difference quotient can resolve for near-zero entries.
#[test]
fn analytic_gradients_match_central_differences() {
    let step = 1e-5;
    for (seed, c) in smooth_cases(20, step) {
        for_each_objective(&c, |name, obj: &dyn ModelObjective| {
            let analytic = obj.gradient(&c.model).unwrap();
            let mut probe = c.model.clone();
            for i in 0..probe.parameters().len() {
                let original = probe.parameters()[i];
                probe.parameters_mut()[i] = original + step;
                let up = obj.value(&probe).unwrap();
                probe.parameters_mut()[i] = original - step;
                let down = obj.value(&probe).unwrap();
                probe.parameters_mut()[i] = original;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic.values()[i];
                let gap = (a - numeric).abs();
                let relative = gap / (a.abs() + numeric.abs()).max(1e-8);
                let rounding = 16.0 * f64::EPSILON * up.abs().max(down.abs()) / step;
                assert!(
                    relative < 1e-4 || gap < rounding,
                    "seed {seed} {name} parameter {i}: analytic {a:e} numeric {numeric:e}"
                );
            }
        });
    }
}

#[test]
fn coarse_step_is_visibly_worse() {
    let c = case(3);
    let fine: f64 = audits(&c, 1e-5).iter().map(|a| a.1).fold(0.0, f64::max);
    let coarse: f64 = audits(&c, 1e-2).iter().map(|a| a.1).fold(0.0, f64::max);
    assert!(coarse > fine, "coarse {coarse:e} vs fine {fine:e}");
}
