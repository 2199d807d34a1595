//! Planted-attribute generator for exercising the full pipeline without
//! external data.
//!
//! Five numeric features `x0..x4`. The protected attribute `a` is a fair coin,
//! `x1 = a + N(0, 0.3^2)` is its related proxy, `x2` is the shift column, and
//! the label depends on `a` as well as on `x0`, `x2` and `x3`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use crate::data::{BinaryRule, ColumnData, EncodingSpec, RawTable};
use crate::density::sigmoid;
use crate::error::Result;

pub const FEATURES: [&str; 5] = ["x0", "x1", "x2", "x3", "x4"];
pub const PROXY_NOISE: f64 = 0.3;

pub fn encoding_spec() -> EncodingSpec {
    EncodingSpec {
        numeric_columns: FEATURES.iter().map(|s| s.to_string()).collect(),
        categorical_columns: Vec::new(),
        label_column: "y".into(),
        label_rule: BinaryRule::Identity,
        protected_column: "a".into(),
        protected_rule: BinaryRule::Identity,
        related_features: vec!["x1".into()],
        shift_column: "x2".into(),
    }
}

pub fn generate(rows: usize, seed: u64) -> Result<RawTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let proxy_noise = Normal::new(0.0, PROXY_NOISE).expect("valid normal");
    let coin = Bernoulli::new(0.5).expect("valid bernoulli");

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); FEATURES.len() + 2];
    for _ in 0..rows {
        let a = f64::from(u8::from(coin.sample(&mut rng)));
        let x0 = std_normal.sample(&mut rng);
        let x1 = a + proxy_noise.sample(&mut rng);
        let x2 = std_normal.sample(&mut rng);
        let x3 = std_normal.sample(&mut rng);
        let x4 = std_normal.sample(&mut rng);
        let logit = 1.5 * x0 + x3 - 0.75 * x2 + 3.0 * (a - 0.5);
        let y = f64::from(u8::from(rng.gen::<f64>() < sigmoid(logit)));
        for (col, v) in columns.iter_mut().zip([x0, x1, x2, x3, x4, a, y]) {
            col.push(v);
        }
    }

    let mut names: Vec<String> = FEATURES.iter().map(|s| s.to_string()).collect();
    names.push("a".into());
    names.push("y".into());
    RawTable::new(
        names,
        columns
            .into_iter()
            .map(|c| ColumnData::Numeric(c.into_iter().map(Some).collect()))
            .collect(),
    )
}
