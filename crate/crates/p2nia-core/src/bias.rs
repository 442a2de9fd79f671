//! An analytic family of worlds where black-box audit bias is exactly
//! computable.
//!
//! The world has inputs `(a, b, c)`: the pair `(a, b)` follows a joint
//! distribution parameterized by a shift `alpha`, and `c` is an
//! independent fair coin (kept as the binary indicator that matters to
//! the model). The fixed model is
//!
//! ```text
//! yhat = a        if b = 1
//! yhat = [c high] if b = 0
//! ```
//!
//! and the outcome is identically 1. At `alpha = 0` the model's
//! demographic parity gap is 0; shifting mass `alpha` onto `b = 1` moves
//! the gap to exactly `alpha`, and the total variation distance between
//! the shifted and unshifted input distributions is also exactly `alpha`.
//! An auditor that samples its own queries from the wrong member of the
//! family therefore misjudges the gap by precisely the shift, no matter
//! how many queries it spends.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeSpec, Dataset, Role, Schema};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::seed;
use crate::table::Table;

/// One member of the family: mass `alpha` sits on `b = 1` (split evenly
/// between the two groups), the rest on `b = 0`. `alpha = 0` is the
/// baseline world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedWorld {
    pub alpha: f64,
}

impl ShiftedWorld {
    pub fn new(alpha: f64) -> Result<ShiftedWorld> {
        if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
            return Err(Error::Data(format!(
                "shift alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(ShiftedWorld { alpha })
    }

    /// Joint distribution of `(a, b)`, dims [2, 2].
    pub fn pair_table(&self) -> Table {
        let on = self.alpha / 2.0;
        let off = (1.0 - self.alpha) / 2.0;
        // Cells in (a, b) row-major order: (0,0), (0,1), (1,0), (1,1).
        Table::from_data(&[2, 2], vec![off, on, off, on]).unwrap()
    }

    /// P(yhat = 1 | A = a), computed by exact enumeration over (b, c).
    pub fn positive_rate(&self, a: usize) -> f64 {
        let pair = self.pair_table();
        let mass_a: f64 = (0..2).map(|b| pair.get(&[a, b]).unwrap()).sum();
        let mut rate = 0.0;
        for b in 0..2 {
            let p_b = pair.get(&[a, b]).unwrap() / mass_a;
            // b = 1: the model outputs the group bit; b = 0: a fair coin.
            let p_pos = if b == 1 { a as f64 } else { 0.5 };
            rate += p_b * p_pos;
        }
        rate
    }

    /// The model's exact demographic parity gap under this world.
    pub fn analytic_gap(&self) -> f64 {
        (self.positive_rate(1) - self.positive_rate(0)).abs()
    }

    /// Exact total variation distance between this world's input
    /// distribution and the baseline's.
    pub fn tv_from_baseline(&self) -> f64 {
        let baseline = ShiftedWorld { alpha: 0.0 };
        crate::metrics::tv_distance(&self.pair_table(), &baseline.pair_table()).unwrap()
    }

    /// Draw `n` labelled rows from the world. The outcome column is
    /// identically 1 and the prediction column is already filled by the
    /// model.
    pub fn sample(&self, n: usize, seed_value: u64) -> Dataset {
        let mut rng = seed::rng(seed_value, &[]);
        let pair = self.pair_table();
        let cdf: Vec<f64> = {
            let mut acc = 0.0;
            pair.data()
                .iter()
                .map(|&p| {
                    acc += p;
                    acc
                })
                .collect()
        };
        let mut out = Dataset::new(world_schema());
        for _ in 0..n {
            let u: f64 = rng.random();
            let cell = cdf.partition_point(|&c| c <= u).min(3);
            let a = (cell / 2) as u32;
            let b = (cell % 2) as u32;
            let c_high = u32::from(rng.random::<f64>() > 0.5);
            let yhat = if b == 1 { a } else { c_high };
            // Columns: b, c_ind, a, y, yhat.
            out.push_row(&[b, c_high, a, 1, yhat]).unwrap();
        }
        out
    }
}

/// Schema of the world's datasets: the two model inputs, the protected
/// bit, the constant outcome and the prediction.
pub fn world_schema() -> Schema {
    Schema::new(vec![
        AttributeSpec::categorical("b", Role::Feature, &["0", "1"]),
        AttributeSpec::categorical("c_ind", Role::Feature, &["low", "high"]),
        AttributeSpec::categorical("a", Role::Protected, &["0", "1"]),
        AttributeSpec::categorical("y", Role::Target, &["0", "1"]),
        AttributeSpec::categorical("yhat", Role::Prediction, &["0", "1"]),
    ])
    .unwrap()
}

/// The family's fixed model as a [`Classifier`], so the generic audit
/// paths can query it like any other model.
#[derive(Debug, Clone, Copy, Default)]
pub struct WorldModel;

impl Classifier for WorldModel {
    fn label(&self, dataset: &mut Dataset) -> Result<()> {
        let b_col = dataset.schema().column_index("b")?;
        let c_col = dataset.schema().column_index("c_ind")?;
        let a_col = dataset.schema().column_index("a")?;
        let pred_col = dataset.schema().prediction_index();
        for r in 0..dataset.n_rows() {
            let yhat = if dataset.code(r, b_col) == 1 {
                dataset.code(r, a_col)
            } else {
                dataset.code(r, c_col)
            };
            dataset.set_code(r, pred_col, yhat)?;
        }
        Ok(())
    }
}

/// One point of the shift demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPoint {
    pub alpha: f64,
    /// The parity gap an auditor sampling from the shifted world measures
    /// in the large-query limit (exact).
    pub analytic_gap: f64,
    /// |empirical gap on a shifted sample - true gap in the baseline
    /// world|: the audit error caused by assuming the wrong distribution.
    pub empirical_error: f64,
    pub n: u64,
}

/// Quantify audit bias across a grid of shifts: for each `alpha`, sample
/// `n` rows from the shifted world and compare the measured parity gap
/// with the baseline world's true gap (zero).
pub fn shift_demo(alphas: &[f64], n: usize, seed_value: u64) -> Result<Vec<ShiftPoint>> {
    if n == 0 {
        return Err(Error::Data("shift demo needs at least one sample row".into()));
    }
    let baseline_gap = ShiftedWorld::new(0.0)?.analytic_gap();
    let mut points = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let world = ShiftedWorld::new(alpha)?;
        let sample = world.sample(n, seed::derive(seed_value, &[i as u64]));
        let measured =
            crate::metrics::demographic_parity(&crate::metrics::joint_counts(&sample))?;
        points.push(ShiftPoint {
            alpha,
            analytic_gap: world.analytic_gap(),
            empirical_error: (measured - baseline_gap).abs(),
            n: n as u64,
        });
    }
    Ok(points)
}
