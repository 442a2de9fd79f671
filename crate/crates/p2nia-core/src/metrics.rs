//! Group-fairness metrics over (protected attribute, outcome, prediction)
//! contingency tables.
//!
//! All metrics are absolute gaps between the two protected groups, so they
//! live in `[0, 1]`, with 0 meaning perfectly balanced. They accept
//! real-valued counts because debiasing a privatized table produces
//! non-integer (occasionally clamped) cell masses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::table::Table;

/// Real-valued counts over the 2x2x2 cube of
/// (protected group `a`, outcome `y`, prediction `yhat`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCounts {
    /// Cell order: index = a*4 + y*2 + yhat.
    cells: [f64; 8],
}

impl JointCounts {
    pub fn zeros() -> JointCounts {
        JointCounts { cells: [0.0; 8] }
    }

    /// Build from explicit cells, indexed `[a][y][yhat]`.
    pub fn from_cells(cells: [[[f64; 2]; 2]; 2]) -> JointCounts {
        let mut out = JointCounts::zeros();
        for (a, plane) in cells.iter().enumerate() {
            for (y, row) in plane.iter().enumerate() {
                for (p, &v) in row.iter().enumerate() {
                    out.cells[a * 4 + y * 2 + p] = v;
                }
            }
        }
        out
    }

    pub fn get(&self, a: usize, y: usize, yhat: usize) -> f64 {
        self.cells[a * 4 + y * 2 + yhat]
    }

    pub fn set(&mut self, a: usize, y: usize, yhat: usize, value: f64) {
        self.cells[a * 4 + y * 2 + yhat] = value;
    }

    pub fn add(&mut self, a: usize, y: usize, yhat: usize, value: f64) {
        self.cells[a * 4 + y * 2 + yhat] += value;
    }

    /// Cells as a flat slice in `a*4 + y*2 + yhat` order.
    pub fn cells(&self) -> &[f64; 8] {
        &self.cells
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    /// Total mass of protected group `a`.
    pub fn group_mass(&self, a: usize) -> f64 {
        (0..2).flat_map(|y| (0..2).map(move |p| (y, p))).map(|(y, p)| self.get(a, y, p)).sum()
    }

    /// Total mass of the stratum (group `a`, outcome `y`).
    pub fn stratum_mass(&self, a: usize, y: usize) -> f64 {
        self.get(a, y, 0) + self.get(a, y, 1)
    }

    /// P(yhat = 1 | A = a), if the group has mass.
    fn positive_rate(&self, a: usize) -> Result<f64> {
        let mass = self.group_mass(a);
        if mass <= 0.0 || mass.is_nan() {
            return Err(Error::Metrics(format!("group a={a} has no mass")));
        }
        Ok((self.get(a, 0, 1) + self.get(a, 1, 1)) / mass)
    }

    /// P(yhat = 1 | A = a, Y = y), if the stratum has mass.
    fn stratum_rate(&self, a: usize, y: usize) -> Result<f64> {
        let mass = self.stratum_mass(a, y);
        if mass <= 0.0 || mass.is_nan() {
            return Err(Error::Metrics(format!("stratum (a={a}, y={y}) has no mass")));
        }
        Ok(self.get(a, y, 1) / mass)
    }

    /// View as a 2x2x2 [`Table`] with axes (a, y, yhat).
    pub fn to_table(&self) -> Table {
        Table::from_data(&[2, 2, 2], self.cells.to_vec()).unwrap()
    }

    /// Build from a 2x2x2 [`Table`] with axes (a, y, yhat).
    pub fn from_table(table: &Table) -> Result<JointCounts> {
        if table.dims() != [2, 2, 2] {
            return Err(Error::Metrics(format!(
                "expected a 2x2x2 table, got dims {:?}",
                table.dims()
            )));
        }
        let mut cells = [0.0; 8];
        cells.copy_from_slice(table.data());
        Ok(JointCounts { cells })
    }

    fn check_nonempty(&self) -> Result<()> {
        let total = self.total();
        if total <= 0.0 || total.is_nan() {
            return Err(Error::Metrics("counts have zero total mass".into()));
        }
        if self.cells.iter().any(|c| c.is_nan()) {
            return Err(Error::Metrics("counts contain NaN".into()));
        }
        Ok(())
    }
}

/// Tally the (protected, target, prediction) columns of a dataset.
pub fn joint_counts(dataset: &Dataset) -> JointCounts {
    let a_col = dataset.schema().protected_index();
    let y_col = dataset.schema().target_index();
    let p_col = dataset.schema().prediction_index();
    let mut counts = JointCounts::zeros();
    for row in dataset.iter_rows() {
        counts.add(row[a_col] as usize, row[y_col] as usize, row[p_col] as usize, 1.0);
    }
    counts
}

/// Demographic parity gap: |P(yhat=1 | A=1) - P(yhat=1 | A=0)|.
pub fn demographic_parity(counts: &JointCounts) -> Result<f64> {
    counts.check_nonempty()?;
    Ok((counts.positive_rate(1)? - counts.positive_rate(0)?).abs())
}

/// Equalized odds gap: the larger of the per-outcome prediction-rate gaps
/// |P(yhat=1 | A=1, Y=y) - P(yhat=1 | A=0, Y=y)| over y in {0, 1}.
///
/// An outcome value with no mass in either group (for example an outcome
/// column that is identically 1) is skipped, so the metric degrades
/// gracefully to the populated outcome. An outcome with mass in exactly one
/// group is an error, because the gap for it is undefined rather than absent.
pub fn equalized_odds(counts: &JointCounts) -> Result<f64> {
    counts.check_nonempty()?;
    let mut worst: Option<f64> = None;
    for y in 0..2 {
        let mass0 = counts.stratum_mass(0, y);
        let mass1 = counts.stratum_mass(1, y);
        match (mass0 > 0.0, mass1 > 0.0) {
            (true, true) => {
                let gap = (counts.stratum_rate(1, y)? - counts.stratum_rate(0, y)?).abs();
                worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
            }
            (false, false) => {} // outcome absent everywhere: skip
            (true, false) => {
                return Err(Error::Metrics(format!("stratum (a=1, y={y}) has no mass")));
            }
            (false, true) => {
                return Err(Error::Metrics(format!("stratum (a=0, y={y}) has no mass")));
            }
        }
    }
    worst.ok_or_else(|| Error::Metrics("no outcome value has mass in any group".into()))
}

/// Equality of opportunity gap:
/// |P(yhat=1 | A=1, Y=1) - P(yhat=1 | A=0, Y=1)|.
pub fn equality_of_opportunity(counts: &JointCounts) -> Result<f64> {
    counts.check_nonempty()?;
    Ok((counts.stratum_rate(1, 1)? - counts.stratum_rate(0, 1)?).abs())
}

/// Total variation distance between two probability tables of identical
/// shape: half the L1 distance. Both tables must sum to 1 (within 1e-9).
pub fn tv_distance(p: &Table, q: &Table) -> Result<f64> {
    if p.dims() != q.dims() {
        return Err(Error::Metrics(format!(
            "tables have different shapes: {:?} vs {:?}",
            p.dims(),
            q.dims()
        )));
    }
    for (name, t) in [("first", p), ("second", q)] {
        if (t.total() - 1.0).abs() > 1e-9 {
            return Err(Error::Metrics(format!(
                "{name} table is not a probability table (total {})",
                t.total()
            )));
        }
    }
    let l1: f64 = p.data().iter().zip(q.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(l1 / 2.0)
}

/// Which pipeline produced a fairness estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Straight tally of the rows at hand.
    Empirical,
    /// Randomized-response release, debiased through the channel inverse.
    GrrDebiased,
    /// Tally of rows sampled from a noisy generative model.
    Synthetic,
    /// Model queried on auditor-chosen inputs, no access to real data.
    Blackbox,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Estimator::Empirical => "empirical",
            Estimator::GrrDebiased => "grr_debiased",
            Estimator::Synthetic => "synthetic",
            Estimator::Blackbox => "blackbox",
        };
        f.write_str(s)
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Estimator> {
        match s {
            "empirical" => Ok(Estimator::Empirical),
            "grr_debiased" => Ok(Estimator::GrrDebiased),
            "synthetic" => Ok(Estimator::Synthetic),
            "blackbox" => Ok(Estimator::Blackbox),
            other => Err(Error::Metrics(format!("unknown estimator {other:?}"))),
        }
    }
}

/// The fairness metrics this crate can audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    DemographicParity,
    EqualizedOdds,
    EqualityOfOpportunity,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [
        MetricKind::DemographicParity,
        MetricKind::EqualizedOdds,
        MetricKind::EqualityOfOpportunity,
    ];

    /// Whether the metric conditions on the ground-truth outcome.
    pub fn needs_target(&self) -> bool {
        matches!(self, MetricKind::EqualizedOdds | MetricKind::EqualityOfOpportunity)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetricKind::DemographicParity => "demographic_parity",
            MetricKind::EqualizedOdds => "equalized_odds",
            MetricKind::EqualityOfOpportunity => "equality_of_opportunity",
        };
        f.write_str(s)
    }
}

impl FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<MetricKind> {
        match s {
            "demographic_parity" | "dp" => Ok(MetricKind::DemographicParity),
            "equalized_odds" | "eo" => Ok(MetricKind::EqualizedOdds),
            "equality_of_opportunity" | "eoo" => Ok(MetricKind::EqualityOfOpportunity),
            other => Err(Error::Metrics(format!("unknown metric {other:?}"))),
        }
    }
}

/// All three metrics for one table of counts, with provenance.
///
/// A metric whose strata are empty is reported as `None` with an
/// explanatory note instead of failing the whole report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub estimator: Estimator,
    /// Rounded total mass behind the estimates.
    pub n_effective: u64,
    pub demographic_parity: Option<f64>,
    pub equalized_odds: Option<f64>,
    pub equality_of_opportunity: Option<f64>,
    pub notes: Vec<String>,
}

impl FairnessReport {
    pub fn metric(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::DemographicParity => self.demographic_parity,
            MetricKind::EqualizedOdds => self.equalized_odds,
            MetricKind::EqualityOfOpportunity => self.equality_of_opportunity,
        }
    }

    /// Plain `key = value` rendering, one line per field.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("estimator = {}\n", self.estimator));
        out.push_str(&format!("n_effective = {}\n", self.n_effective));
        for kind in MetricKind::ALL {
            if let Some(v) = self.metric(kind) {
                out.push_str(&format!("{kind} = {v}\n"));
            }
        }
        for note in &self.notes {
            out.push_str(&format!("note = {note}\n"));
        }
        out
    }

    /// Parse the `key = value` rendering back.
    pub fn from_text(text: &str) -> Result<FairnessReport> {
        let mut estimator = None;
        let mut n_effective = None;
        let mut dp = None;
        let mut eo = None;
        let mut eoo = None;
        let mut notes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Data(format!("report line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad_num = |e| Error::Data(format!("report line {}: {e}", lineno + 1));
            match key {
                "estimator" => estimator = Some(value.parse::<Estimator>()?),
                "n_effective" => {
                    n_effective = Some(value.parse::<u64>().map_err(|e| bad_num(e.to_string()))?)
                }
                "demographic_parity" => {
                    dp = Some(value.parse::<f64>().map_err(|e| bad_num(e.to_string()))?)
                }
                "equalized_odds" => {
                    eo = Some(value.parse::<f64>().map_err(|e| bad_num(e.to_string()))?)
                }
                "equality_of_opportunity" => {
                    eoo = Some(value.parse::<f64>().map_err(|e| bad_num(e.to_string()))?)
                }
                "note" => notes.push(value.to_string()),
                other => {
                    return Err(Error::Data(format!(
                        "report line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(FairnessReport {
            estimator: estimator
                .ok_or_else(|| Error::Data("report is missing the estimator line".into()))?,
            n_effective: n_effective
                .ok_or_else(|| Error::Data("report is missing the n_effective line".into()))?,
            demographic_parity: dp,
            equalized_odds: eo,
            equality_of_opportunity: eoo,
            notes,
        })
    }
}

/// Compute all three metrics from one table of counts.
///
/// Errors only when the table is entirely empty; individually undefined
/// metrics come back as `None` with a note.
pub fn fairness_report(counts: &JointCounts, estimator: Estimator) -> Result<FairnessReport> {
    counts.check_nonempty()?;
    let mut notes = Vec::new();
    let mut capture = |kind: MetricKind, result: Result<f64>| match result {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{kind} unavailable: {e}"));
            None
        }
    };
    let dp = capture(MetricKind::DemographicParity, demographic_parity(counts));
    let eo = capture(MetricKind::EqualizedOdds, equalized_odds(counts));
    let eoo = capture(MetricKind::EqualityOfOpportunity, equality_of_opportunity(counts));
    Ok(FairnessReport {
        estimator,
        n_effective: counts.total().round() as u64,
        demographic_parity: dp,
        equalized_odds: eo,
        equality_of_opportunity: eoo,
        notes,
    })
}


#[cfg(test)]
mod property_tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts with every (a, y) stratum populated, so all metrics defined.
    fn populated_counts() -> impl Strategy<Value = JointCounts> {
        proptest::array::uniform8(0.01f64..1000.0)
            .prop_map(|cells| {
                let mut c = JointCounts::zeros();
                for a in 0..2 {
                    for y in 0..2 {
                        for p in 0..2 {
                            c.set(a, y, p, cells[a * 4 + y * 2 + p]);
                        }
                    }
                }
                c
            })
    }

    fn swap_groups(c: &JointCounts) -> JointCounts {
        let mut out = JointCounts::zeros();
        for a in 0..2 {
            for y in 0..2 {
                for p in 0..2 {
                    out.set(1 - a, y, p, c.get(a, y, p));
                }
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn metrics_stay_in_unit_interval(c in populated_counts()) {
            for v in [
                demographic_parity(&c).unwrap(),
                equalized_odds(&c).unwrap(),
                equality_of_opportunity(&c).unwrap(),
            ] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn equalized_odds_dominates_opportunity(c in populated_counts()) {
            let eo = equalized_odds(&c).unwrap();
            let eoo = equality_of_opportunity(&c).unwrap();
            prop_assert!(eo >= eoo - 1e-12);
        }

        #[test]
        fn metrics_symmetric_under_group_relabel(c in populated_counts()) {
            let s = swap_groups(&c);
            prop_assert!((demographic_parity(&c).unwrap() - demographic_parity(&s).unwrap()).abs() < 1e-12);
            prop_assert!((equalized_odds(&c).unwrap() - equalized_odds(&s).unwrap()).abs() < 1e-12);
            prop_assert!((equality_of_opportunity(&c).unwrap() - equality_of_opportunity(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn tv_invariant_under_count_scaling(
            cells_p in proptest::collection::vec(0.01f64..100.0, 4),
            cells_q in proptest::collection::vec(0.01f64..100.0, 4),
            factor in 0.1f64..50.0,
        ) {
            let p = Table::from_data(&[4], cells_p).unwrap();
            let q = Table::from_data(&[4], cells_q).unwrap();
            let mut p_scaled = p.clone();
            p_scaled.scale(factor);
            let base = tv_distance(&p.normalized().unwrap(), &q.normalized().unwrap()).unwrap();
            let scaled =
                tv_distance(&p_scaled.normalized().unwrap(), &q.normalized().unwrap()).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
        }
    }
}
