//! Local privacy mechanisms: per-column generalized randomized response,
//! Laplace-noised marginal counts, and the budget accounting shared by
//! both.
//!
//! Randomized response keeps each cell with probability
//! `p = e^eps / (e^eps + k - 1)` and otherwise replaces it uniformly with
//! one of the `k - 1` other categories. Flipping every column
//! independently with budget `eps` per column satisfies local differential
//! privacy per column, and the overall spend is tracked by a
//! [`BudgetLedger`] under sequential composition.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::table::Table;

/// Serde helper for privacy budgets: serializes infinity as the string
/// `"inf"` (JSON has no infinity literal) and finite values as numbers.
pub mod epsilon_serde {
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() && *value > 0.0 {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(*value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.trim() {
                "inf" | "infinity" | "Infinity" => Ok(f64::INFINITY),
                other => other
                    .parse::<f64>()
                    .map_err(|_| D::Error::custom(format!("invalid epsilon {other:?}"))),
            },
        }
    }
}

/// Parse a budget from a string, accepting `inf` for no noise.
pub fn parse_epsilon(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|_| Error::Mechanism(format!("invalid epsilon {other:?}"))),
    }
}

/// Retention probability of randomized response over `k` categories with
/// budget `epsilon`: `e^eps / (e^eps + k - 1)`.
///
/// Computed as `1 / (1 + (k-1) e^-eps)` so large budgets do not overflow.
/// An infinite budget yields exactly 1 (the identity channel).
pub fn grr_flip_prob(epsilon: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::Mechanism(format!(
            "randomized response needs at least 2 categories, got {k}"
        )));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Mechanism(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if epsilon.is_infinite() {
        return Ok(1.0);
    }
    Ok(1.0 / (1.0 + (k as f64 - 1.0) * (-epsilon).exp()))
}

/// The randomized-response channel for one column: an `k x k` matrix with
/// `p` on the diagonal and `(1 - p) / (k - 1)` everywhere else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrrChannel {
    pub k: usize,
    #[serde(with = "epsilon_serde")]
    pub epsilon: f64,
    /// Probability of keeping the true category.
    pub p: f64,
}

impl GrrChannel {
    pub fn new(epsilon: f64, k: usize) -> Result<GrrChannel> {
        let p = grr_flip_prob(epsilon, k)?;
        Ok(GrrChannel { k, epsilon, p })
    }

    /// Off-diagonal entry: probability of landing on one specific other
    /// category. Computed as `p * e^-eps` (algebraically equal to
    /// `(1 - p) / (k - 1)`) because the subtraction cancels most of `p`'s
    /// precision at large budgets, which would spoil the channel's
    /// likelihood ratio.
    pub fn q(&self) -> f64 {
        self.p * (-self.epsilon).exp()
    }

    /// Channel matrix entry P(output = i | input = j).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.p
        } else {
            self.q()
        }
    }

    /// The channel is invertible iff `p != 1/k` (it only degenerates in
    /// the zero-budget limit).
    pub fn is_invertible(&self) -> bool {
        (self.p - 1.0 / self.k as f64).abs() > f64::EPSILON
    }

    /// Push a count (or probability) vector through the channel:
    /// `out = M v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let q = self.q();
        let total: f64 = v.iter().sum();
        Ok(v.iter().map(|&x| (self.p - q) * x + q * total).collect())
    }

    /// Undo the channel in expectation: `out = M^-1 v`, using the closed
    /// form `M^-1 = (I - qJ) / (p - q)`.
    pub fn invert(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        if !self.is_invertible() {
            return Err(Error::Mechanism(format!(
                "channel with p = 1/{} is singular and cannot be debiased",
                self.k
            )));
        }
        let q = self.q();
        let total: f64 = v.iter().sum();
        Ok(v.iter().map(|&x| (x - q * total) / (self.p - q)).collect())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.k {
            return Err(Error::Mechanism(format!(
                "vector length {} does not match channel arity {}",
                v.len(),
                self.k
            )));
        }
        Ok(())
    }

    /// Apply the channel along one axis of a table (every 1-d line of the
    /// table along that axis is pushed through `M`).
    pub fn apply_along_axis(&self, table: &mut Table, axis: usize) -> Result<()> {
        self.transform_axis(table, axis, false)
    }

    /// Invert the channel along one axis of a table.
    pub fn invert_along_axis(&self, table: &mut Table, axis: usize) -> Result<()> {
        self.transform_axis(table, axis, true)
    }

    fn transform_axis(&self, table: &mut Table, axis: usize, inverse: bool) -> Result<()> {
        let dims = table.dims().to_vec();
        if axis >= dims.len() {
            return Err(Error::Mechanism(format!(
                "axis {axis} out of range for table of rank {}",
                dims.len()
            )));
        }
        if dims[axis] != self.k {
            return Err(Error::Mechanism(format!(
                "axis {axis} has size {} but channel arity is {}",
                dims[axis], self.k
            )));
        }
        let stride: usize = dims[axis + 1..].iter().product();
        let block = stride * self.k;
        let len = table.len();
        let mut line = vec![0.0; self.k];
        for chunk in (0..len).step_by(block) {
            for offset in 0..stride {
                let base = chunk + offset;
                for (t, cell) in line.iter_mut().enumerate() {
                    *cell = table.data()[base + t * stride];
                }
                let transformed =
                    if inverse { self.invert(&line)? } else { self.apply(&line)? };
                for (t, value) in transformed.into_iter().enumerate() {
                    table.data_mut()[base + t * stride] = value;
                }
            }
        }
        Ok(())
    }
}

/// One privacy expenditure: a label for what was bought and the budget it
/// cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    #[serde(with = "epsilon_serde")]
    pub epsilon: f64,
}

/// Running account of privacy spend under sequential composition: the
/// total budget consumed is the sum of the entries. Auditor-side
/// post-processing never appends entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BudgetLedger {
    entries: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new() -> BudgetLedger {
        BudgetLedger::default()
    }

    pub fn push(&mut self, label: &str, epsilon: f64) -> Result<()> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::Mechanism(format!(
                "ledger entry {label:?} must have non-negative epsilon, got {epsilon}"
            )));
        }
        self.entries.push(LedgerEntry { label: label.to_string(), epsilon });
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total budget spent (sequential composition).
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.epsilon).sum()
    }
}

/// Which columns a mechanism touches.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnSelection {
    All,
    Named(Vec<String>),
}

impl ColumnSelection {
    fn resolve(&self, dataset: &Dataset) -> Result<Vec<usize>> {
        match self {
            ColumnSelection::All => Ok((0..dataset.width()).collect()),
            ColumnSelection::Named(names) => {
                let mut cols = Vec::with_capacity(names.len());
                for name in names {
                    let idx = dataset.schema().column_index(name)?;
                    if cols.contains(&idx) {
                        return Err(Error::Mechanism(format!(
                            "column {name:?} selected twice"
                        )));
                    }
                    cols.push(idx);
                }
                Ok(cols)
            }
        }
    }
}

/// Result of perturbing a dataset with randomized response.
#[derive(Debug, Clone)]
pub struct PerturbOutcome {
    pub dataset: Dataset,
    pub ledger: BudgetLedger,
    /// Per-column channels in the order the columns were perturbed.
    pub channels: Vec<(String, GrrChannel)>,
    pub warnings: Vec<String>,
}

/// Flip every selected column of the dataset independently with budget
/// `epsilon_per_column`.
///
/// Columns are processed in schema order, rows in row order, one uniform
/// draw per cell, so the output is a pure function of `(dataset,
/// epsilon_per_column, columns, seed)`. Single-category columns cannot be
/// flipped; they are passed through with a warning and a zero-cost ledger
/// entry.
pub fn grr_perturb(
    dataset: &Dataset,
    epsilon_per_column: f64,
    columns: &ColumnSelection,
    seed_value: u64,
) -> Result<PerturbOutcome> {
    let selected = columns.resolve(dataset)?;
    if selected.is_empty() {
        return Err(Error::Mechanism("no columns selected for perturbation".into()));
    }
    let mut ledger = BudgetLedger::new();
    let mut warnings = Vec::new();
    let mut channels = Vec::new();
    // (column index, p, k) for the columns that actually get flipped.
    let mut active: Vec<(usize, f64, usize)> = Vec::new();
    for &col in &selected {
        let attr = &dataset.schema().attributes[col];
        let k = attr.cardinality();
        if k < 2 {
            warnings.push(format!(
                "column {:?} has a single category and was released unperturbed",
                attr.name
            ));
            ledger.push(&format!("grr:{}", attr.name), 0.0)?;
            continue;
        }
        let channel = GrrChannel::new(epsilon_per_column, k)?;
        ledger.push(&format!("grr:{}", attr.name), epsilon_per_column)?;
        active.push((col, channel.p, k));
        channels.push((attr.name.clone(), channel));
    }

    let mut out = dataset.clone();
    let width = out.width();
    let n_rows = out.n_rows();
    let mut rng = seed::rng(seed_value, &[]);
    let codes = out.codes_mut();
    for r in 0..n_rows {
        let base = r * width;
        for &(col, p, k) in &active {
            let u: f64 = rng.random();
            if u >= p {
                // Uniform over the k-1 other categories, reusing the same
                // draw: (u - p) / (1 - p) is uniform on [0, 1).
                let spread = (u - p) / (1.0 - p) * (k as f64 - 1.0);
                let t = (spread as usize).min(k - 2) as u32;
                let cell = &mut codes[base + col];
                *cell = t + u32::from(t >= *cell);
            }
        }
    }
    Ok(PerturbOutcome { dataset: out, ledger, channels, warnings })
}

/// Debias a noisy (a, y, yhat) table through the inverses of the three
/// per-column channels, in axis order (protected, target, prediction).
///
/// The linear inverse can produce small negative cells; those are clamped
/// to zero and the table rescaled to its original total. A warning is
/// returned if clamping moved any cell by more than 1% of the total.
pub fn grr_debias_counts(
    noisy: &crate::metrics::JointCounts,
    channels: &[GrrChannel; 3],
) -> Result<(crate::metrics::JointCounts, Vec<String>)> {
    let total = noisy.total();
    if total <= 0.0 || total.is_nan() {
        return Err(Error::Mechanism(format!(
            "cannot debias counts with total {total}"
        )));
    }
    let mut table = noisy.to_table();
    for (axis, channel) in channels.iter().enumerate() {
        channel.invert_along_axis(&mut table, axis)?;
    }
    let mut warnings = Vec::new();
    let mut max_change = 0.0f64;
    for cell in table.data_mut() {
        if *cell < 0.0 {
            max_change = max_change.max(-*cell);
            *cell = 0.0;
        }
    }
    if max_change > 0.01 * total {
        warnings.push(format!(
            "debiasing clamped a cell by {max_change:.3} ({:.1}% of total mass)",
            100.0 * max_change / total
        ));
    }
    let clamped_total = table.total();
    if clamped_total <= 0.0 || clamped_total.is_nan() {
        return Err(Error::Mechanism(
            "debiased counts are entirely non-positive".into(),
        ));
    }
    table.scale(total / clamped_total);
    Ok((crate::metrics::JointCounts::from_table(&table)?, warnings))
}

/// What kind of noise a measured marginal carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Exact counts (infinite budget).
    None,
    /// Additive Laplace noise with the given scale on every cell.
    Laplace { scale: f64 },
}

/// A contingency table over a subset of attributes, measured with a
/// privacy budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyMarginal {
    pub attributes: Vec<String>,
    pub table: Table,
    #[serde(with = "epsilon_serde")]
    pub epsilon: f64,
    pub noise: NoiseKind,
}

/// Draw from the Laplace distribution with the given scale via inverse
/// CDF sampling.
fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    // u uniform on (0, 1), shifted to (-1/2, 1/2); the loop discards the
    // single value that would send the quantile to infinity.
    let u = loop {
        let raw: f64 = rng.random();
        if raw > 0.0 {
            break raw - 0.5;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Count the joint marginal of the named attributes and add Laplace noise
/// calibrated to `epsilon` (sensitivity 1 under removing one row).
///
/// Cells receive independent noise in row-major order, so the result is
/// deterministic in `(dataset, attributes, epsilon, seed)`. An infinite
/// budget yields exact counts tagged [`NoiseKind::None`].
pub fn measure_marginal<S: AsRef<str>>(
    dataset: &Dataset,
    attributes: &[S],
    epsilon: f64,
    seed_value: u64,
) -> Result<NoisyMarginal> {
    if attributes.is_empty() {
        return Err(Error::Mechanism("a marginal needs at least one attribute".into()));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Mechanism(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut cols = Vec::with_capacity(attributes.len());
    for name in attributes {
        let idx = dataset.schema().column_index(name.as_ref())?;
        if cols.contains(&idx) {
            return Err(Error::Mechanism(format!(
                "attribute {:?} listed twice in marginal",
                name.as_ref()
            )));
        }
        cols.push(idx);
    }
    let dims: Vec<usize> =
        cols.iter().map(|&c| dataset.schema().attributes[c].cardinality()).collect();
    let mut table = Table::zeros(&dims)?;
    let mut index = vec![0usize; cols.len()];
    for row in dataset.iter_rows() {
        for (slot, &c) in cols.iter().enumerate() {
            index[slot] = row[c] as usize;
        }
        table.add(&index, 1.0)?;
    }
    let names: Vec<String> = attributes.iter().map(|s| s.as_ref().to_string()).collect();
    if epsilon.is_infinite() {
        return Ok(NoisyMarginal { attributes: names, table, epsilon, noise: NoiseKind::None });
    }
    let scale = 1.0 / epsilon;
    let mut rng = seed::rng(seed_value, &[]);
    for cell in table.data_mut() {
        *cell += laplace(&mut rng, scale);
    }
    Ok(NoisyMarginal {
        attributes: names,
        table,
        epsilon,
        noise: NoiseKind::Laplace { scale },
    })
}

/// Clamp negative cells to zero and rescale so the table sums to
/// `target_total`. If nothing positive survives, fall back to the uniform
/// table with a warning.
pub fn project_nonnegative(table: &Table, target_total: f64) -> Result<(Table, Vec<String>)> {
    if target_total <= 0.0 || !target_total.is_finite() {
        return Err(Error::Mechanism(format!(
            "target total must be positive and finite, got {target_total}"
        )));
    }
    let mut out = table.clone();
    for cell in out.data_mut() {
        if *cell < 0.0 {
            *cell = 0.0;
        }
    }
    let total = out.total();
    let mut warnings = Vec::new();
    if total > 0.0 {
        out.scale(target_total / total);
    } else {
        warnings.push(
            "no positive mass after clamping; falling back to the uniform table".to_string(),
        );
        let uniform = target_total / out.len() as f64;
        for cell in out.data_mut() {
            *cell = uniform;
        }
    }
    Ok((out, warnings))
}
