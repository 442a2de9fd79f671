//! Differentially private synthetic data via select-measure-generate.
//!
//! The platform picks a set of marginals (the fairness-relevant ones are
//! always included, plus a few random feature pairs), measures each with
//! Laplace noise under a split budget, and then samples release rows from
//! the noisy measurements: the (protected, target, prediction) triple
//! jointly from the 3-way marginal, every feature independently from a
//! 1-way distribution recovered from the pair measurements.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mechanisms::{measure_marginal, project_nonnegative, BudgetLedger, NoisyMarginal};
use crate::seed;
use crate::table::Table;

/// Which marginals to measure and how to split the budget among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPlan {
    /// The fairness marginals, in fixed order: (A,Y), (A,Yhat), (Y,Yhat)
    /// and the full (A,Y,Yhat) triple.
    pub fairness: Vec<Vec<String>>,
    /// Randomly selected distinct feature pairs.
    pub feature_pairs: Vec<(String, String)>,
    /// Fraction of the budget spent on the fairness marginals; the rest
    /// is split evenly over the feature pairs. When there are no feature
    /// pairs the fairness marginals absorb the whole budget.
    pub fairness_share: f64,
    pub warnings: Vec<String>,
}

/// Number of random feature pairs measured by default.
pub const DEFAULT_FEATURE_PAIRS: usize = 12;

/// Default share of the budget spent on the fairness marginals.
pub const DEFAULT_FAIRNESS_SHARE: f64 = 0.5;

/// Choose the marginals to measure: the four fairness marginals always,
/// plus up to `pairs_requested` distinct feature pairs drawn uniformly
/// without replacement.
pub fn plan_marginals(
    schema: &crate::data::Schema,
    pairs_requested: usize,
    fairness_share: f64,
    seed_value: u64,
) -> Result<MarginalPlan> {
    if !(fairness_share > 0.0 && fairness_share < 1.0) {
        return Err(Error::Mechanism(format!(
            "fairness share must lie strictly between 0 and 1, got {fairness_share}"
        )));
    }
    let a = schema.attributes[schema.protected_index()].name.clone();
    let y = schema.attributes[schema.target_index()].name.clone();
    let yhat = schema.attributes[schema.prediction_index()].name.clone();
    let fairness = vec![
        vec![a.clone(), y.clone()],
        vec![a.clone(), yhat.clone()],
        vec![y.clone(), yhat.clone()],
        vec![a, y, yhat],
    ];

    let features: Vec<&str> = schema
        .feature_indices()
        .into_iter()
        .map(|i| schema.attributes[i].name.as_str())
        .collect();
    let mut all_pairs: Vec<(String, String)> = Vec::new();
    for i in 0..features.len() {
        for j in (i + 1)..features.len() {
            all_pairs.push((features[i].to_string(), features[j].to_string()));
        }
    }
    let mut warnings = Vec::new();
    let take = pairs_requested.min(all_pairs.len());
    if take < pairs_requested {
        warnings.push(format!(
            "only {take} distinct feature pairs exist (requested {pairs_requested})"
        ));
    }
    // Partial Fisher-Yates: after i steps the first i slots are a uniform
    // sample without replacement.
    let mut rng = seed::rng(seed_value, &[]);
    for i in 0..take {
        let j = rng.random_range(i..all_pairs.len());
        all_pairs.swap(i, j);
    }
    all_pairs.truncate(take);

    Ok(MarginalPlan { fairness, feature_pairs: all_pairs, fairness_share, warnings })
}

/// A fitted generative model: the projected (A, Y, Yhat) joint plus an
/// independent distribution per feature, with the raw noisy measurements
/// and the budget they cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    schema: crate::data::Schema,
    /// Probabilities over (A, Y, Yhat), dims [2, 2, 2].
    joint: Table,
    /// One distribution per feature column, in schema order.
    features: Vec<FeatureDist>,
    /// Every marginal as measured (noise included), in plan order.
    pub measured: Vec<NoisyMarginal>,
    pub ledger: BudgetLedger,
    pub n_source: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureDist {
    name: String,
    probs: Vec<f64>,
}

const SYNTH_FORMAT: &str = "p2nia-synth-model/1";

#[derive(Serialize, Deserialize)]
struct SynthArtifact {
    format: String,
    model: GenerativeModel,
}

/// Measure every marginal in the plan and assemble the generative model.
///
/// Each marginal gets its own sub-seeded noise stream, so the fit is a
/// pure function of `(dataset, plan, epsilon, seed)`. For finite budgets
/// the ledger totals exactly `epsilon`: the last entry is computed as the
/// remainder rather than an independently rounded share.
pub fn fit(
    dataset: &Dataset,
    plan: &MarginalPlan,
    epsilon: f64,
    seed_value: u64,
) -> Result<GenerativeModel> {
    if plan.fairness.len() != 4 {
        return Err(Error::Mechanism(format!(
            "plan must contain the 4 fairness marginals, found {}",
            plan.fairness.len()
        )));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Mechanism(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let schema = dataset.schema();

    // Nominal per-marginal budgets: fairness share split over 4, the rest
    // split over the pairs.
    let n_pairs = plan.feature_pairs.len();
    let fairness_share = if n_pairs == 0 { 1.0 } else { plan.fairness_share };
    let mut budgets: Vec<f64> = Vec::with_capacity(4 + n_pairs);
    budgets.extend(std::iter::repeat_n(epsilon * fairness_share / 4.0, 4));
    if n_pairs > 0 {
        budgets.extend(std::iter::repeat_n(
            epsilon * (1.0 - fairness_share) / n_pairs as f64,
            n_pairs,
        ));
    }
    if epsilon.is_finite() {
        // Pin the total exactly to epsilon by solving for the last entry.
        let partial: f64 = budgets[..budgets.len() - 1].iter().sum();
        let remainder = epsilon - partial;
        if remainder > 0.0 {
            *budgets.last_mut().unwrap() = remainder;
        }
    }

    let mut names: Vec<Vec<String>> = plan.fairness.clone();
    names.extend(plan.feature_pairs.iter().map(|(a, b)| vec![a.clone(), b.clone()]));

    let mut ledger = BudgetLedger::new();
    let mut measured = Vec::with_capacity(names.len());
    for (idx, (attrs, &eps)) in names.iter().zip(&budgets).enumerate() {
        let marginal = measure_marginal(dataset, attrs, eps, seed::derive(seed_value, &[idx as u64]))?;
        ledger.push(&format!("synth:{}", attrs.join(",")), eps)?;
        measured.push(marginal);
    }

    let mut warnings = plan.warnings.clone();

    // The joint over (A, Y, Yhat) comes from the 3-way fairness marginal.
    let (joint, joint_warnings) = project_nonnegative(&measured[3].table, 1.0)?;
    warnings.extend(joint_warnings.into_iter().map(|w| format!("joint (a,y,yhat): {w}")));

    // Each feature's distribution: average the 1-way marginalizations of
    // every measured pair that covers it, then project.
    let mut features = Vec::new();
    for col in schema.feature_indices() {
        let attr = &schema.attributes[col];
        let k = attr.cardinality();
        let mut acc = vec![0.0f64; k];
        let mut sources = 0usize;
        for marginal in &measured[4..] {
            if let Some(slot) = marginal.attributes.iter().position(|n| *n == attr.name) {
                let one_way = marginal.table.marginalize(&[slot])?;
                for (cell, &v) in acc.iter_mut().zip(one_way.data()) {
                    *cell += v;
                }
                sources += 1;
            }
        }
        let probs = if sources == 0 {
            warnings.push(format!(
                "feature {:?} is not covered by any measured marginal; sampling uniformly",
                attr.name
            ));
            vec![1.0 / k as f64; k]
        } else {
            let raw = Table::from_data(&[k], acc.iter().map(|v| v / sources as f64).collect())?;
            let (proj, proj_warnings) = project_nonnegative(&raw, 1.0)?;
            warnings.extend(
                proj_warnings.into_iter().map(|w| format!("feature {:?}: {w}", attr.name)),
            );
            proj.data().to_vec()
        };
        features.push(FeatureDist { name: attr.name.clone(), probs });
    }

    Ok(GenerativeModel {
        schema: schema.clone(),
        joint,
        features,
        measured,
        ledger,
        n_source: dataset.n_rows() as u64,
        warnings,
    })
}

impl GenerativeModel {
    pub fn schema(&self) -> &crate::data::Schema {
        &self.schema
    }

    /// The projected (A, Y, Yhat) probability table, dims [2, 2, 2].
    pub fn joint(&self) -> &Table {
        &self.joint
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SynthArtifact {
            format: SYNTH_FORMAT.to_string(),
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<GenerativeModel> {
        let artifact: SynthArtifact = serde_json::from_str(text)?;
        if artifact.format != SYNTH_FORMAT {
            return Err(Error::Mechanism(format!(
                "unsupported generative model format {:?} (expected {SYNTH_FORMAT:?})",
                artifact.format
            )));
        }
        Ok(artifact.model)
    }

    pub fn write_json_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json_file(path: &std::path::Path) -> Result<GenerativeModel> {
        GenerativeModel::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Draw an index from a cumulative distribution.
fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect()
}

/// Sample `n` rows from the model: one draw for the (A, Y, Yhat) triple,
/// then one per feature, in schema order. Rows are i.i.d. given the model.
pub fn generate(model: &GenerativeModel, n: usize, seed_value: u64) -> Result<Dataset> {
    let schema = model.schema.clone();
    let joint_cdf = cumulative(model.joint.data());
    let feature_cdfs: Vec<Vec<f64>> =
        model.features.iter().map(|f| cumulative(&f.probs)).collect();
    // Column index of each feature, aligned with model.features.
    let feature_cols = schema.feature_indices();
    if feature_cols.len() != model.features.len() {
        return Err(Error::Mechanism(
            "generative model features do not match its schema".into(),
        ));
    }
    let a_col = schema.protected_index();
    let y_col = schema.target_index();
    let p_col = schema.prediction_index();

    let mut rng = seed::rng(seed_value, &[]);
    let mut out = Dataset::new(schema);
    let mut row = vec![0u32; model.schema.width()];
    for _ in 0..n {
        let cell = sample_cdf(&joint_cdf, rng.random());
        row[a_col] = (cell / 4) as u32;
        row[y_col] = ((cell / 2) % 2) as u32;
        row[p_col] = (cell % 2) as u32;
        for (slot, &col) in feature_cols.iter().enumerate() {
            row[col] = sample_cdf(&feature_cdfs[slot], rng.random()) as u32;
        }
        out.push_row(&row)?;
    }
    Ok(out)
}
