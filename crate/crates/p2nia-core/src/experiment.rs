//! Experiment support: a synthetic benchmark dataset and a sweep harness.
//!
//! [`make_desk_data`] fabricates an employment-flavored table with a
//! planted parity gap, so the whole pipeline can be exercised (and its
//! estimates checked against a known reference) without shipping any real
//! data. [`run_sweep`] then replays the protocol across a grid of budgets
//! or sample sizes, once per mechanism per repetition, and tabulates the
//! estimation error of every run against the unprivatized reference.

use rand::Rng;

use crate::data::{AttributeSpec, BinningRule, Dataset, Role, Schema};
use crate::error::{Error, Result};
use crate::metrics::{FairnessReport, MetricKind};
use crate::model::Classifier;
use crate::protocol::{
    blackbox_audit, reference_report, run_session, AuditRequest, BlackBoxConfig, EpsilonMode,
    MechanismKind,
};
use crate::seed;

/// Schema of the synthetic benchmark table.
pub fn desk_schema() -> Schema {
    Schema::new(vec![
        AttributeSpec::binned(
            "age",
            Role::Feature,
            &BinningRule::new(vec![30.0, 45.0]).expect("cuts are increasing"),
        ),
        AttributeSpec::binned(
            "hours",
            Role::Feature,
            &BinningRule::new(vec![20.0, 35.0, 45.0]).expect("cuts are increasing"),
        ),
        AttributeSpec::categorical(
            "education",
            Role::Feature,
            &["hs", "some_college", "bachelors", "graduate"],
        ),
        AttributeSpec::categorical(
            "sector",
            Role::Feature,
            &["retail", "manufacturing", "health", "tech", "public"],
        ),
        AttributeSpec::categorical("region", Role::Feature, &["north", "south", "east", "west"]),
        AttributeSpec::categorical("tenure", Role::Feature, &["short", "medium", "long"]),
        AttributeSpec::categorical("contract", Role::Feature, &["part_time", "full_time"]),
        AttributeSpec::categorical("dependents", Role::Feature, &["none", "one", "several"]),
        AttributeSpec::categorical("sex", Role::Protected, &["f", "m"]),
        AttributeSpec::categorical("income", Role::Target, &["low", "high"]),
        AttributeSpec::categorical("income_pred", Role::Prediction, &["low", "high"]),
    ])
    .expect("benchmark schema is well-formed")
}

fn pick(rng: &mut impl Rng, weights: &[f64]) -> u32 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i as u32;
        }
    }
    (weights.len() - 1) as u32
}

/// Generate the synthetic benchmark table: mildly correlated features, a
/// protected attribute, and an outcome whose rate depends on the group,
/// so the labels carry a parity gap of roughly 0.2 for a model to pick
/// up. The prediction column is left at zero for a model to fill in.
/// Deterministic in `(n_rows, seed)`.
pub fn make_desk_data(n_rows: usize, seed_value: u64) -> Result<Dataset> {
    if n_rows == 0 {
        return Err(Error::Data("benchmark table needs at least one row".into()));
    }
    let mut rng = seed::rng(seed_value, &[]);
    let mut ds = Dataset::new(desk_schema());
    for _ in 0..n_rows {
        let a = u32::from(rng.random::<f64>() < 0.45);
        let age = pick(&mut rng, &[0.35, 0.40, 0.25]);
        let education = match age {
            0 => pick(&mut rng, &[0.35, 0.35, 0.25, 0.05]),
            1 => pick(&mut rng, &[0.25, 0.30, 0.30, 0.15]),
            _ => pick(&mut rng, &[0.30, 0.25, 0.30, 0.15]),
        };
        let contract = u32::from(rng.random::<f64>() < 0.60 + 0.15 * a as f64);
        let hours = if contract == 1 {
            pick(&mut rng, &[0.05, 0.15, 0.55, 0.25])
        } else {
            pick(&mut rng, &[0.45, 0.35, 0.15, 0.05])
        };
        let sector = match education {
            0 => pick(&mut rng, &[0.35, 0.30, 0.15, 0.05, 0.15]),
            1 => pick(&mut rng, &[0.25, 0.20, 0.25, 0.10, 0.20]),
            2 => pick(&mut rng, &[0.10, 0.10, 0.25, 0.35, 0.20]),
            _ => pick(&mut rng, &[0.05, 0.05, 0.25, 0.40, 0.25]),
        };
        let region = pick(&mut rng, &[0.30, 0.30, 0.20, 0.20]);
        let tenure = match age {
            0 => pick(&mut rng, &[0.60, 0.30, 0.10]),
            1 => pick(&mut rng, &[0.25, 0.45, 0.30]),
            _ => pick(&mut rng, &[0.15, 0.35, 0.50]),
        };
        let dependents = pick(&mut rng, &[0.40, 0.30, 0.30]);
        let logit = -1.4
            + 0.45 * education as f64
            + 0.50 * contract as f64
            + 0.30 * f64::from(hours >= 2)
            + 0.25 * tenure as f64
            + 0.90 * a as f64;
        let y = u32::from(rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp()));
        ds.push_row(&[
            age, hours, education, sector, region, tenure, contract, dependents, a, y, 0,
        ])?;
    }
    Ok(ds)
}

/// What a sweep varies.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Vary the privacy budget at a fixed release size.
    Epsilon(Vec<f64>),
    /// Vary the release size at a fixed budget.
    SampleSize(Vec<usize>),
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::Epsilon(_) => "epsilon",
            SweepAxis::SampleSize(_) => "sample_size",
        }
    }

    fn grid(&self) -> Vec<f64> {
        match self {
            SweepAxis::Epsilon(v) => v.clone(),
            SweepAxis::SampleSize(v) => v.iter().map(|&n| n as f64).collect(),
        }
    }
}

/// One estimation strategy a sweep can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMechanism {
    Grr,
    Synth,
    Blackbox,
}

impl std::fmt::Display for SweepMechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepMechanism::Grr => "grr",
            SweepMechanism::Synth => "synth",
            SweepMechanism::Blackbox => "blackbox",
        })
    }
}

impl std::str::FromStr for SweepMechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<SweepMechanism> {
        match s {
            "grr" => Ok(SweepMechanism::Grr),
            "synth" => Ok(SweepMechanism::Synth),
            "blackbox" => Ok(SweepMechanism::Blackbox),
            other => Err(Error::Protocol(format!("unknown sweep mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub mechanisms: Vec<SweepMechanism>,
    pub axis: SweepAxis,
    pub repetitions: usize,
    /// Budget used when the axis varies the sample size.
    pub epsilon: f64,
    /// Release size (and black-box query count) used when the axis varies
    /// the budget.
    pub n_prime: usize,
    pub epsilon_mode: EpsilonMode,
    /// Metrics to score; one output row per metric per run.
    pub metrics: Vec<MetricKind>,
    pub seed: u64,
}

/// One sweep cell: a single run of one mechanism at one grid point,
/// scored for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mechanism: SweepMechanism,
    pub axis: &'static str,
    pub axis_value: f64,
    pub repetition: u64,
    pub metric: MetricKind,
    pub estimate: Option<f64>,
    pub reference: Option<f64>,
    pub absolute_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// The unprivatized report every run is scored against.
    pub reference: FairnessReport,
}

#[allow(clippy::too_many_arguments)]
fn score(
    rows: &mut Vec<SweepRow>,
    metrics: &[MetricKind],
    reference: &FairnessReport,
    report: &FairnessReport,
    mechanism: SweepMechanism,
    axis: &'static str,
    axis_value: f64,
    repetition: u64,
) {
    for &metric in metrics {
        let estimate = report.metric(metric);
        let truth = reference.metric(metric);
        rows.push(SweepRow {
            mechanism,
            axis,
            axis_value,
            repetition,
            metric,
            estimate,
            reference: truth,
            absolute_error: estimate.zip(truth).map(|(e, t)| (e - t).abs()),
        });
    }
}

/// Replay the protocol over the configured grid. The reference report is
/// computed once from the audit data itself; every privatized (or
/// black-box) estimate is scored against it. Run `r` of mechanism `m` at
/// grid point `g` gets its own deterministic sub-seed, so cells are
/// independent and the whole sweep is reproducible.
pub fn run_sweep<C: Classifier>(
    config: &SweepConfig,
    audit_data: &Dataset,
    model: &C,
) -> Result<SweepResult> {
    if config.mechanisms.is_empty() {
        return Err(Error::Protocol("sweep needs at least one mechanism".into()));
    }
    if config.repetitions == 0 {
        return Err(Error::Protocol("sweep needs at least one repetition".into()));
    }
    if config.metrics.is_empty() {
        return Err(Error::Protocol("sweep needs at least one metric".into()));
    }
    let grid = config.axis.grid();
    if grid.is_empty() {
        return Err(Error::Protocol("sweep grid is empty".into()));
    }
    if grid.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Protocol(format!("sweep grid values must be positive, got {grid:?}")));
    }
    let axis = config.axis.label();
    let reference = reference_report(audit_data, model)?;
    let mut rows = Vec::new();
    for (m, &mechanism) in config.mechanisms.iter().enumerate() {
        for (g, &value) in grid.iter().enumerate() {
            let (epsilon, n_prime) = match config.axis {
                SweepAxis::Epsilon(_) => (value, config.n_prime),
                SweepAxis::SampleSize(_) => (config.epsilon, value as usize),
            };
            for rep in 0..config.repetitions {
                let cell_seed = seed::derive(config.seed, &[m as u64, g as u64, rep as u64]);
                let report = match mechanism {
                    SweepMechanism::Grr | SweepMechanism::Synth => {
                        let request = AuditRequest {
                            n_prime,
                            protected_attribute: audit_data.schema().attributes
                                [audit_data.schema().protected_index()]
                            .name
                            .clone(),
                            requested_metrics: config.metrics.clone(),
                            mechanism: if mechanism == SweepMechanism::Grr {
                                MechanismKind::Grr
                            } else {
                                MechanismKind::Synth
                            },
                            epsilon,
                        };
                        run_session(
                            &request,
                            audit_data,
                            model,
                            config.epsilon_mode,
                            "sweep",
                            cell_seed,
                        )?
                        .report
                    }
                    // The black-box baseline has no privacy knob: the
                    // budget axis leaves it untouched and only the query
                    // count matters.
                    SweepMechanism::Blackbox => blackbox_audit(
                        &BlackBoxConfig { query_count: n_prime, seed: cell_seed },
                        audit_data.schema(),
                        model,
                    )?,
                };
                score(
                    &mut rows,
                    &config.metrics,
                    &reference,
                    &report,
                    mechanism,
                    axis,
                    value,
                    rep as u64,
                );
            }
        }
    }
    Ok(SweepResult { rows, reference })
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render sweep rows as CSV, one line per (mechanism, grid point,
/// repetition, metric). Absent values are left empty.
pub fn sweep_csv_string(rows: &[SweepRow]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "mechanism",
        "axis",
        "axis_value",
        "repetition",
        "metric",
        "estimate",
        "reference",
        "absolute_error",
    ])?;
    for row in rows {
        writer.write_record([
            row.mechanism.to_string(),
            row.axis.to_string(),
            row.axis_value.to_string(),
            row.repetition.to_string(),
            row.metric.to_string(),
            optional(row.estimate),
            optional(row.reference),
            optional(row.absolute_error),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &std::path::Path) -> Result<()> {
    std::fs::write(path, sweep_csv_string(rows)?)?;
    Ok(())
}
