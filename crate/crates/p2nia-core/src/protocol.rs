//! The audit protocol: one request in, one release out.
//!
//! The auditor serializes an [`AuditRequest`]; the platform answers with
//! an [`AuditRelease`] produced by [`platform_respond`] (label the audit
//! data, privatize it, attach the mechanism parameters and the budget
//! ledger); the auditor turns the release into a [`FairnessReport`] with
//! [`auditor_evaluate`], which is pure post-processing and spends no
//! further budget. There is no second round trip: everything the auditor
//! needs to debias its estimates ships inside the release.
//!
//! A release travels as a single self-describing text document:
//!
//! ```text
//! #p2nia-release/1
//! #{"platform_id":...}      <- compact JSON metadata
//! age,sex,income,...        <- CSV payload, header first
//! ...
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ingest_csv_str, Dataset, Role, Schema};
use crate::error::{Error, Result};
use crate::mechanisms::{
    epsilon_serde, grr_debias_counts, grr_perturb, BudgetLedger, ColumnSelection, GrrChannel,
};
use crate::metrics::{fairness_report, joint_counts, Estimator, FairnessReport, MetricKind};
use crate::model::{predict, Classifier};
use crate::seed;
use crate::synth;

/// Which privatization the auditor asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    /// Per-column randomized response over the real rows.
    Grr,
    /// Rows sampled from a noisy generative model.
    Synth,
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<MechanismKind> {
        match s {
            "grr" => Ok(MechanismKind::Grr),
            "synth" => Ok(MechanismKind::Synth),
            other => Err(Error::Protocol(format!("unknown mechanism {other:?}"))),
        }
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MechanismKind::Grr => "grr",
            MechanismKind::Synth => "synth",
        })
    }
}

/// How the requested budget maps onto columns for randomized response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// Spend the full requested budget on every column.
    PerColumn,
    /// Divide the requested budget evenly across the columns.
    TotalSplit,
}

impl std::str::FromStr for EpsilonMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<EpsilonMode> {
        match s {
            "per-column" | "per_column" => Ok(EpsilonMode::PerColumn),
            "total-split" | "total_split" => Ok(EpsilonMode::TotalSplit),
            other => Err(Error::Protocol(format!("unknown epsilon mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EpsilonMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EpsilonMode::PerColumn => "per-column",
            EpsilonMode::TotalSplit => "total-split",
        })
    }
}

/// What the auditor asks the platform for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRequest {
    /// Number of privatized rows to release.
    pub n_prime: usize,
    /// Name of the protected attribute the audit conditions on.
    pub protected_attribute: String,
    pub requested_metrics: Vec<MetricKind>,
    pub mechanism: MechanismKind,
    #[serde(with = "epsilon_serde")]
    pub epsilon: f64,
}

impl AuditRequest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<AuditRequest> {
        let request: AuditRequest = serde_json::from_str(text)?;
        Ok(request)
    }

    pub fn write_json_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_json_file(path: &std::path::Path) -> Result<AuditRequest> {
        AuditRequest::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Channel parameters for one released column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnChannelMeta {
    pub name: String,
    pub k: usize,
    #[serde(with = "epsilon_serde")]
    pub epsilon: f64,
    /// Retention probability, included so the auditor can cross-check.
    pub p: f64,
}

/// Mechanism-specific release parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismMeta {
    Grr {
        epsilon_mode: EpsilonMode,
        columns: Vec<ColumnChannelMeta>,
    },
    Synth {
        fairness_share: f64,
        /// Attribute lists of every measured marginal, in plan order.
        marginals: Vec<Vec<String>>,
    },
}

/// Everything the auditor needs to interpret a release, shipped with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseMetadata {
    pub platform_id: String,
    pub protected_attribute: String,
    #[serde(with = "epsilon_serde")]
    pub epsilon_requested: f64,
    pub n_prime_requested: u64,
    /// True when the platform had fewer rows than requested and released
    /// everything it had.
    pub capped: bool,
    pub mechanism: MechanismMeta,
    pub schema: Schema,
    pub ledger: BudgetLedger,
    /// Hex SHA-256 commitment to the platform's session seed. The seed
    /// itself stays secret; publishing it would let anyone replay the
    /// noise and undo the privatization.
    pub seed_commitment: String,
    pub warnings: Vec<String>,
}

/// A privatized dataset plus the metadata describing how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRelease {
    pub metadata: ReleaseMetadata,
    pub dataset: Dataset,
}

const RELEASE_MAGIC: &str = "#p2nia-release/1";

impl AuditRelease {
    /// Render as the canonical release document. Byte-stable: the same
    /// release always renders identically.
    pub fn to_document(&self) -> Result<String> {
        let metadata = serde_json::to_string(&self.metadata)?;
        let csv = self.dataset.to_csv_string()?;
        Ok(format!("{RELEASE_MAGIC}\n#{metadata}\n{csv}"))
    }

    /// Parse a release document produced by [`AuditRelease::to_document`].
    pub fn from_document(text: &str) -> Result<AuditRelease> {
        let mut lines = text.splitn(3, '\n');
        let magic = lines.next().unwrap_or("");
        if magic.trim_end() != RELEASE_MAGIC {
            return Err(Error::Protocol(format!(
                "not a release document (first line {magic:?}, expected {RELEASE_MAGIC:?})"
            )));
        }
        let meta_line = lines
            .next()
            .ok_or_else(|| Error::Protocol("release document has no metadata line".into()))?;
        let meta_json = meta_line
            .strip_prefix('#')
            .ok_or_else(|| Error::Protocol("metadata line must start with '#'".into()))?;
        let metadata: ReleaseMetadata = serde_json::from_str(meta_json)
            .map_err(|e| Error::Protocol(format!("malformed release metadata: {e}")))?;
        let csv = lines
            .next()
            .ok_or_else(|| Error::Protocol("release document has no data section".into()))?;
        let dataset = ingest_csv_str(csv, &metadata.schema)?;
        Ok(AuditRelease { metadata, dataset })
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_document()?)?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<AuditRelease> {
        AuditRelease::from_document(&std::fs::read_to_string(path)?)
    }
}

fn commit_seed(seed_value: u64) -> String {
    let digest = Sha256::digest(seed_value.to_le_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Check an incoming request against the platform's audit data. Returns
/// the rejection reason if the platform should refuse.
fn validate_request(request: &AuditRequest, audit_data: &Dataset) -> Result<()> {
    if request.n_prime == 0 {
        return Err(Error::Rejected("requested sample size must be at least 1".into()));
    }
    if request.epsilon.is_nan() || request.epsilon <= 0.0 {
        return Err(Error::Rejected(format!(
            "requested budget must be positive, got {}",
            request.epsilon
        )));
    }
    if request.requested_metrics.is_empty() {
        return Err(Error::Rejected("no metrics requested".into()));
    }
    let mut seen = Vec::new();
    for metric in &request.requested_metrics {
        if seen.contains(metric) {
            return Err(Error::Rejected(format!("metric {metric} requested twice")));
        }
        seen.push(*metric);
    }
    let schema = audit_data.schema();
    let protected_name = &schema.attributes[schema.protected_index()].name;
    if &request.protected_attribute != protected_name {
        return Err(Error::Rejected(format!(
            "protected attribute {:?} does not match the platform's ({protected_name:?})",
            request.protected_attribute
        )));
    }
    if audit_data.n_rows() == 0 {
        return Err(Error::Rejected("the platform has no audit data".into()));
    }
    Ok(())
}

/// Draw `take` distinct row indices without replacement, returned in
/// original row order.
fn subsample_rows(n: usize, take: usize, seed_value: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed_value, &[]);
    for i in 0..take.min(n) {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut rows = order[..take.min(n)].to_vec();
    rows.sort_unstable();
    rows
}

/// The platform's half of the protocol: label the audit data with the
/// model under audit, privatize, and package the release.
///
/// Deterministic in `(request, audit_data, model, epsilon_mode,
/// platform_id, seed)`. The seed is the platform's secret; only its hash
/// is published.
pub fn platform_respond<C: Classifier>(
    request: &AuditRequest,
    audit_data: &Dataset,
    model: &C,
    epsilon_mode: EpsilonMode,
    platform_id: &str,
    seed_value: u64,
) -> Result<AuditRelease> {
    validate_request(request, audit_data)?;
    let labeled = predict(model, audit_data)?;
    let mut warnings = Vec::new();

    let (dataset, mechanism, ledger, capped) = match request.mechanism {
        MechanismKind::Grr => {
            let n = labeled.n_rows();
            let selected = if request.n_prime < n {
                let rows = subsample_rows(n, request.n_prime, seed::derive(seed_value, &[1]));
                labeled.select_rows(&rows)?
            } else {
                if request.n_prime > n {
                    warnings.push(format!(
                        "requested {} rows but only {n} are available; releasing all of them",
                        request.n_prime
                    ));
                }
                labeled.clone()
            };
            let epsilon_per_column = match epsilon_mode {
                EpsilonMode::PerColumn => request.epsilon,
                EpsilonMode::TotalSplit => request.epsilon / labeled.width() as f64,
            };
            let outcome = grr_perturb(
                &selected,
                epsilon_per_column,
                &ColumnSelection::All,
                seed::derive(seed_value, &[2]),
            )?;
            warnings.extend(outcome.warnings);
            let columns = outcome
                .channels
                .iter()
                .map(|(name, ch)| ColumnChannelMeta {
                    name: name.clone(),
                    k: ch.k,
                    epsilon: ch.epsilon,
                    p: ch.p,
                })
                .collect();
            let meta = MechanismMeta::Grr { epsilon_mode, columns };
            (outcome.dataset, meta, outcome.ledger, request.n_prime > n)
        }
        MechanismKind::Synth => {
            let plan = synth::plan_marginals(
                labeled.schema(),
                synth::DEFAULT_FEATURE_PAIRS,
                synth::DEFAULT_FAIRNESS_SHARE,
                seed::derive(seed_value, &[3]),
            )?;
            let generative =
                synth::fit(&labeled, &plan, request.epsilon, seed::derive(seed_value, &[4]))?;
            warnings.extend(generative.warnings.iter().cloned());
            let generated =
                synth::generate(&generative, request.n_prime, seed::derive(seed_value, &[5]))?;
            let mut marginals = plan.fairness.clone();
            marginals
                .extend(plan.feature_pairs.iter().map(|(a, b)| vec![a.clone(), b.clone()]));
            let meta = MechanismMeta::Synth { fairness_share: plan.fairness_share, marginals };
            (generated, meta, generative.ledger.clone(), false)
        }
    };

    Ok(AuditRelease {
        metadata: ReleaseMetadata {
            platform_id: platform_id.to_string(),
            protected_attribute: request.protected_attribute.clone(),
            epsilon_requested: request.epsilon,
            n_prime_requested: request.n_prime as u64,
            capped,
            mechanism,
            schema: labeled.schema().clone(),
            ledger,
            seed_commitment: commit_seed(seed_value),
            warnings,
        },
        dataset,
    })
}

/// Rebuild the channel for one audited column from the release metadata,
/// cross-checking the published retention probability.
fn rebuild_channel(metadata: &ReleaseMetadata, column: usize) -> Result<GrrChannel> {
    let MechanismMeta::Grr { columns, .. } = &metadata.mechanism else {
        return Err(Error::Protocol("release does not carry channel parameters".into()));
    };
    let attr = &metadata.schema.attributes[column];
    let meta = columns
        .iter()
        .find(|c| c.name == attr.name)
        .ok_or_else(|| {
            Error::Protocol(format!("no channel parameters for column {:?}", attr.name))
        })?;
    if meta.k != attr.cardinality() {
        return Err(Error::Protocol(format!(
            "channel for {:?} says {} categories, schema says {}",
            attr.name,
            meta.k,
            attr.cardinality()
        )));
    }
    let channel = GrrChannel::new(meta.epsilon, meta.k)?;
    if (channel.p - meta.p).abs() > 1e-9 {
        return Err(Error::Protocol(format!(
            "inconsistent channel for {:?}: published p = {}, implied p = {}",
            attr.name, meta.p, channel.p
        )));
    }
    Ok(channel)
}

/// The auditor's half of the protocol: turn a release into fairness
/// estimates. Pure post-processing of published data; the release (and
/// its ledger) is read-only here, so no additional budget is spent.
pub fn auditor_evaluate(release: &AuditRelease, request: &AuditRequest) -> Result<FairnessReport> {
    if release.metadata.protected_attribute != request.protected_attribute {
        return Err(Error::Protocol(format!(
            "release audits {:?} but the request named {:?}",
            release.metadata.protected_attribute, request.protected_attribute
        )));
    }
    let counts = joint_counts(&release.dataset);
    match &release.metadata.mechanism {
        MechanismMeta::Grr { .. } => {
            let schema = &release.metadata.schema;
            let channels = [
                rebuild_channel(&release.metadata, schema.protected_index())?,
                rebuild_channel(&release.metadata, schema.target_index())?,
                rebuild_channel(&release.metadata, schema.prediction_index())?,
            ];
            let (debiased, warnings) = grr_debias_counts(&counts, &channels)?;
            let mut report = fairness_report(&debiased, Estimator::GrrDebiased)?;
            report.notes.extend(warnings);
            Ok(report)
        }
        MechanismMeta::Synth { .. } => fairness_report(&counts, Estimator::Synthetic),
    }
}

/// Public facts a platform advertises about itself, enough for an
/// auditor to compose a valid request: the schema (column names, labels,
/// roles) is treated as public metadata throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformInfo {
    pub platform_id: String,
    pub protected_attribute: String,
    pub n_rows: u64,
    pub epsilon_mode: EpsilonMode,
    pub schema: Schema,
}

/// Configuration of the conventional baseline: query the model directly
/// on auditor-generated inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxConfig {
    pub query_count: usize,
    pub seed: u64,
}

/// Audit by querying the model on synthetic inputs drawn uniformly per
/// attribute (the auditor has no access to the platform's data, so it
/// must invent a query distribution; uniform is the conventional naive
/// choice, and any mismatch with the real input distribution biases the
/// estimate).
pub fn blackbox_audit<C: Classifier + ?Sized>(
    config: &BlackBoxConfig,
    schema: &Schema,
    model: &C,
) -> Result<FairnessReport> {
    if config.query_count == 0 {
        return Err(Error::Data("black-box audit needs at least one query".into()));
    }
    let mut rng = seed::rng(config.seed, &[]);
    let mut queries = Dataset::new(schema.clone());
    let width = schema.width();
    let mut row = vec![0u32; width];
    for _ in 0..config.query_count {
        for (c, attr) in schema.attributes.iter().enumerate() {
            row[c] = match attr.role {
                Role::Prediction => 0,
                _ => rng.random_range(0..attr.cardinality() as u32),
            };
        }
        queries.push_row(&row)?;
    }
    model.label(&mut queries)?;
    let mut report = fairness_report(&joint_counts(&queries), Estimator::Blackbox)?;
    report.notes.push(
        "outcome column was sampled uniformly at random; outcome-conditioned metrics are not \
         meaningful"
            .to_string(),
    );
    Ok(report)
}

/// The ground-truth side: label held-out rows with the model and tally
/// directly, with no privacy in the way. This is what the privatized
/// estimates are compared against.
pub fn reference_report<C: Classifier + ?Sized>(
    test_data: &Dataset,
    model: &C,
) -> Result<FairnessReport> {
    let labeled = predict(model, test_data)?;
    fairness_report(&joint_counts(&labeled), Estimator::Empirical)
}

/// A full protocol run: request in, release and report out.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub release: AuditRelease,
    pub report: FairnessReport,
    /// Number of request/release round trips. Always 1: the protocol is
    /// non-interactive by construction.
    pub exchanges: u32,
}

/// Run one complete audit session between an in-process platform and
/// auditor.
pub fn run_session<C: Classifier>(
    request: &AuditRequest,
    audit_data: &Dataset,
    model: &C,
    epsilon_mode: EpsilonMode,
    platform_id: &str,
    seed_value: u64,
) -> Result<SessionOutcome> {
    let release = platform_respond(request, audit_data, model, epsilon_mode, platform_id, seed_value)?;
    let report = auditor_evaluate(&release, request)?;
    Ok(SessionOutcome { release, report, exchanges: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AttributeSpec;
    use crate::metrics::demographic_parity;
    use crate::model::train;

    fn test_schema() -> Schema {
        Schema::new(vec![
            AttributeSpec::categorical("x1", Role::Feature, &["p", "q", "r"]),
            AttributeSpec::categorical("x2", Role::Feature, &["s", "t"]),
            AttributeSpec::categorical("sex", Role::Protected, &["m", "f"]),
            AttributeSpec::categorical("income", Role::Target, &["low", "high"]),
            AttributeSpec::categorical("income_pred", Role::Prediction, &["low", "high"]),
        ])
        .unwrap()
    }

    /// Rows with group-dependent outcome rates, so a trained model shows a
    /// clear parity gap.
    fn planted_dataset(n: usize, seed_value: u64) -> Dataset {
        let mut ds = Dataset::new(test_schema());
        let mut rng = seed::rng_raw(seed_value);
        for _ in 0..n {
            let a = u32::from(rng.random::<f64>() < 0.5);
            let x1 = rng.random_range(0..3u32);
            let x2 = rng.random_range(0..2u32);
            let base = 0.15 + 0.2 * x1 as f64 + 0.1 * x2 as f64;
            let rate = if a == 1 { base } else { (base + 0.35).min(0.95) };
            let y = u32::from(rng.random::<f64>() < rate);
            ds.push_row(&[x1, x2, a, y, 0]).unwrap();
        }
        ds
    }

    fn grr_request(n_prime: usize, epsilon: f64) -> AuditRequest {
        AuditRequest {
            n_prime,
            protected_attribute: "sex".into(),
            requested_metrics: MetricKind::ALL.to_vec(),
            mechanism: MechanismKind::Grr,
            epsilon,
        }
    }

    #[test]
    fn grr_release_has_expected_shape() {
        let audit = planted_dataset(2000, 1);
        let model = train(&planted_dataset(4000, 2)).unwrap();
        let request = grr_request(500, 10.0);
        let release =
            platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "acme", 7).unwrap();
        assert_eq!(release.dataset.n_rows(), 500);
        assert!(!release.metadata.capped);
        assert_eq!(release.metadata.platform_id, "acme");
        assert_eq!(release.metadata.n_prime_requested, 500);
        let MechanismMeta::Grr { columns, epsilon_mode } = &release.metadata.mechanism else {
            panic!("expected grr metadata");
        };
        assert_eq!(*epsilon_mode, EpsilonMode::PerColumn);
        assert_eq!(columns.len(), 5);
        assert!(columns.iter().all(|c| (c.epsilon - 10.0).abs() < 1e-12));
        // Five columns at eps = 10 each.
        assert!((release.metadata.ledger.total() - 50.0).abs() < 1e-12);
        assert_eq!(release.metadata.seed_commitment.len(), 64);
    }

    #[test]
    fn total_split_divides_the_budget() {
        let audit = planted_dataset(1000, 3);
        let model = train(&planted_dataset(1000, 4)).unwrap();
        let request = grr_request(200, 10.0);
        let release =
            platform_respond(&request, &audit, &model, EpsilonMode::TotalSplit, "acme", 8)
                .unwrap();
        let MechanismMeta::Grr { columns, .. } = &release.metadata.mechanism else {
            panic!("expected grr metadata");
        };
        assert!(columns.iter().all(|c| (c.epsilon - 2.0).abs() < 1e-12));
        assert!((release.metadata.ledger.total() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_requests_are_capped_with_a_warning() {
        let audit = planted_dataset(300, 5);
        let model = train(&planted_dataset(1000, 6)).unwrap();
        let request = grr_request(1000, 5.0);
        let release =
            platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "acme", 9).unwrap();
        assert_eq!(release.dataset.n_rows(), 300);
        assert!(release.metadata.capped);
        assert!(release.metadata.warnings.iter().any(|w| w.contains("only 300")));
    }

    #[test]
    fn infinite_budget_release_matches_reference_exactly() {
        let audit = planted_dataset(1500, 10);
        let model = train(&planted_dataset(3000, 11)).unwrap();
        let request = grr_request(1500, f64::INFINITY);
        let outcome =
            run_session(&request, &audit, &model, EpsilonMode::PerColumn, "acme", 12).unwrap();
        let reference = reference_report(&audit, &model).unwrap();
        assert_eq!(outcome.report.demographic_parity, reference.demographic_parity);
        assert_eq!(outcome.report.equalized_odds, reference.equalized_odds);
        assert_eq!(
            outcome.report.equality_of_opportunity,
            reference.equality_of_opportunity
        );
        assert_eq!(outcome.report.n_effective, reference.n_effective);
        assert_eq!(outcome.exchanges, 1);
    }

    #[test]
    fn debiased_estimate_lands_near_reference() {
        let audit = planted_dataset(5000, 13);
        let model = train(&planted_dataset(10_000, 14)).unwrap();
        let reference = reference_report(&audit, &model).unwrap().demographic_parity.unwrap();
        let request = grr_request(5000, 10.0);
        let outcome =
            run_session(&request, &audit, &model, EpsilonMode::PerColumn, "acme", 15).unwrap();
        let estimate = outcome.report.demographic_parity.unwrap();
        assert!(
            (estimate - reference).abs() < 0.05,
            "estimate {estimate} vs reference {reference}"
        );
        assert_eq!(outcome.report.estimator, Estimator::GrrDebiased);
    }

    #[test]
    fn synth_release_spends_exactly_the_requested_budget() {
        let audit = planted_dataset(3000, 16);
        let model = train(&planted_dataset(3000, 17)).unwrap();
        let request = AuditRequest {
            n_prime: 4000,
            protected_attribute: "sex".into(),
            requested_metrics: vec![MetricKind::DemographicParity],
            mechanism: MechanismKind::Synth,
            epsilon: 10.0,
        };
        let outcome =
            run_session(&request, &audit, &model, EpsilonMode::PerColumn, "acme", 18).unwrap();
        // Synthetic rows are not capped by the source size.
        assert_eq!(outcome.release.dataset.n_rows(), 4000);
        assert!(!outcome.release.metadata.capped);
        assert_eq!(outcome.release.metadata.ledger.total(), 10.0);
        let MechanismMeta::Synth { marginals, .. } = &outcome.release.metadata.mechanism else {
            panic!("expected synth metadata");
        };
        // Four fairness marginals plus C(2,2) = 1 feature pair.
        assert_eq!(marginals.len(), 5);
        assert_eq!(outcome.report.estimator, Estimator::Synthetic);
        let reference = reference_report(&audit, &model).unwrap().demographic_parity.unwrap();
        let estimate = outcome.report.demographic_parity.unwrap();
        assert!(
            (estimate - reference).abs() < 0.1,
            "estimate {estimate} vs reference {reference}"
        );
    }

    #[test]
    fn responses_are_deterministic_in_the_seed() {
        let audit = planted_dataset(800, 20);
        let model = train(&planted_dataset(800, 21)).unwrap();
        for mechanism in [MechanismKind::Grr, MechanismKind::Synth] {
            let request = AuditRequest {
                n_prime: 500,
                protected_attribute: "sex".into(),
                requested_metrics: MetricKind::ALL.to_vec(),
                mechanism,
                epsilon: 3.0,
            };
            let r1 = platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "x", 22)
                .unwrap();
            let r2 = platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "x", 22)
                .unwrap();
            assert_eq!(r1.to_document().unwrap(), r2.to_document().unwrap());
            let r3 = platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "x", 23)
                .unwrap();
            assert_ne!(r1.dataset, r3.dataset, "mechanism {mechanism}");
        }
    }

    #[test]
    fn evaluation_spends_no_budget_and_is_repeatable() {
        let audit = planted_dataset(1000, 24);
        let model = train(&planted_dataset(1000, 25)).unwrap();
        let request = grr_request(800, 4.0);
        let release =
            platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "x", 26).unwrap();
        let ledger_before = release.metadata.ledger.clone();
        let report1 = auditor_evaluate(&release, &request).unwrap();
        let report2 = auditor_evaluate(&release, &request).unwrap();
        assert_eq!(report1, report2);
        assert_eq!(release.metadata.ledger, ledger_before);
    }

    #[test]
    fn requests_are_validated() {
        let audit = planted_dataset(100, 27);
        let model = train(&planted_dataset(100, 28)).unwrap();
        let respond = |request: &AuditRequest| {
            platform_respond(request, &audit, &model, EpsilonMode::PerColumn, "x", 0)
        };
        let mut bad = grr_request(0, 1.0);
        assert!(matches!(respond(&bad), Err(Error::Rejected(_))));
        bad = grr_request(10, 0.0);
        assert!(matches!(respond(&bad), Err(Error::Rejected(_))));
        bad = grr_request(10, -2.0);
        assert!(matches!(respond(&bad), Err(Error::Rejected(_))));
        bad = grr_request(10, 1.0);
        bad.protected_attribute = "age".into();
        assert!(matches!(respond(&bad), Err(Error::Rejected(_))));
        bad = grr_request(10, 1.0);
        bad.requested_metrics.clear();
        assert!(matches!(respond(&bad), Err(Error::Rejected(_))));
        bad = grr_request(10, 1.0);
        bad.requested_metrics = vec![MetricKind::DemographicParity, MetricKind::DemographicParity];
        assert!(matches!(respond(&bad), Err(Error::Rejected(_))));
    }

    #[test]
    fn release_document_round_trips_byte_for_byte() {
        let audit = planted_dataset(400, 29);
        let model = train(&planted_dataset(400, 30)).unwrap();
        let request = grr_request(300, 2.0);
        let release =
            platform_respond(&request, &audit, &model, EpsilonMode::TotalSplit, "acme", 31)
                .unwrap();
        let doc = release.to_document().unwrap();
        let parsed = AuditRelease::from_document(&doc).unwrap();
        assert_eq!(parsed, release);
        assert_eq!(parsed.to_document().unwrap(), doc);
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(
            AuditRelease::from_document("not a release"),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            AuditRelease::from_document("#p2nia-release/1\n"),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            AuditRelease::from_document("#p2nia-release/1\n#{\"junk\": true}\nx\n"),
            Err(Error::Protocol(_))
        ));
        // Valid structure, tampered payload value.
        let audit = planted_dataset(50, 32);
        let model = train(&planted_dataset(50, 33)).unwrap();
        let release = platform_respond(
            &grr_request(20, 1.0),
            &audit,
            &model,
            EpsilonMode::PerColumn,
            "x",
            34,
        )
        .unwrap();
        let doc = release.to_document().unwrap();
        let mut lines: Vec<&str> = doc.lines().collect();
        let tampered = format!("zzz{}", &lines[3][1..]);
        lines[3] = &tampered;
        assert!(AuditRelease::from_document(&lines.join("\n")).is_err());
    }

    #[test]
    fn tampered_channel_parameters_are_caught() {
        let audit = planted_dataset(200, 35);
        let model = train(&planted_dataset(200, 36)).unwrap();
        let request = grr_request(100, 2.0);
        let mut release =
            platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "x", 37).unwrap();
        if let MechanismMeta::Grr { columns, .. } = &mut release.metadata.mechanism {
            columns[0].p = 0.5;
        }
        // The tampered column is a feature, so debiasing (a, y, yhat)
        // never touches it; tamper with the protected column instead.
        if let MechanismMeta::Grr { columns, .. } = &mut release.metadata.mechanism {
            for c in columns.iter_mut() {
                if c.name == "sex" {
                    c.p = 0.6;
                }
            }
        }
        let err = auditor_evaluate(&release, &request).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert!(err.to_string().contains("sex"));
    }

    #[test]
    fn mismatched_request_and_release_are_rejected() {
        let audit = planted_dataset(200, 38);
        let model = train(&planted_dataset(200, 39)).unwrap();
        let request = grr_request(100, 2.0);
        let release =
            platform_respond(&request, &audit, &model, EpsilonMode::PerColumn, "x", 40).unwrap();
        let mut other = request.clone();
        other.protected_attribute = "different".into();
        assert!(matches!(
            auditor_evaluate(&release, &other),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn request_json_round_trips_including_infinity() {
        let request = AuditRequest {
            n_prime: 5000,
            protected_attribute: "sex".into(),
            requested_metrics: vec![MetricKind::DemographicParity, MetricKind::EqualizedOdds],
            mechanism: MechanismKind::Synth,
            epsilon: f64::INFINITY,
        };
        let json = request.to_json().unwrap();
        let back = AuditRequest::from_json(&json).unwrap();
        assert_eq!(request, back);
        assert!(json.contains("\"inf\""));
        assert!(json.contains("\"synth\""));
    }

    #[test]
    fn blackbox_with_group_blind_model_shows_no_gap() {
        // Training data where the protected bit is exactly balanced within
        // every stratum: the learned conditionals for it are uniform, so
        // predictions are independent of the group and uniform queries
        // measure a parity gap near zero.
        let mut ds = Dataset::new(test_schema());
        for x1 in 0..3u32 {
            for x2 in 0..2u32 {
                for a in 0..2u32 {
                    for _ in 0..10 {
                        let y = u32::from(x1 == 2);
                        ds.push_row(&[x1, x2, a, y, 0]).unwrap();
                    }
                }
            }
        }
        let model = train(&ds).unwrap();
        let report = blackbox_audit(
            &BlackBoxConfig { query_count: 20_000, seed: 41 },
            ds.schema(),
            &model,
        )
        .unwrap();
        let dp = report.demographic_parity.unwrap();
        assert!(dp < 0.02, "group-blind model showed dp {dp}");
        assert_eq!(report.estimator, Estimator::Blackbox);
    }

    #[test]
    fn blackbox_with_wrong_query_distribution_is_badly_biased() {
        // Uniform queries against the analytic world's model: the real
        // baseline world has gap 0, but uniform inputs put half their
        // mass on the branch that copies the group bit, measuring 1/2.
        let schema = crate::bias::world_schema();
        let model = crate::bias::WorldModel;
        let report = blackbox_audit(
            &BlackBoxConfig { query_count: 50_000, seed: 42 },
            &schema,
            &model,
        )
        .unwrap();
        let dp = report.demographic_parity.unwrap();
        assert!((dp - 0.5).abs() < 0.01, "uniform-query dp {dp}");
        let truth = crate::bias::ShiftedWorld::new(0.0).unwrap().analytic_gap();
        assert!((dp - truth).abs() >= 0.25);
    }

    #[test]
    fn blackbox_determinism_and_validation() {
        let audit = planted_dataset(500, 43);
        let model = train(&audit).unwrap();
        let config = BlackBoxConfig { query_count: 1000, seed: 44 };
        let r1 = blackbox_audit(&config, audit.schema(), &model).unwrap();
        let r2 = blackbox_audit(&config, audit.schema(), &model).unwrap();
        assert_eq!(r1, r2);
        assert!(blackbox_audit(
            &BlackBoxConfig { query_count: 0, seed: 0 },
            audit.schema(),
            &model
        )
        .is_err());
    }

    #[test]
    fn reference_report_is_the_plain_empirical_tally() {
        let audit = planted_dataset(2000, 45);
        let model = train(&planted_dataset(2000, 46)).unwrap();
        let report = reference_report(&audit, &model).unwrap();
        let labeled = predict(&model, &audit).unwrap();
        let dp = demographic_parity(&joint_counts(&labeled)).unwrap();
        assert_eq!(report.demographic_parity, Some(dp));
        assert_eq!(report.estimator, Estimator::Empirical);
        assert_eq!(report.n_effective, 2000);
    }
}
