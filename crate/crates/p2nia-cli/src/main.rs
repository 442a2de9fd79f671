//! `p2nia`: command-line front end for privacy-preserving fairness audits.
//!
//! The subcommands cover both sides of the protocol plus the surrounding
//! workflow: fabricate benchmark data, train and apply the model under
//! audit, produce a privatized release (`privatize`), evaluate one
//! (`audit`, offline from a file or online against a platform server),
//! run the conventional query baseline (`blackbox`), and reproduce the
//! experiment tables (`bias-demo`, `sweep`). `serve` runs the platform
//! service itself, making the CLI a client of the same HTTP surface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/configuration error,
//! 3 protocol or mechanism error.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use p2nia_client::PlatformClient;
use p2nia_core::bias::shift_demo;
use p2nia_core::data::{ingest_csv, split, Dataset, Schema};
use p2nia_core::experiment::{
    make_desk_data, run_sweep, write_sweep_csv, SweepAxis, SweepConfig, SweepMechanism,
};
use p2nia_core::mechanisms::parse_epsilon;
use p2nia_core::metrics::MetricKind;
use p2nia_core::model::{train, NaiveBayesModel};
use p2nia_core::protocol::{
    auditor_evaluate, blackbox_audit, platform_respond, AuditRelease, AuditRequest,
    BlackBoxConfig, EpsilonMode, MechanismKind, MechanismMeta,
};
use p2nia_core::{Error, Result};

#[derive(Parser)]
#[command(name = "p2nia", version, about = "Privacy-preserving, non-interactive fairness audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fabricate the synthetic benchmark table (CSV plus schema sidecar).
    MakeDeskData(MakeDeskDataArgs),
    /// Train the model under audit on a split of a dataset.
    Train(TrainArgs),
    /// Fill a dataset's prediction column using a trained model.
    Label(LabelArgs),
    /// Platform side: answer an audit request with a privatized release.
    Privatize(PrivatizeArgs),
    /// Auditor side: turn a release into debiased fairness estimates.
    Audit(AuditArgs),
    /// Conventional baseline: audit by querying the model directly.
    Blackbox(BlackboxArgs),
    /// Reproduce the distribution-shift error table for query audits.
    BiasDemo(BiasDemoArgs),
    /// Replay the protocol over a grid of budgets or sample sizes.
    Sweep(SweepArgs),
    /// Run the platform as an HTTP service.
    Serve(ServeArgs),
}

fn epsilon_arg(s: &str) -> std::result::Result<f64, String> {
    parse_epsilon(s).map_err(|e| e.to_string())
}

fn metric_arg(s: &str) -> std::result::Result<MetricKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn mechanism_arg(s: &str) -> std::result::Result<MechanismKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn epsilon_mode_arg(s: &str) -> std::result::Result<EpsilonMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn sweep_mechanism_arg(s: &str) -> std::result::Result<SweepMechanism, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_dataset(dataset: &Path, schema: &Path) -> Result<Dataset> {
    let schema = Schema::read_json_file(schema)?;
    ingest_csv(dataset, &schema)
}

/// Write to the path, or to stdout when no path was given.
fn write_out(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

#[derive(Args)]
struct MakeDeskDataArgs {
    /// Number of rows to generate.
    #[arg(long, env = "P2NIA_ROWS", default_value_t = 25_000)]
    rows: usize,
    #[arg(long, env = "P2NIA_SEED", default_value_t = 0)]
    seed: u64,
    /// Directory for desk.csv and desk.schema.json.
    #[arg(long, env = "P2NIA_OUT_DIR")]
    out_dir: PathBuf,
}

impl MakeDeskDataArgs {
    fn run(self) -> Result<()> {
        let dataset = make_desk_data(self.rows, self.seed)?;
        std::fs::create_dir_all(&self.out_dir)?;
        let csv_path = self.out_dir.join("desk.csv");
        let schema_path = self.out_dir.join("desk.schema.json");
        dataset.write_csv(&csv_path)?;
        dataset.schema().write_json_file(&schema_path)?;
        eprintln!("wrote {} rows to {}", self.rows, csv_path.display());
        eprintln!("wrote schema to {}", schema_path.display());
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, env = "P2NIA_DATASET")]
    dataset: PathBuf,
    #[arg(long, env = "P2NIA_SCHEMA")]
    schema: PathBuf,
    /// Fraction of rows used for training; the rest is held out.
    #[arg(long, env = "P2NIA_TRAIN_FRACTION", default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, env = "P2NIA_SEED", default_value_t = 0)]
    seed: u64,
    /// Where to write the model artifact.
    #[arg(long, env = "P2NIA_MODEL_OUT")]
    model_out: PathBuf,
    /// Optionally write the held-out rows for later auditing.
    #[arg(long, env = "P2NIA_TEST_OUT")]
    test_out: Option<PathBuf>,
}

impl TrainArgs {
    fn run(self) -> Result<()> {
        let dataset = load_dataset(&self.dataset, &self.schema)?;
        let (train_part, test_part) = split(&dataset, self.train_fraction, self.seed)?;
        let model = train(&train_part)?;
        for warning in &model.warnings {
            eprintln!("warning: {warning}");
        }
        model.write_json_file(&self.model_out)?;
        eprintln!(
            "trained on {} rows, wrote model to {}",
            train_part.n_rows(),
            self.model_out.display()
        );
        if let Some(test_out) = &self.test_out {
            test_part.write_csv(test_out)?;
            eprintln!("wrote {} held-out rows to {}", test_part.n_rows(), test_out.display());
        }
        Ok(())
    }
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long, env = "P2NIA_DATASET")]
    dataset: PathBuf,
    #[arg(long, env = "P2NIA_SCHEMA")]
    schema: PathBuf,
    #[arg(long, env = "P2NIA_MODEL")]
    model: PathBuf,
    #[arg(long, env = "P2NIA_OUT")]
    out: PathBuf,
}

impl LabelArgs {
    fn run(self) -> Result<()> {
        let dataset = load_dataset(&self.dataset, &self.schema)?;
        let model = NaiveBayesModel::read_json_file(&self.model)?;
        let labeled = p2nia_core::model::predict(&model, &dataset)?;
        labeled.write_csv(&self.out)?;
        eprintln!("labeled {} rows into {}", labeled.n_rows(), self.out.display());
        Ok(())
    }
}

#[derive(Args)]
struct PrivatizeArgs {
    /// Audit data (the prediction column is filled by the model).
    #[arg(long, env = "P2NIA_DATASET")]
    dataset: PathBuf,
    #[arg(long, env = "P2NIA_SCHEMA")]
    schema: PathBuf,
    #[arg(long, env = "P2NIA_MODEL")]
    model: PathBuf,
    #[arg(long, env = "P2NIA_MECHANISM", value_parser = mechanism_arg)]
    mechanism: MechanismKind,
    #[arg(long, env = "P2NIA_EPSILON", value_parser = epsilon_arg)]
    epsilon: f64,
    #[arg(long, env = "P2NIA_EPSILON_MODE", value_parser = epsilon_mode_arg, default_value = "per-column")]
    epsilon_mode: EpsilonMode,
    /// Number of privatized rows to release.
    #[arg(long, env = "P2NIA_N_PRIME")]
    n_prime: usize,
    /// Protected attribute to audit; defaults to the schema's.
    #[arg(long, env = "P2NIA_PROTECTED")]
    protected: Option<String>,
    #[arg(long, env = "P2NIA_METRICS", value_delimiter = ',', value_parser = metric_arg,
          default_values_t = MetricKind::ALL)]
    metrics: Vec<MetricKind>,
    #[arg(long, env = "P2NIA_PLATFORM_ID", default_value = "local")]
    platform_id: String,
    #[arg(long, env = "P2NIA_SEED", default_value_t = 0)]
    seed: u64,
    /// Release document path; stdout when omitted.
    #[arg(long, env = "P2NIA_OUT")]
    out: Option<PathBuf>,
}

impl PrivatizeArgs {
    fn run(self) -> Result<()> {
        let dataset = load_dataset(&self.dataset, &self.schema)?;
        let model = NaiveBayesModel::read_json_file(&self.model)?;
        let schema = dataset.schema();
        let protected = self
            .protected
            .unwrap_or_else(|| schema.attributes[schema.protected_index()].name.clone());
        let request = AuditRequest {
            n_prime: self.n_prime,
            protected_attribute: protected,
            requested_metrics: self.metrics,
            mechanism: self.mechanism,
            epsilon: self.epsilon,
        };
        let release = platform_respond(
            &request,
            &dataset,
            &model,
            self.epsilon_mode,
            &self.platform_id,
            self.seed,
        )?;
        for warning in &release.metadata.warnings {
            eprintln!("warning: {warning}");
        }
        write_out(self.out.as_deref(), &release.to_document()?)?;
        if let Some(out) = &self.out {
            eprintln!(
                "released {} rows (budget spent: {}) to {}",
                release.dataset.n_rows(),
                release.metadata.ledger.total(),
                out.display()
            );
        }
        Ok(())
    }
}

/// Rebuild the request a release answered, for offline evaluation when
/// the original request file is not at hand.
fn request_from_release(release: &AuditRelease) -> AuditRequest {
    AuditRequest {
        n_prime: release.metadata.n_prime_requested as usize,
        protected_attribute: release.metadata.protected_attribute.clone(),
        requested_metrics: MetricKind::ALL.to_vec(),
        mechanism: match release.metadata.mechanism {
            MechanismMeta::Grr { .. } => MechanismKind::Grr,
            MechanismMeta::Synth { .. } => MechanismKind::Synth,
        },
        epsilon: release.metadata.epsilon_requested,
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["release", "server"])))]
struct AuditArgs {
    /// Evaluate a release document from a file.
    #[arg(long, env = "P2NIA_RELEASE")]
    release: Option<PathBuf>,
    /// Original request JSON, to cross-check the release against.
    #[arg(long, env = "P2NIA_REQUEST", conflicts_with = "server")]
    request: Option<PathBuf>,
    /// Request a fresh release from a platform server.
    #[arg(long, env = "P2NIA_SERVER")]
    server: Option<String>,
    #[arg(long, env = "P2NIA_MECHANISM", value_parser = mechanism_arg,
          required_unless_present = "release")]
    mechanism: Option<MechanismKind>,
    #[arg(long, env = "P2NIA_EPSILON", value_parser = epsilon_arg,
          required_unless_present = "release")]
    epsilon: Option<f64>,
    #[arg(long, env = "P2NIA_N_PRIME", required_unless_present = "release")]
    n_prime: Option<usize>,
    /// Protected attribute; defaults to what the platform advertises.
    #[arg(long, env = "P2NIA_PROTECTED", conflicts_with = "release")]
    protected: Option<String>,
    #[arg(long, env = "P2NIA_METRICS", value_delimiter = ',', value_parser = metric_arg,
          default_values_t = MetricKind::ALL)]
    metrics: Vec<MetricKind>,
    /// Save the fetched release document as well.
    #[arg(long, env = "P2NIA_RELEASE_OUT", conflicts_with = "release")]
    release_out: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long, env = "P2NIA_OUT")]
    out: Option<PathBuf>,
}

impl AuditArgs {
    fn run(self) -> Result<()> {
        let (release, request) = if let Some(release_path) = &self.release {
            let release = AuditRelease::read_file(release_path)?;
            let request = match &self.request {
                Some(path) => AuditRequest::read_json_file(path)?,
                None => request_from_release(&release),
            };
            (release, request)
        } else {
            let server = self.server.as_deref().expect("clap enforces the source group");
            let client = PlatformClient::new(server)?;
            let info = client.info()?;
            let request = AuditRequest {
                n_prime: self.n_prime.expect("required without --release"),
                protected_attribute: self
                    .protected
                    .clone()
                    .unwrap_or(info.protected_attribute),
                requested_metrics: self.metrics.clone(),
                mechanism: self.mechanism.expect("required without --release"),
                epsilon: self.epsilon.expect("required without --release"),
            };
            let release = client.audit(&request)?;
            if let Some(path) = &self.release_out {
                release.write_file(path)?;
                eprintln!("saved release to {}", path.display());
            }
            (release, request)
        };
        let report = auditor_evaluate(&release, &request)?;
        write_out(self.out.as_deref(), &report.to_text())
    }
}

#[derive(Args)]
struct BlackboxArgs {
    #[arg(long, env = "P2NIA_SCHEMA")]
    schema: PathBuf,
    #[arg(long, env = "P2NIA_MODEL")]
    model: PathBuf,
    /// Number of model queries.
    #[arg(long, env = "P2NIA_QUERIES", default_value_t = 10_000)]
    queries: usize,
    #[arg(long, env = "P2NIA_SEED", default_value_t = 0)]
    seed: u64,
    /// Report path; stdout when omitted.
    #[arg(long, env = "P2NIA_OUT")]
    out: Option<PathBuf>,
}

impl BlackboxArgs {
    fn run(self) -> Result<()> {
        let schema = Schema::read_json_file(&self.schema)?;
        let model = NaiveBayesModel::read_json_file(&self.model)?;
        let report = blackbox_audit(
            &BlackBoxConfig { query_count: self.queries, seed: self.seed },
            &schema,
            &model,
        )?;
        write_out(self.out.as_deref(), &report.to_text())
    }
}

#[derive(Args)]
struct BiasDemoArgs {
    /// Distribution-shift magnitudes to evaluate.
    #[arg(long, env = "P2NIA_ALPHAS", value_delimiter = ',',
          default_values_t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])]
    alphas: Vec<f64>,
    /// Sample size per shift point.
    #[arg(long, env = "P2NIA_N", default_value_t = 20_000)]
    n: usize,
    #[arg(long, env = "P2NIA_SEED", default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when omitted.
    #[arg(long, env = "P2NIA_OUT")]
    out: Option<PathBuf>,
}

impl BiasDemoArgs {
    fn run(self) -> Result<()> {
        let points = shift_demo(&self.alphas, self.n, self.seed)?;
        let mut csv = String::from("alpha,analytic_gap,empirical_error,n\n");
        for p in &points {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                p.alpha, p.analytic_gap, p.empirical_error, p.n
            ));
        }
        write_out(self.out.as_deref(), &csv)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Epsilon,
    SampleSize,
}

#[derive(Args)]
struct SweepArgs {
    /// Audit data the sweep replays the protocol on.
    #[arg(long, env = "P2NIA_DATASET")]
    dataset: PathBuf,
    #[arg(long, env = "P2NIA_SCHEMA")]
    schema: PathBuf,
    #[arg(long, env = "P2NIA_MODEL")]
    model: PathBuf,
    #[arg(long, env = "P2NIA_MECHANISMS", value_delimiter = ',', value_parser = sweep_mechanism_arg,
          default_values_t = [SweepMechanism::Grr, SweepMechanism::Synth, SweepMechanism::Blackbox])]
    mechanisms: Vec<SweepMechanism>,
    #[arg(long, env = "P2NIA_AXIS", value_enum)]
    axis: AxisArg,
    /// Grid values for the chosen axis, comma-separated.
    #[arg(long, env = "P2NIA_GRID", value_delimiter = ',', value_parser = epsilon_arg,
          required = true)]
    grid: Vec<f64>,
    #[arg(long, env = "P2NIA_REPS", default_value_t = 10)]
    reps: usize,
    /// Budget used when the axis varies the sample size.
    #[arg(long, env = "P2NIA_EPSILON", value_parser = epsilon_arg, default_value_t = 2.0)]
    epsilon: f64,
    /// Release size used when the axis varies the budget.
    #[arg(long, env = "P2NIA_N_PRIME", default_value_t = 5000)]
    n_prime: usize,
    #[arg(long, env = "P2NIA_EPSILON_MODE", value_parser = epsilon_mode_arg, default_value = "per-column")]
    epsilon_mode: EpsilonMode,
    /// Metrics scored for every sweep cell.
    #[arg(long, env = "P2NIA_METRICS", value_delimiter = ',', value_parser = metric_arg,
          default_values_t = MetricKind::ALL)]
    metrics: Vec<MetricKind>,
    #[arg(long, env = "P2NIA_SEED", default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when omitted.
    #[arg(long, env = "P2NIA_OUT")]
    out: Option<PathBuf>,
}

impl SweepArgs {
    fn run(self) -> Result<()> {
        let dataset = load_dataset(&self.dataset, &self.schema)?;
        let model = NaiveBayesModel::read_json_file(&self.model)?;
        let axis = match self.axis {
            AxisArg::Epsilon => SweepAxis::Epsilon(self.grid.clone()),
            AxisArg::SampleSize => {
                let sizes = self
                    .grid
                    .iter()
                    .map(|&v| {
                        if v.fract() != 0.0 || v < 1.0 || !v.is_finite() {
                            Err(Error::Data(format!("sample sizes must be whole and >= 1, got {v}")))
                        } else {
                            Ok(v as usize)
                        }
                    })
                    .collect::<Result<Vec<usize>>>()?;
                SweepAxis::SampleSize(sizes)
            }
        };
        let config = SweepConfig {
            mechanisms: self.mechanisms,
            axis,
            repetitions: self.reps,
            epsilon: self.epsilon,
            n_prime: self.n_prime,
            epsilon_mode: self.epsilon_mode,
            metrics: self.metrics,
            seed: self.seed,
        };
        let result = run_sweep(&config, &dataset, &model)?;
        match &self.out {
            Some(path) => {
                write_sweep_csv(&result.rows, path)?;
                eprintln!("wrote {} sweep rows to {}", result.rows.len(), path.display());
            }
            None => print!("{}", p2nia_core::experiment::sweep_csv_string(&result.rows)?),
        }
        Ok(())
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "P2NIA_DATASET")]
    dataset: PathBuf,
    #[arg(long, env = "P2NIA_SCHEMA")]
    schema: PathBuf,
    #[arg(long, env = "P2NIA_MODEL")]
    model: PathBuf,
    #[arg(long, env = "P2NIA_ADDR", default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, env = "P2NIA_PLATFORM_ID", default_value = "local")]
    platform_id: String,
    #[arg(long, env = "P2NIA_EPSILON_MODE", value_parser = epsilon_mode_arg, default_value = "per-column")]
    epsilon_mode: EpsilonMode,
    /// Secret seed all session seeds derive from.
    #[arg(long, env = "P2NIA_SEED")]
    base_seed: u64,
}

impl ServeArgs {
    fn run(self) -> Result<()> {
        let dataset = load_dataset(&self.dataset, &self.schema)?;
        let model = NaiveBayesModel::read_json_file(&self.model)?;
        let state = Arc::new(p2nia_server::PlatformState::new(
            &self.platform_id,
            self.epsilon_mode,
            self.base_seed,
            dataset,
            model,
        ));
        let runtime = tokio::runtime::Runtime::new()?;
        runtime.block_on(async {
            let listener = tokio::net::TcpListener::bind(&self.addr).await?;
            eprintln!("platform {} listening on {}", self.platform_id, listener.local_addr()?);
            p2nia_server::serve(listener, state).await
        })
    }
}

impl Cli {
    fn run(self) -> Result<()> {
        match self.command {
            Command::MakeDeskData(args) => args.run(),
            Command::Train(args) => args.run(),
            Command::Label(args) => args.run(),
            Command::Privatize(args) => args.run(),
            Command::Audit(args) => args.run(),
            Command::Blackbox(args) => args.run(),
            Command::BiasDemo(args) => args.run(),
            Command::Sweep(args) => args.run(),
            Command::Serve(args) => args.run(),
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            std::process::exit(if err.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(err) = cli.run() {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
