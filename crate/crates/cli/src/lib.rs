//! The `cadorder` command line.
//!
//! Every subcommand writes a run manifest recording its arguments, input
//! hashes, tool version, wall time and outputs. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 property violation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use cadorder_core::costmodel::{
    load_timing_table, CostOracle, ExternalSolverAdapter, SyntheticCostModel, TimeSource,
};
use cadorder_core::datagen::{
    dataset_fingerprint, random_dataset, read_dataset, read_problem_file, sha256_hex, write_dataset, GenConfig,
    GenError,
};
use cadorder_core::features::{
    brown_features, dedup_features, default_probe, enumerate_descriptors, selected_triplet, FeatureDescriptor,
    FeatureRecord, FeatureSet, Triplet, FORMAL_COMPOSITIONS,
};
use cadorder_core::heuristics::{
    check_equivalence, lex_order, lex_order_with, select_base_weight, FeatureMatrix, HeuristicNetwork, TieBreak,
};
use cadorder_core::polyset::ProblemInstance;
use cadorder_core::search::{search_triplets_with, write_report_csv, SearchOptions, DEFAULT_CHECKPOINT_EVERY};
use cadorder_core::training::{train, Checkpoint, EvalSchedule, TrainConfig, TrainableNetwork};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROPERTY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cadorder", version, about = "Interpretable CAD variable-ordering heuristics")]
pub struct Cli {
    /// Worker threads for parallel stages (0 = one per core).
    #[arg(long, global = true, env = "CADORDER_JOBS", default_value_t = 0)]
    pub jobs: usize,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded random dataset directory.
    Gen(GenArgs),
    /// Enumerate the feature grammar and deduplicate it on a probe set.
    Features(FeaturesArgs),
    /// Print the variable ordering chosen for one problem.
    Order(OrderArgs),
    /// Rank every ordered feature triplet of a pool by total cost.
    Search(SearchArgs),
    /// Fine-tune the network weights against a cost oracle.
    Train(TrainArgs),
    /// Check that the network and the lexicographic rule agree on a dataset.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub n_vars: usize,
    #[arg(long, default_value_t = 1)]
    pub min_polys: usize,
    #[arg(long, default_value_t = 4)]
    pub max_polys: usize,
    #[arg(long, default_value_t = 1)]
    pub min_monomials: usize,
    #[arg(long, default_value_t = 8)]
    pub max_monomials: usize,
    #[arg(long, default_value_t = 6)]
    pub max_degree: u32,
    #[arg(long, default_value_t = -100, allow_hyphen_values = true)]
    pub coeff_min: i64,
    #[arg(long, default_value_t = 100, allow_hyphen_values = true)]
    pub coeff_max: i64,
    #[arg(long, default_value_t = 0.7)]
    pub density: f64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Probe dataset directory (default: 200 seeded problems plus hand instances).
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeuristicKind {
    /// Brown's rule, applied lexicographically.
    Brown,
    /// The equivalent network on Brown's features.
    Nn,
    /// A triplet or trained checkpoint read from --triplet-file.
    TripletFile,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value_t = HeuristicKind::Brown)]
    pub heuristic: HeuristicKind,
    /// Triplet JSON, search report or training checkpoint.
    #[arg(long, required_if_eq("heuristic", "triplet-file"))]
    pub triplet_file: Option<PathBuf>,
    /// Print the ordering last variable first.
    #[arg(long)]
    pub reverse: bool,
    /// Print the feature matrix and layer-1 outputs.
    #[arg(long)]
    pub explain: bool,
    /// Break full feature ties with this seed instead of by variable index.
    #[arg(long, value_name = "SEED")]
    pub random_ties: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// `synthetic`, `table:<csv>` or `cmd:<template>`.
    #[arg(long, default_value = "synthetic")]
    pub oracle: String,
    /// Timeout in seconds (table default: largest recorded time; cmd default: 60).
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Multiplier applied to the timeout for timed-out runs.
    #[arg(long, default_value_t = 1.0)]
    pub penalty: f64,
    /// Read the cost of a `cmd:` run from its last stdout line instead of the clock.
    #[arg(long)]
    pub stdout_time: bool,
    /// Concurrent solver processes for `cmd:` (default: --jobs, at least 1).
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub synthetic_base: f64,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise_scale: f64,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Feature-set JSON from `features` (default: the six named features).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Ranked candidates to report (0 = all).
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Output directory for search_report.json and search_report.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint journal to write.
    #[arg(long, conflicts_with = "resume")]
    pub journal: Option<PathBuf>,
    /// Resume from (and keep appending to) this journal.
    #[arg(long, value_name = "JOURNAL")]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CHECKPOINT_EVERY)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Epoch,
    Batch,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// `brown`, `selected` or a triplet JSON file.
    #[arg(long, default_value = "brown")]
    pub triplet: String,
    #[arg(long, default_value_t = 2e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use raw feature values instead of dividing by the training maximum.
    #[arg(long)]
    pub no_scaling: bool,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Epoch)]
    pub eval: ScheduleArg,
    /// Initial weights `a,b,c` in scaled space.
    #[arg(long, value_delimiter = ',', num_args = 3, allow_hyphen_values = true)]
    pub init: Option<Vec<f64>>,
    /// Output directory for train_report.json and checkpoint.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// `brown`, `selected` or a triplet JSON file.
    #[arg(long, default_value = "brown")]
    pub triplet: String,
    /// Use this base weight for every problem instead of the minimal one.
    #[arg(long)]
    pub force_w: Option<u64>,
    /// Write the equivalence report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes, one per nonzero exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Property(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Property(_) => EXIT_PROPERTY,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub tool_version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

/// What a subcommand hands back for the manifest.
struct Outcome {
    config: serde_json::Value,
    inputs: Vec<InputHash>,
    outputs: Vec<PathBuf>,
    /// Default manifest location, if the command has a natural one.
    manifest: Option<PathBuf>,
    /// A property violation to report after the manifest is written.
    violation: Option<String>,
}

impl Outcome {
    fn new(config: serde_json::Value) -> Self {
        Outcome {
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest: None,
            violation: None,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, argv) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Data(e) => eprintln!("error: {e:#}"),
                Failure::Property(m) => eprintln!("property violation: {m}"),
            }
            f.code()
        }
    }
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    let start = Instant::now();
    let jobs = cli.jobs;
    let (name, outcome) = pool.install(|| -> Result<_, Failure> {
        Ok(match &cli.command {
            Command::Gen(a) => ("gen", cmd_gen(a)?),
            Command::Features(a) => ("features", cmd_features(a)?),
            Command::Order(a) => ("order", cmd_order(a)?),
            Command::Search(a) => ("search", cmd_search(a, jobs)?),
            Command::Train(a) => ("train", cmd_train(a, jobs)?),
            Command::Check(a) => ("check", cmd_check(a)?),
        })
    })?;
    if let Some(path) = cli.manifest.as_ref().or(outcome.manifest.as_ref()) {
        let manifest = RunManifest {
            command: name.to_string(),
            args: argv,
            config: outcome.config,
            inputs: outcome.inputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: outcome.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        write_json(path, &manifest)?;
    }
    match outcome.violation {
        Some(m) => Err(Failure::Property(m)),
        None => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling_manifest(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn file_hash(path: &Path) -> anyhow::Result<InputHash> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn dataset_hash(path: &Path, problems: &[ProblemInstance]) -> InputHash {
    InputHash {
        path: path.display().to_string(),
        sha256: dataset_fingerprint(problems),
    }
}

/// Loads a dataset directory; an empty one is a usage error.
fn load_dataset(dir: &Path) -> Result<Vec<ProblemInstance>, Failure> {
    if !dir.is_dir() {
        return Err(anyhow!("dataset directory {} does not exist", dir.display()).into());
    }
    match read_dataset(dir) {
        Ok(ds) if ds.is_empty() => Err(usage(format!("dataset {} contains no problems", dir.display()))),
        Ok(ds) => Ok(ds),
        Err(GenError::NoProblems(p)) => Err(usage(format!("dataset {} contains no problems", p.display()))),
        Err(e) => Err(e.into()),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<Outcome, Failure> {
    let cfg = GenConfig {
        n_vars: a.n_vars,
        n_polys: (a.min_polys, a.max_polys),
        monomials: (a.min_monomials, a.max_monomials),
        max_degree: a.max_degree,
        coeffs: (a.coeff_min, a.coeff_max),
        density: a.density,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let count = usize::try_from(a.count).map_err(|_| usage("count is too large"))?;
    let problems = random_dataset(&cfg, count)?;
    write_dataset(&a.out, &problems, Some(&cfg))?;
    println!("wrote {} problems to {}", problems.len(), a.out.display());
    let mut o = Outcome::new(serde_json::to_value(&cfg)?);
    o.outputs.push(a.out.join("manifest.json"));
    o.manifest = Some(a.out.join("run_manifest.json"));
    Ok(o)
}

/// The feature-set file written by `features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetFile {
    pub probe_id: String,
    pub probe_size: usize,
    pub formal_compositions: usize,
    pub valid_descriptors: usize,
    pub count: usize,
    pub features: Vec<FeatureRecord>,
}

fn cmd_features(a: &FeaturesArgs) -> Result<Outcome, Failure> {
    let mut o = Outcome::new(serde_json::json!({ "probe": a.probe.as_ref().map(|p| p.display().to_string()) }));
    let probe = match &a.probe {
        Some(dir) => {
            let ds = load_dataset(dir)?;
            o.inputs.push(dataset_hash(dir, &ds));
            ds
        }
        None => default_probe(),
    };
    let candidates = enumerate_descriptors();
    let fs = dedup_features(&candidates, &probe)?;
    let file = FeatureSetFile {
        probe_id: dataset_fingerprint(&probe),
        probe_size: probe.len(),
        formal_compositions: FORMAL_COMPOSITIONS,
        valid_descriptors: candidates.len(),
        count: fs.len(),
        features: fs.to_records(),
    };
    write_json(&a.out, &file)?;
    println!(
        "{} distinct features from {} valid descriptors ({} formal compositions) on {} probe problems",
        fs.len(),
        candidates.len(),
        FORMAL_COMPOSITIONS,
        probe.len()
    );
    o.outputs.push(a.out.clone());
    o.manifest = Some(sibling_manifest(&a.out));
    Ok(o)
}

fn descriptor(code: u64) -> anyhow::Result<FeatureDescriptor> {
    u32::try_from(code)
        .ok()
        .and_then(FeatureDescriptor::from_code)
        .filter(FeatureDescriptor::is_valid)
        .ok_or_else(|| anyhow!("{code} is not a valid feature id"))
}

fn triplet_from_ids(ids: &serde_json::Value) -> anyhow::Result<Triplet> {
    let arr = ids.as_array().filter(|a| a.len() == 3).ok_or_else(|| anyhow!("expected three feature ids"))?;
    let mut t = [descriptor(0).unwrap_or(brown_features()[0]); 3];
    for (slot, v) in t.iter_mut().zip(arr) {
        *slot = descriptor(v.as_u64().ok_or_else(|| anyhow!("feature id {v} is not an integer"))?)?;
    }
    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
        bail!("triplet features must be distinct");
    }
    Ok(t)
}

/// A triplet, optionally with trained weights.
struct TripletSource {
    triplet: Triplet,
    checkpoint: Option<Checkpoint>,
}

/// Reads `{"features": [..]}`, a search report (rank 1 is used) or a
/// training checkpoint.
fn read_triplet_file(path: &Path) -> anyhow::Result<TripletSource> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let ctx = || format!("{}: no triplet found", path.display());
    if v.get("weights").is_some() {
        let cp: Checkpoint = serde_json::from_value(v).with_context(ctx)?;
        let triplet = triplet_from_ids(&serde_json::to_value(cp.triplet)?).with_context(ctx)?;
        return Ok(TripletSource {
            triplet,
            checkpoint: Some(cp),
        });
    }
    let ids = v
        .get("candidates")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("features"))
        .or_else(|| v.get("features"))
        .or_else(|| v.get("triplet"))
        .ok_or_else(|| anyhow!(ctx()))?;
    Ok(TripletSource {
        triplet: triplet_from_ids(ids).with_context(ctx)?,
        checkpoint: None,
    })
}

fn resolve_triplet(name: &str, inputs: &mut Vec<InputHash>) -> Result<Triplet, Failure> {
    match name {
        "brown" => Ok(brown_features()),
        "selected" => Ok(selected_triplet()),
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(usage(format!("--triplet must be `brown`, `selected` or an existing file, got `{path}`")));
            }
            inputs.push(file_hash(p)?);
            Ok(read_triplet_file(p)?.triplet)
        }
    }
}

fn cmd_order(a: &OrderArgs) -> Result<Outcome, Failure> {
    let mut o = Outcome::new(serde_json::json!({
        "heuristic": format!("{:?}", a.heuristic),
        "reverse": a.reverse,
        "random_ties": a.random_ties,
    }));
    if a.random_ties.is_some() && a.heuristic == HeuristicKind::Nn {
        return Err(usage("--random-ties applies to lexicographic heuristics, not `nn`"));
    }
    if !a.problem.is_file() {
        return Err(anyhow!("problem file {} does not exist", a.problem.display()).into());
    }
    let pr = read_problem_file(&a.problem)?;
    o.inputs.push(file_hash(&a.problem)?);
    let source = match a.heuristic {
        HeuristicKind::TripletFile => {
            let path = a.triplet_file.as_ref().expect("required by clap");
            o.inputs.push(file_hash(path)?);
            read_triplet_file(path)?
        }
        _ => TripletSource {
            triplet: brown_features(),
            checkpoint: None,
        },
    };
    let triplet = source.triplet;
    let fm = FeatureMatrix::compute(&triplet, &pr)?;
    let bw = select_base_weight(std::slice::from_ref(&pr), &triplet)?;
    let lexicographic = bw.fractional || triplet.iter().any(FeatureDescriptor::uses_average);
    let trained = source.checkpoint.as_ref().and_then(Checkpoint::network);
    let ord = match (a.heuristic, a.random_ties, &trained) {
        (_, Some(seed), _) => lex_order_with(&fm, TieBreak::Seeded(seed)),
        (HeuristicKind::Brown, None, _) => lex_order(&fm),
        (_, None, Some(net)) => net.hard_order(&fm),
        (_, None, None) if lexicographic => lex_order(&fm),
        (_, None, None) => HeuristicNetwork::frozen(triplet, bw.w).order_matrix(&fm, &pr)?,
    };
    if a.explain {
        print!("{}", explain(&pr, &triplet, &fm, bw.w, trained.as_ref()));
    }
    let ord = if a.reverse { ord.reversed() } else { ord };
    println!("{}", ord.display(&pr));
    Ok(o)
}

fn explain(pr: &ProblemInstance, triplet: &Triplet, fm: &FeatureMatrix, w: u64, trained: Option<&TrainableNetwork>) -> String {
    let mut s = String::new();
    for (i, fd) in triplet.iter().enumerate() {
        let _ = writeln!(s, "F{} = {} (id {})", i + 1, fd.description(), fd.code());
    }
    let y: Vec<String> = match trained {
        Some(net) => {
            let _ = writeln!(s, "weights = {:?} (trained, scaled by {:?})", net.weights, net.feature_scale);
            net.layer1(fm).iter().map(|v| v.to_string()).collect()
        }
        None => {
            let _ = writeln!(s, "w = {w}");
            HeuristicNetwork::frozen(*triplet, w)
                .layer1_forward(fm)
                .iter()
                .map(|v| v.to_string())
                .collect()
        }
    };
    for (v, row) in fm.rows().iter().enumerate() {
        let _ = writeln!(s, "{}: F = ({}, {}, {})  y = {}", pr.var_name(v), row[0], row[1], row[2], y[v]);
    }
    s
}

fn build_oracle(a: &OracleArgs, jobs: usize, inputs: &mut Vec<InputHash>) -> Result<Box<dyn CostOracle>, Failure> {
    if !(a.penalty.is_finite() && a.penalty > 0.0) {
        return Err(usage("--penalty must be positive"));
    }
    if a.timeout.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
        return Err(usage("--timeout must be positive"));
    }
    if a.oracle == "synthetic" {
        if !(a.synthetic_base.is_finite() && a.synthetic_base > 0.0) {
            return Err(usage("--synthetic-base must be positive"));
        }
        if !(0.0..1.0).contains(&a.noise_scale) {
            return Err(usage("--noise-scale must lie in [0, 1)"));
        }
        return Ok(Box::new(SyntheticCostModel {
            step_base: a.synthetic_base,
            noise_seed: a.noise_seed,
            noise_scale: a.noise_scale,
        }));
    }
    if let Some(path) = a.oracle.strip_prefix("table:") {
        let path = Path::new(path);
        inputs.push(file_hash(path)?);
        return Ok(Box::new(load_timing_table(path, a.timeout, a.penalty)?));
    }
    if let Some(template) = a.oracle.strip_prefix("cmd:") {
        let timeout = Duration::from_secs_f64(a.timeout.unwrap_or(60.0));
        let slots = a.max_concurrent.unwrap_or(jobs).max(1);
        let adapter = ExternalSolverAdapter::new(template, timeout, slots)
            .map_err(|e| usage(e.to_string()))?
            .with_penalty_factor(a.penalty)
            .with_time_source(if a.stdout_time {
                TimeSource::Stdout
            } else {
                TimeSource::WallClock
            });
        return Ok(Box::new(adapter));
    }
    Err(usage(format!(
        "--oracle must be `synthetic`, `table:<csv>` or `cmd:<template>`, got `{}`",
        a.oracle
    )))
}

fn oracle_config(a: &OracleArgs) -> serde_json::Value {
    serde_json::json!({
        "oracle": a.oracle,
        "timeout": a.timeout,
        "penalty": a.penalty,
        "stdout_time": a.stdout_time,
        "synthetic_base": a.synthetic_base,
        "noise_seed": a.noise_seed,
        "noise_scale": a.noise_scale,
    })
}

fn load_feature_set(path: &Path) -> anyhow::Result<FeatureSet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: FeatureSetFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(FeatureSet::from_records(&file.features)?)
}

fn named_pool() -> FeatureSet {
    let mut d: Vec<FeatureDescriptor> = brown_features().into_iter().chain(selected_triplet()).collect();
    d.sort();
    d.dedup();
    FeatureSet::from_descriptors(d)
}

fn cmd_search(a: &SearchArgs, jobs: usize) -> Result<Outcome, Failure> {
    let mut o = Outcome::new(serde_json::json!({
        "features": a.features.as_ref().map(|p| p.display().to_string()),
        "top_k": a.top_k,
        "checkpoint_every": a.checkpoint_every,
        "oracle": oracle_config(&a.oracle),
    }));
    let dataset = load_dataset(&a.dataset)?;
    o.inputs.push(dataset_hash(&a.dataset, &dataset));
    let pool = match &a.features {
        Some(p) => {
            o.inputs.push(file_hash(p)?);
            load_feature_set(p)?
        }
        None => named_pool(),
    };
    if pool.len() < 3 {
        return Err(usage(format!("the feature pool has {} features; a search needs at least 3", pool.len())));
    }
    let oracle = build_oracle(&a.oracle, jobs, &mut o.inputs)?;
    let opts = SearchOptions {
        top_k: a.top_k,
        checkpoint_every: a.checkpoint_every.max(1),
        journal: a.resume.clone().or_else(|| a.journal.clone()),
        resume: a.resume.is_some(),
    };
    let report = search_triplets_with(&pool, &dataset, oracle.as_ref(), &opts)?;

    let json_path = a.out.join("search_report.json");
    let csv_path = a.out.join("search_report.csv");
    write_json(&json_path, &report)?;
    let mut csv_bytes = Vec::new();
    write_report_csv(&report, &mut csv_bytes)?;
    fs::write(&csv_path, csv_bytes).with_context(|| format!("writing {}", csv_path.display()))?;

    println!(
        "evaluated {} triplets from {} features on {} problems with {}",
        report.triplets_evaluated,
        report.pool_size,
        report.dataset_size,
        report.oracle_id
    );
    for rc in &report.candidates {
        let c = &rc.candidate;
        println!(
            "{:>4}  {}  cost {}  wins {}{}",
            rc.rank,
            c.descriptions.join(" | "),
            c.total_cost,
            c.wins_vs_brown,
            if c.lexicographic { "  (lexicographic)" } else { "" }
        );
    }
    let rank = report.baseline_rank.map_or_else(|| "not in pool".to_string(), |r| format!("rank {r}"));
    println!("brown  {}  cost {}  ({rank})", report.baseline.descriptions.join(" | "), report.baseline.total_cost);

    o.outputs.extend([json_path, csv_path]);
    o.outputs.extend(opts.journal);
    o.manifest = Some(a.out.join("run_manifest.json"));
    Ok(o)
}

fn cmd_train(a: &TrainArgs, jobs: usize) -> Result<Outcome, Failure> {
    let cfg = TrainConfig {
        learning_rate: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        epsilon: a.epsilon,
        epochs: a.epochs,
        batch_size: a.batch_size,
        temperature: a.temperature,
        seed: a.seed,
        scale_features: !a.no_scaling,
        eval: match a.eval {
            ScheduleArg::Epoch => EvalSchedule::Epoch,
            ScheduleArg::Batch => EvalSchedule::Batch,
        },
        init: a.init.as_ref().map(|v| [v[0], v[1], v[2]]),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut o = Outcome::new(serde_json::json!({
        "triplet": a.triplet,
        "train": serde_json::to_value(&cfg)?,
        "oracle": oracle_config(&a.oracle),
    }));
    let train_set = load_dataset(&a.train)?;
    let val_set = load_dataset(&a.val)?;
    o.inputs.push(dataset_hash(&a.train, &train_set));
    o.inputs.push(dataset_hash(&a.val, &val_set));
    let triplet = resolve_triplet(&a.triplet, &mut o.inputs)?;
    let oracle = build_oracle(&a.oracle, jobs, &mut o.inputs)?;

    let net = TrainableNetwork::for_training(triplet, &train_set, &cfg)?;
    let report = train(&net, &train_set, &val_set, oracle.as_ref(), &cfg)?;
    for p in &report.history {
        println!(
            "epoch {:>3}  step {:>6}  loss {:.6}  val cost {}  val accuracy {:.4}",
            p.epoch, p.step, p.train_loss, p.val_total_cost, p.val_accuracy
        );
    }
    let best = report.best_point();
    println!(
        "best: epoch {} step {}  val cost {} (initial {})",
        best.epoch,
        best.step,
        best.val_total_cost,
        report.initial_point().val_total_cost
    );

    let best_net = TrainableNetwork {
        weights: report.best_weights,
        ..net
    };
    let report_path = a.out.join("train_report.json");
    let checkpoint_path = a.out.join("checkpoint.json");
    write_json(&report_path, &report)?;
    write_json(&checkpoint_path, &Checkpoint::new(&best_net, &cfg))?;
    o.outputs.extend([report_path, checkpoint_path]);
    o.manifest = Some(a.out.join("run_manifest.json"));
    Ok(o)
}

fn cmd_check(a: &CheckArgs) -> Result<Outcome, Failure> {
    let mut o = Outcome::new(serde_json::json!({ "triplet": a.triplet, "force_w": a.force_w }));
    let dataset = load_dataset(&a.dataset)?;
    o.inputs.push(dataset_hash(&a.dataset, &dataset));
    let triplet = resolve_triplet(&a.triplet, &mut o.inputs)?;
    let report = check_equivalence(&dataset, &triplet, a.force_w)?;
    println!(
        "checked {} problems: {} mismatches, {} weight violations",
        report.total,
        report.mismatches.len(),
        report.violations.len()
    );
    for m in &report.mismatches {
        println!("mismatch {}: lex {} nn {} (w = {})", m.problem_id, m.lex, m.nn, m.w);
    }
    for v in &report.violations {
        println!("violation {}: {}", v.problem_id, v.message);
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        o.outputs.push(out.clone());
        o.manifest = Some(sibling_manifest(out));
    }
    if !report.is_clean() {
        o.violation = Some(format!(
            "{} mismatches and {} weight violations",
            report.mismatches.len(),
            report.violations.len()
        ));
    }
    Ok(o)
}
