use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bal_core::cdd::{self, Direction, Metric, SortedPool};
use bal_core::clustering;
use bal_core::featio::{self, FeatureMatrix, SelectionManifest};
use bal_core::harness::{self, SynthSpec};
use bal_core::orchestrator::{self, BetaSetting, RunConfig};
use bal_core::pool::{self, LabelState};
use bal_core::samplers::{self, SamplerKind};
use clap::{Args, Parser, Subcommand};

const SEED_VAR: &str = "BAL_SEED";

#[derive(Parser)]
#[command(
    name = "bal",
    version,
    about = "Balanced active-learning selection engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture pool as FMAT
    Synth(SynthArgs),
    /// Fit k-means and emit the clustering as JSON
    Cluster(ClusterArgs),
    /// Score and sort the pool, emitting a score CSV
    Cdd(CddArgs),
    /// Print the sub-pool window for one cycle
    Subpool(SubpoolArgs),
    /// Run one sampler step from files
    Select(SelectArgs),
    /// Run the full selection loop into a run directory
    Run(RunArgs),
    /// Run the random-sampling baseline into a run directory
    Baseline(RunArgs),
    /// Per-cycle class balance of a run directory
    Balance(BalanceArgs),
    /// Compare the accuracy traces of two run directories
    Compare(CompareArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 4.0)]
    sep: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Output FMAT path
    #[arg(long)]
    out: PathBuf,
    /// Also write a test split drawn around the same centers
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
}

#[derive(Args)]
struct ClusterArgs {
    /// Feature matrix (.fmat or .csv)
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = clustering::DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = clustering::DEFAULT_TOL)]
    tol: f64,
    /// Write JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CddArgs {
    #[arg(long)]
    features: PathBuf,
    /// Clustering JSON from `cluster`, or a JSON array of centroid rows
    #[arg(long)]
    centroids: PathBuf,
    #[arg(long, default_value = "cdd")]
    metric: Metric,
    #[arg(long, default_value = "asc")]
    direction: Direction,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SubpoolArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    cycles: usize,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    cycle: usize,
}

#[derive(Args)]
struct SelectArgs {
    /// Score CSV from `cdd`
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "cdd")]
    metric: Metric,
    #[arg(long, default_value = "asc")]
    direction: Direction,
    #[arg(long)]
    cycle: usize,
    #[arg(long)]
    cycles: usize,
    #[arg(long)]
    beta: f64,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value = "confidence")]
    sampler: SamplerKind,
    /// Posterior matrix (FMAT, one row per pool row) for confidence/entropy
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Pool features, needed by the cluster sampler
    #[arg(long)]
    features: Option<PathBuf>,
    /// Earlier manifests; their rows count as labeled
    #[arg(long)]
    manifests: Option<PathBuf>,
    /// Append the new manifest to the `--manifests` file
    #[arg(long, requires = "manifests")]
    append: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// RunConfig JSON; defaults apply to missing fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled pool (.fmat or .csv with a trailing label column)
    #[arg(long)]
    features: PathBuf,
    /// Labeled test matrix for the accuracy trace
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    beta: Option<BetaSetting>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    direction: Option<Direction>,
    #[arg(long)]
    clusters: Option<usize>,
}

#[derive(Args)]
struct BalanceArgs {
    #[arg(long)]
    run: PathBuf,
    /// The labeled pool the run used
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Write the table here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<bal_core::Error> for Failure {
    fn from(e: bal_core::Error) -> Self {
        match e {
            bal_core::Error::InvalidParameter(m) => Failure::Usage(m),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(format!("json: {e}"))
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {}", one_line(&m));
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {}", one_line(&m));
            ExitCode::from(2)
        }
    }
}

fn one_line(m: &str) -> String {
    m.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Cluster(a) => cluster(a),
        Command::Cdd(a) => cdd_cmd(a),
        Command::Subpool(a) => subpool(a),
        Command::Select(a) => select(a),
        Command::Run(a) => run(a, false),
        Command::Baseline(a) => run(a, true),
        Command::Balance(a) => balance(a),
        Command::Compare(a) => compare(a),
    }
}

/// Flag, then `BAL_SEED`, then `fallback`.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_VAR) {
        Ok(v) => v.trim().parse().map_err(|_| {
            Failure::Usage(format!("{SEED_VAR} must be an unsigned integer, got {v:?}"))
        }),
        Err(_) => Ok(fallback),
    }
}

fn load_matrix(path: &Path, labeled: bool) -> Result<FeatureMatrix, Failure> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let m = if is_csv {
        featio::read_csv(path, labeled)
    } else {
        featio::read_fmat(path)
    };
    m.map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    let spec = SynthSpec {
        classes: a.classes,
        per_class: a.per_class,
        dim: a.dim,
        spread: a.spread,
        sep: a.sep,
        seed: resolve_seed(a.seed, 0)?,
    };
    match &a.test_out {
        Some(test_path) => {
            let (data, test) = harness::synth_generate_with_test(&spec, a.test_per_class)?;
            featio::write_fmat(&data.features, &a.out)?;
            featio::write_fmat(&test, test_path)?;
        }
        None => featio::write_fmat(&harness::synth_generate(&spec)?.features, &a.out)?,
    }
    Ok(())
}

fn cluster(a: ClusterArgs) -> CliResult {
    let m = load_matrix(&a.features, false)?;
    let fit = clustering::kmeans_fit(
        &m.without_labels(),
        a.k,
        resolve_seed(a.seed, 0)?,
        a.max_iter,
        a.tol,
    )?;
    let mut text = serde_json::to_string_pretty(&fit)?;
    text.push('\n');
    emit(a.out.as_deref(), &text)
}

fn load_centroids(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let centroids = match value.get("centroids") {
        Some(c) => c.clone(),
        None => value,
    };
    Ok(serde_json::from_value(centroids)?)
}

fn cdd_cmd(a: CddArgs) -> CliResult {
    let m = load_matrix(&a.features, false)?.without_labels();
    let centroids = load_centroids(&a.centroids)?;
    let scores = cdd::score_all(&m, &centroids, a.metric)?;
    let sp = SortedPool::from_scores(scores, a.metric, a.direction);
    let mut buf = Vec::new();
    cdd::write_scores_csv(&sp, &mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn subpool(a: SubpoolArgs) -> CliResult {
    let (start, end) = pool::window(a.n, a.cycles, a.cycle, a.beta)?;
    println!("[{start},{end}) members={}", end - start);
    Ok(())
}

fn select(a: SelectArgs) -> CliResult {
    let text = fs::read_to_string(&a.scores)
        .map_err(|e| Failure::Data(format!("{}: {e}", a.scores.display())))?;
    let sp = cdd::read_scores_csv(&text, a.metric, a.direction)?;
    let n = sp.len();
    let earlier = match &a.manifests {
        Some(p) if p.exists() => featio::read_manifest(p)?,
        _ => Vec::new(),
    };
    let labels = LabelState::replay(&earlier, n)?;

    let manifest = if a.cycle == 1 {
        if !labels.is_empty() {
            return Err(Failure::Data(
                "cycle 1 requires an empty labeled set".into(),
            ));
        }
        let selected = samplers::select_first_cycle(&sp, a.budget)?;
        let scores = selected.iter().map(|&r| sp.scores[r]).collect();
        SelectionManifest {
            cycle: 1,
            beta: a.beta,
            subpool_start: 0,
            subpool_end: a.budget,
            selected,
            scores,
        }
    } else {
        let sub = pool::widen_to_capacity(&sp, a.cycle, a.cycles, a.beta, a.budget, &labels)?;
        let seed = resolve_seed(a.seed, 0)?;
        let posteriors = |members: &[usize]| -> Result<Vec<Vec<f64>>, Failure> {
            let path = a
                .probs
                .as_ref()
                .ok_or_else(|| Failure::Usage(format!("sampler {} needs --probs", a.sampler)))?;
            let probs = load_matrix(path, false)?;
            if probs.n_rows() != n {
                return Err(Failure::Data(format!(
                    "posterior matrix has {} rows, pool has {n}",
                    probs.n_rows()
                )));
            }
            Ok(members
                .iter()
                .map(|&r| probs.row(r).iter().map(|&v| v as f64).collect())
                .collect())
        };
        let take = a.budget.min(sub.members.len());
        let mut sel = match a.sampler {
            SamplerKind::Confidence => {
                samplers::select_confidence(&sub, &posteriors(&sub.members)?, a.budget)?
            }
            SamplerKind::Entropy => {
                samplers::select_entropy(&sub, &posteriors(&sub.members)?, a.budget)?
            }
            SamplerKind::Cluster => {
                let path = a
                    .features
                    .as_ref()
                    .ok_or_else(|| Failure::Usage("sampler cluster needs --features".into()))?;
                let f = load_matrix(path, false)?.without_labels();
                samplers::select_cluster(&sub, &f, take, seed)?
            }
            SamplerKind::Random => samplers::select_random(&sub, take, seed)?,
        };
        sel.shortfall = a.budget - sel.indices.len();
        orchestrator::top_up(&sp, &sub, &labels, &mut sel);
        SelectionManifest {
            cycle: a.cycle,
            beta: a.beta,
            subpool_start: sub.start,
            subpool_end: sub.end,
            selected: sel.indices,
            scores: sel.scores,
        }
    };

    let mut check = labels.clone();
    check.commit(manifest.clone(), n)?;
    if a.append {
        let path = a.manifests.as_ref().expect("clap enforces --manifests");
        featio::write_manifest(check.per_cycle(), path)?;
    }
    println!("{}", serde_json::to_string(&manifest)?);
    Ok(())
}

fn run(a: RunArgs, baseline: bool) -> CliResult {
    let mut config: RunConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    config.seed = resolve_seed(a.seed, config.seed)?;
    if let Some(v) = a.cycles {
        config.cycles = v;
    }
    if let Some(v) = a.budget {
        config.budget = v;
    }
    if let Some(v) = a.beta {
        config.beta = v;
    }
    if let Some(v) = a.sampler {
        config.sampler = v;
    }
    if let Some(v) = a.metric {
        config.metric = v;
    }
    if let Some(v) = a.direction {
        config.direction = v;
    }
    if let Some(v) = a.clusters {
        config.clusters = Some(v);
    }
    let features = load_matrix(&a.features, true)?;
    let test = a
        .test
        .as_deref()
        .map(|p| load_matrix(p, true))
        .transpose()?;
    let state = if baseline {
        orchestrator::run_baseline_random(&config, &features, test.as_ref())?
    } else {
        orchestrator::run_bal(&config, &features, test.as_ref())?
    };
    orchestrator::write_run_dir(&a.out, &config, &state)?;
    if let Some(last) = state.trace.last() {
        println!(
            "cycles={} labeled={} beta={} final_accuracy={}",
            last.cycle, last.labeled_count, state.beta, last.accuracy
        );
    }
    Ok(())
}

fn balance(a: BalanceArgs) -> CliResult {
    let state = orchestrator::load_run_dir(&a.run)?;
    let features = load_matrix(&a.features, true)?;
    let scores = harness::subpool_class_balance(&state, &features)?;
    let mut out = String::from("cycle,balance\n");
    for (m, s) in state.manifests().iter().zip(&scores) {
        out.push_str(&format!("{},{s}\n", m.cycle));
    }
    out.push_str(&format!(
        "mean_after_first,{}\n",
        harness::mean_sampled_balance(&scores)
    ));
    emit(None, &out)
}

fn compare(a: CompareArgs) -> CliResult {
    let ra = orchestrator::load_run_dir(&a.a)?;
    let rb = orchestrator::load_run_dir(&a.b)?;
    let cmp = harness::compare_runs(&ra, &rb)?;
    let mut buf = Vec::new();
    cmp.write_csv(&mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))?;
    eprintln!("final_delta={}", cmp.final_delta);
    Ok(())
}
