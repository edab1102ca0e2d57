//! `intentsum`: every subcommand prints one JSON document on stdout and
//! sends diagnostics to stderr. Exit status is 0 on success, 1 on a usage
//! or configuration error and 2 when the data itself is at fault.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use intentsum_core::api::{EvaluateRequest, InferenceResponse, QuerySpec};
use intentsum_core::eval::evaluate_weights;
use intentsum_core::model::{default_budget, Model, ModelConfig, Selection};
use intentsum_core::querygen::generate_visual_query;
use intentsum_core::store::{
    load_checkpoint, save_checkpoint, synth_dataset, Dataset, SynthConfig, VideoRecord, EXTENSION,
};
use intentsum_core::train::{gradient_suite, train, TrainConfig, TrainData, TrainMode, GRAD_TOLERANCE};
use intentsum_core::Error;
use intentsum_service::ServiceConfig;

const QUERY_SHOTS: usize = 5;

#[derive(Debug, Parser)]
#[command(
    name = "intentsum",
    version,
    about = "Intent-steerable query-focused video summarization"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted concept pairs.
    Synth(SynthArgs),
    /// Train a model and save it as a checkpoint.
    Train(TrainArgs),
    /// Intent distribution and per-intent shot scores for one query.
    Infer(InferArgs),
    /// Score a summary against ground truth.
    Eval(EvalArgs),
    /// Representative shots of a ground-truth summary.
    Querygen(QuerygenArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run the finite-difference gradient suite in f64.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// JSON file with any `SynthConfig` fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    Transfer,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Reference,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Output checkpoint: an id under `checkpoints/` or a file path.
    #[arg(long)]
    checkpoint: String,
    /// JSON file with any `TrainConfig` fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "joint")]
    mode: ModeArg,
    /// Network widths for a fresh model.
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Checkpoint to start from; required in transfer mode.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long, requires = "c2", conflicts_with = "shots")]
    c1: Option<String>,
    #[arg(long, requires = "c1")]
    c2: Option<String>,
    /// Visual query: comma-separated shot indices.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
}

impl QueryArgs {
    fn spec(&self) -> Result<QuerySpec, Error> {
        match (&self.c1, &self.c2, &self.shots) {
            (Some(c1), Some(c2), None) => Ok(QuerySpec::Text {
                c1: c1.clone(),
                c2: c2.clone(),
            }),
            (None, None, Some(shots)) => Ok(QuerySpec::Visual { shots: shots.clone() }),
            _ => Err(Error::Config("give either --c1 and --c2 or --shots".into())),
        }
    }
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    checkpoint: String,
    #[arg(long)]
    video: String,
    #[command(flatten)]
    query: QueryArgs,
    /// Also select a summary of this many shots.
    #[arg(long, conflicts_with = "threshold")]
    budget: Option<usize>,
    /// Also select every shot scoring above this value.
    #[arg(long)]
    threshold: Option<f64>,
    /// Mixing threshold for the summary; defaults to the checkpoint's.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// JSON request `{video, summary, mask?, c1?, c2?}`; `-` reads stdin.
    #[arg(long, conflicts_with_all = ["video", "weights"])]
    request: Option<PathBuf>,
    #[arg(long, requires = "summary")]
    video: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    summary: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    mask: Option<Vec<usize>>,
    #[arg(long, requires = "c2")]
    c1: Option<String>,
    #[arg(long, requires = "c1")]
    c2: Option<String>,
    /// JSON matrix of pairwise IOU weights, scored directly.
    #[arg(long, conflicts_with = "video")]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QuerygenArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    video: String,
    /// Query whose ground truth is used; defaults to the video's `gt.json`.
    #[arg(long, requires = "c2")]
    c1: Option<String>,
    #[arg(long, requires = "c1")]
    c2: Option<String>,
    #[arg(long, default_value_t = QUERY_SHOTS)]
    k: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    cache_size: Option<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("intentsum: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Querygen(a) => querygen(a),
        Command::Serve(a) => serve(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<ExitCode, Error> {
    println!("{}", serde_json::to_string(value).expect("output serializes"));
    Ok(ExitCode::SUCCESS)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| Error::io(path, e))?;
        s
    } else {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    };
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// A bare id names `checkpoints/{id}.ivzr`; anything that looks like a path
/// is used as given and its file stem becomes the id.
fn checkpoint_location(ds: &Dataset, arg: &str) -> (String, PathBuf) {
    let path = Path::new(arg);
    if arg.contains(std::path::MAIN_SEPARATOR) || path.extension().is_some_and(|e| e == EXTENSION) {
        let id = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        (id, path.to_path_buf())
    } else {
        (arg.to_string(), ds.checkpoint_path(arg))
    }
}

fn load_video(ds: &Dataset, id: &str) -> Result<VideoRecord, Error> {
    if !Dataset::is_valid_id(id) {
        return Err(Error::Input(format!("invalid video id {id:?}")));
    }
    ds.load_video(id)
}

fn synth(a: SynthArgs) -> Result<ExitCode, Error> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.videos = a.videos.unwrap_or(cfg.videos);
    cfg.shots = a.shots.unwrap_or(cfg.shots);
    cfg.dim = a.dim.unwrap_or(cfg.dim);
    cfg.vocab = a.vocab.unwrap_or(cfg.vocab);
    cfg.pairs = a.pairs.unwrap_or(cfg.pairs);
    let manifest = synth_dataset(&a.data_dir, &cfg)?;
    print_json(&manifest)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode, Error> {
    let ds = Dataset::open(&a.data_dir)?;
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = a.epochs {
        cfg = TrainConfig { epochs: e, ..cfg }.scaled_to(e);
    }
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.delta = a.delta.unwrap_or(cfg.delta);
    cfg.validate()?;
    let records = ds
        .video_ids()?
        .iter()
        .map(|id| ds.load_video(id))
        .collect::<Result<Vec<_>, _>>()?;
    let dim = records
        .first()
        .map(|r| r.features.cols())
        .ok_or_else(|| Error::Input(format!("no videos under {}", a.data_dir.display())))?;
    let mode = match a.mode {
        ModeArg::Joint => TrainMode::Joint,
        ModeArg::Transfer => TrainMode::Transfer,
    };
    let mut model = match (&a.init, mode) {
        (Some(init), _) => load_checkpoint::<f32>(checkpoint_location(&ds, init).1)?,
        (None, TrainMode::Transfer) => {
            return Err(Error::Config(
                "transfer mode needs --init with a jointly trained checkpoint".into(),
            ))
        }
        (None, TrainMode::Joint) => {
            let mc = match a.preset {
                Preset::Toy => ModelConfig::toy(dim),
                Preset::Reference => ModelConfig::reference(dim),
            };
            Model::<f32>::new(&mc, cfg.seed)?
        }
    };
    let data = TrainData::<f32>::from_records(&records, &ds.embeddings()?, mode, QUERY_SHOTS)?;
    let record = train(&mut model, &data, &cfg, mode)?;
    let (_, path) = checkpoint_location(&ds, &a.checkpoint);
    save_checkpoint(&path, &model)?;
    eprintln!("intentsum: saved {}", path.display());
    print_json(&record)
}

fn infer(a: InferArgs) -> Result<ExitCode, Error> {
    let query = a.query.spec()?;
    let ds = Dataset::open(&a.data_dir)?;
    let (id, path) = checkpoint_location(&ds, &a.checkpoint);
    let model = load_checkpoint::<f32>(path)?;
    let record = load_video(&ds, &a.video)?;
    let table = if ds.has_embeddings() {
        Some(ds.embeddings()?)
    } else {
        None
    };
    let q = query.resolve(table.as_ref())?;
    let response = InferenceResponse::compute(&model, &id, &a.video, &record.features, &q)?;
    let selection = match (a.budget, a.threshold) {
        (Some(b), _) => Some(Selection::Budget(b)),
        (None, Some(t)) => Some(Selection::Threshold(t)),
        (None, None) if a.delta.is_some() => Some(Selection::Budget(default_budget(record.shots()))),
        (None, None) => None,
    };
    match selection {
        Some(mode) => print_json(&response.summarize(a.delta.unwrap_or(response.delta), mode)?),
        None => {
            println!("{}", response.to_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn eval(a: EvalArgs) -> Result<ExitCode, Error> {
    if let Some(p) = &a.weights {
        let w: Vec<Vec<f64>> = read_json(p)?;
        println!("{}", evaluate_weights(&w)?.to_json());
        return Ok(ExitCode::SUCCESS);
    }
    let req = match (&a.request, &a.video) {
        (Some(p), _) => read_json::<EvaluateRequest>(p)?,
        (None, Some(video)) => EvaluateRequest {
            video: video.clone(),
            summary: a.summary.clone().unwrap_or_default(),
            mask: a.mask.clone(),
            c1: a.c1.clone(),
            c2: a.c2.clone(),
        },
        (None, None) => {
            return Err(Error::Config(
                "give --request, --video with --summary, or --weights".into(),
            ))
        }
    };
    let dir = a
        .data_dir
        .as_ref()
        .ok_or_else(|| Error::Config("--data-dir is required unless --weights is given".into()))?;
    let ds = Dataset::open(dir)?;
    let record = load_video(&ds, &req.video)?;
    let gt = req
        .ground_truth(&ds, &record)?
        .ok_or_else(|| Error::Input(req.missing_ground_truth()))?;
    println!("{}", req.evaluate(&record, &gt)?.to_json());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct QuerygenOutput {
    video: String,
    c1: String,
    c2: String,
    shots: Vec<usize>,
}

fn querygen(a: QuerygenArgs) -> Result<ExitCode, Error> {
    let ds = Dataset::open(&a.data_dir)?;
    let record = load_video(&ds, &a.video)?;
    let req = EvaluateRequest {
        video: a.video.clone(),
        summary: Vec::new(),
        mask: None,
        c1: a.c1,
        c2: a.c2,
    };
    let gt = req
        .ground_truth(&ds, &record)?
        .ok_or_else(|| Error::Input(req.missing_ground_truth()))?;
    let shots = generate_visual_query(&gt.summary, &record.tag_sets(), a.k)?;
    print_json(&QuerygenOutput {
        video: a.video,
        c1: gt.c1,
        c2: gt.c2,
        shots,
    })
}

fn serve(a: ServeArgs) -> Result<ExitCode, Error> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let mut cfg = ServiceConfig::default().with_env()?;
    if let Some(d) = a.data_dir {
        cfg.data_dir = d;
    }
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if let Some(n) = a.cache_size {
        cfg.cache_size = n;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("tokio runtime: {e}")))?;
    runtime.block_on(intentsum_service::serve(cfg))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GradcheckOutput {
    cases: Vec<intentsum_core::train::GradCase>,
    worst: f64,
    tolerance: f64,
    passed: bool,
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode, Error> {
    let cases = gradient_suite(a.seed)?;
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let passed = cases.iter().all(|c| c.passed());
    eprintln!("intentsum: worst relative error {worst:.3e}");
    print_json(&GradcheckOutput {
        cases,
        worst,
        tolerance: GRAD_TOLERANCE,
        passed,
    })?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
