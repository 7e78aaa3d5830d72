//! `curvd`: train, score and compare input-curvature memorization scores.
//!
//! Exit status: 0 on success, 1 for configuration or input errors (nothing is
//! written), 2 for runtime failures such as a diverging run.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use curvd::curvature::PerturbSpace;
use curvd::datasets::{BlobsConfig, SpiralConfig};
use curvd::experiments::{
    compare_scores, load_dataset, run_corruption_experiment_with, run_spiral_dynamics_with, run_training_with,
    sha256_hex, write_run, write_summary, DatasetSpec, ExperimentConfig, HistoryRow, RankedSample, RunSummary,
};
use curvd::export::{export_topk_images, RankEnd};
use curvd::metrics::{histogram, HistogramScale, ScoreKind, ScoreReport};
use curvd::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "curvd", version, about = "Input-loss curvature memorization scores")]
struct Cli {
    /// Suppress per-epoch progress on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Curvature dynamics on the two-spiral toy problem.
    Spiral(TrainArgs),
    /// Train on data with a fraction of labels flipped and score the flips.
    Corrupt(CorruptArgs),
    /// Train and write per-sample curvature and inconfidence scores.
    Score(ScoreArgs),
    /// Cosine agreement between a score file and a reference.
    Compare(CompareArgs),
    /// Highest- or lowest-scoring samples, optionally exported as PGM images.
    Rank(RankArgs),
    /// Histogram of a score file.
    Hist(HistArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DatasetKind {
    Mnist,
    Spiral,
    Blobs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SpaceArg {
    RawPixel,
    ModelInput,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Experiment configuration (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; also seeds the probes and any synthetic data.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Score every k-th epoch, starting with the first.
    #[arg(long)]
    stride: Option<usize>,
    /// Rademacher probes per sample and epoch [default: 10].
    #[arg(long)]
    probes: Option<usize>,
    /// Finite-difference step [default: 0.001].
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long, value_enum)]
    perturb_space: Option<SpaceArg>,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "mnist")]
    dataset: DatasetKind,
    /// Directory holding `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`
    /// [default: $CURVD_MNIST_DIR or data/mnist-10k].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Keep the first `n / C` samples of each class.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Args, Debug)]
struct CorruptArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Fraction of each class whose labels are flipped.
    #[arg(long, default_value_t = 0.01)]
    frac: f64,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Also export the k highest and k lowest scoring images.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Our scores (`index,label,corrupted,score` CSV).
    #[arg(long)]
    scores: PathBuf,
    /// Reference scores, index-aligned with `--scores`.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Top-k sizes; defaults to a tenth of the samples.
    #[arg(long, value_delimiter = ',')]
    top_k: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Rank from the lowest score instead of the highest.
    #[arg(long)]
    low: bool,
    /// MNIST directory the scores were computed on; enables PGM export.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ScaleArg {
    Linear,
    Log,
}

#[derive(Args, Debug)]
struct HistArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    #[arg(long, value_enum, default_value = "log")]
    scale: ScaleArg,
    #[arg(long)]
    out: PathBuf,
}

/// Training runs use this many epochs unless told otherwise.
const DEFAULT_EPOCHS: usize = 30;

fn mnist_dir(arg: Option<&Path>) -> PathBuf {
    match arg {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("CURVD_MNIST_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data/mnist-10k")),
    }
}

fn dataset_spec(data: &DataArgs, seed: u64) -> DatasetSpec {
    match data.dataset {
        DatasetKind::Mnist => DatasetSpec::mnist_dir(&mnist_dir(data.data.as_deref()), data.subset),
        DatasetKind::Spiral => DatasetSpec::Spiral(SpiralConfig {
            seed,
            ..Default::default()
        }),
        DatasetKind::Blobs => DatasetSpec::Blobs(BlobsConfig {
            seed,
            ..Default::default()
        }),
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&text)
}

/// Applies flag overrides on top of `cfg` and validates the result.
fn apply_overrides(mut cfg: ExperimentConfig, args: &TrainArgs) -> Result<ExperimentConfig> {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.curvature.probe_seed = seed;
        match &mut cfg.dataset {
            DatasetSpec::Spiral(s) => s.seed = seed,
            DatasetSpec::Blobs(b) => b.seed = seed,
            DatasetSpec::Mnist { .. } => {}
        }
    }
    if let Some(e) = args.epochs {
        if cfg.epochs != e {
            cfg.optimizer.lr_schedule = cfg
                .optimizer
                .lr_schedule
                .iter()
                .map(|&(at, m)| (at * e / cfg.epochs.max(1), m))
                .collect();
            cfg.optimizer.lr_schedule.dedup_by_key(|(at, _)| *at);
        }
        cfg.epochs = e;
    }
    if let Some(k) = args.stride {
        cfg.stride = k;
    }
    if let Some(n) = args.probes {
        cfg.curvature.probes = n;
    }
    if let Some(h) = args.step {
        cfg.curvature.step = h;
    }
    if let Some(wd) = args.weight_decay {
        cfg.optimizer.weight_decay = wd;
    }
    if let Some(space) = args.perturb_space {
        cfg.curvature.perturb_space = match space {
            SpaceArg::RawPixel => PerturbSpace::RawPixel,
            SpaceArg::ModelInput => PerturbSpace::ModelInput,
        };
    }
    cfg.out_dir = Some(args.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn base_config(args: &TrainArgs, preset: impl FnOnce(u64) -> ExperimentConfig) -> Result<ExperimentConfig> {
    let cfg = match &args.config {
        Some(path) => read_config(path)?,
        None => preset(args.seed.unwrap_or(0)),
    };
    apply_overrides(cfg, args)
}

/// Creates `dir` and checks that files can be written into it.
fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".curvd-write-check");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn read_scores(path: &Path, kind: ScoreKind) -> Result<ScoreReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ScoreReport::read_csv(file, kind).map_err(|e| match e {
        Error::Format { detail, .. } => Error::Format {
            path: path.to_path_buf(),
            detail,
        },
        other => other,
    })
}

struct Progress {
    quiet: bool,
    start: Instant,
}

impl Progress {
    fn epoch(&self, r: &HistoryRow) {
        if self.quiet {
            return;
        }
        let curv = r.curvature_train.map(|c| format!(" curvature {c:.4e}")).unwrap_or_default();
        eprintln!(
            "epoch {:>4}  loss {:.4}  acc {:.4}{curv}  [{:.1}s]",
            r.epoch,
            r.train_loss,
            r.train_accuracy,
            self.start.elapsed().as_secs_f64()
        );
    }

    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn run_spiral(args: &TrainArgs, p: &Progress) -> Result<RunSummary> {
    let cfg = base_config(args, ExperimentConfig::spiral)?;
    if !matches!(cfg.dataset, DatasetSpec::Spiral(_)) {
        return Err(Error::config("the spiral subcommand needs a spiral dataset"));
    }
    prepare_out(&args.out)?;
    let out = run_spiral_dynamics_with::<f64>(&cfg, &mut |r| p.epoch(r))?;
    let mut summary = RunSummary::from_training("spiral", &cfg, &out.training);
    summary.spiral = Some(out.summary);
    write_run(&args.out, &cfg, &out.training, &summary)?;
    Ok(summary)
}

fn network_note(cfg: &ExperimentConfig) -> String {
    let widths: Vec<String> = cfg.network.hidden.iter().map(|w| w.to_string()).collect();
    format!(
        "dense substitute network: hidden widths [{}], batch norm {}",
        widths.join(", "),
        if cfg.network.batchnorm { "on" } else { "off" }
    )
}

fn run_corrupt(args: &CorruptArgs, p: &Progress) -> Result<RunSummary> {
    let epochs = args.train.epochs.unwrap_or(DEFAULT_EPOCHS);
    let mut cfg = base_config(&args.train, |seed| {
        ExperimentConfig::mnist_corruption(dataset_spec(&args.data, seed), args.frac, epochs, seed)
    })?;
    if args.train.config.is_some() {
        cfg.corruption_fraction = Some(args.frac);
        cfg.validate()?;
    }
    prepare_out(&args.train.out)?;
    let out = run_corruption_experiment_with::<f64>(&cfg, &mut |r| p.epoch(r))?;
    let mut summary = RunSummary::from_training("corrupt", &cfg, &out.training);
    summary.corruption = Some(out.summary);
    summary.notes.push(network_note(&cfg));
    write_run(&args.train.out, &cfg, &out.training, &summary)?;
    Ok(summary)
}

fn run_score(args: &ScoreArgs, p: &Progress) -> Result<RunSummary> {
    let epochs = args.train.epochs.unwrap_or(DEFAULT_EPOCHS);
    let cfg = base_config(&args.train, |seed| {
        let mut cfg = ExperimentConfig::mnist_corruption(dataset_spec(&args.data, seed), 0.01, epochs, seed);
        cfg.corruption_fraction = None;
        cfg.optimizer.weight_decay = 0.0;
        cfg
    })?;
    prepare_out(&args.train.out)?;
    let out = run_training_with::<f64>(&cfg, &mut |r| p.epoch(r))?;
    let mut summary = RunSummary::from_training("score", &cfg, &out);
    summary.notes.push(network_note(&cfg));
    if let Some(k) = args.top_k {
        if out.train.image_shape.is_some() {
            for (end, name) in [(RankEnd::High, "high"), (RankEnd::Low, "low")] {
                let dir = args.train.out.join("images").join(name);
                let files = export_topk_images(&out.train, &out.curvature, k, end, &dir)?;
                p.note(&format!("wrote {} images to {}", files.len(), dir.display()));
            }
        } else {
            summary.notes.push("image export skipped: dataset has no image geometry".into());
        }
    }
    write_run(&args.train.out, &cfg, &out, &summary)?;
    Ok(summary)
}

fn run_compare(args: &CompareArgs) -> Result<RunSummary> {
    let ours = read_scores(&args.scores, ScoreKind::Curvature)?;
    let reference = read_scores(&args.reference, ScoreKind::External)?;
    let cmp = compare_scores(&ours, &reference, &args.top_k)?;
    prepare_out(&args.out)?;
    let mut bytes = fs::read(&args.scores).map_err(|e| Error::io(&args.scores, e))?;
    bytes.extend(fs::read(&args.reference).map_err(|e| Error::io(&args.reference, e))?);
    let mut summary = RunSummary::new("compare", &sha256_hex(&bytes));
    summary.num_samples = cmp.num_samples;
    summary.compare = Some(cmp);
    write_summary(&args.out, &summary)?;
    Ok(summary)
}

fn run_rank(args: &RankArgs, p: &Progress) -> Result<RunSummary> {
    let report = read_scores(&args.scores, ScoreKind::Curvature)?;
    let end = if args.low { RankEnd::Low } else { RankEnd::High };
    let dataset = match &args.data {
        Some(dir) => {
            let data = load_dataset::<f64>(&DatasetSpec::mnist_dir(dir, args.subset))?;
            Some(data.train)
        }
        None => None,
    };
    prepare_out(&args.out)?;
    let chosen = match end {
        RankEnd::High => report.rank_top(args.top_k),
        RankEnd::Low => report.rank_bottom(args.top_k),
    };
    let ranking: Vec<RankedSample> = chosen
        .iter()
        .enumerate()
        .map(|(rank, &index)| {
            let row = report.indices.binary_search(&index).expect("index from report");
            RankedSample {
                rank,
                index,
                label: report.labels[row],
                score: report.scores[row],
            }
        })
        .collect();
    let mut csv = String::from("rank,index,label,score\n");
    for r in &ranking {
        csv.push_str(&format!("{},{},{},{}\n", r.rank, r.index, r.label, curvd::metrics::format_f64(r.score)));
    }
    let path = args.out.join("ranking.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    if let Some(ds) = &dataset {
        let files = export_topk_images(ds, &report, args.top_k, end, &args.out.join("images"))?;
        p.note(&format!("wrote {} images", files.len()));
    }
    let digest = sha256_hex(&fs::read(&args.scores).map_err(|e| Error::io(&args.scores, e))?);
    let mut summary = RunSummary::new("rank", &digest);
    summary.num_samples = report.len();
    summary.ranking = Some(ranking);
    write_summary(&args.out, &summary)?;
    Ok(summary)
}

fn run_hist(args: &HistArgs) -> Result<RunSummary> {
    let report = read_scores(&args.scores, ScoreKind::Curvature)?;
    let scale = match args.scale {
        ScaleArg::Linear => HistogramScale::Linear,
        ScaleArg::Log => HistogramScale::Log,
    };
    let hist = histogram(&report.scores, args.bins, scale)?;
    prepare_out(&args.out)?;
    let flagged = report.corrupted.as_ref().map(|m| hist.count_masked(&report.scores, m));
    let mut csv = String::from("lower,upper,count,flagged\n");
    for (b, &count) in hist.counts.iter().enumerate() {
        let f = flagged.as_ref().map(|f| f[b].to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{count},{f}\n",
            curvd::metrics::format_f64(hist.edges[b]),
            curvd::metrics::format_f64(hist.edges[b + 1])
        ));
    }
    let path = args.out.join("histogram.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let digest = sha256_hex(&fs::read(&args.scores).map_err(|e| Error::io(&args.scores, e))?);
    let mut summary = RunSummary::new("hist", &digest);
    summary.num_samples = report.len();
    if hist.underflow > 0 {
        summary.notes.push(format!("{} nonpositive scores left out of the log scale", hist.underflow));
    }
    summary.histogram = Some(hist);
    write_summary(&args.out, &summary)?;
    Ok(summary)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("CURVD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(format!("CURVD_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn dispatch(cli: &Cli) -> Result<RunSummary> {
    configure_threads()?;
    let progress = Progress {
        quiet: cli.quiet,
        start: Instant::now(),
    };
    let summary = match &cli.command {
        Command::Spiral(a) => run_spiral(a, &progress),
        Command::Corrupt(a) => run_corrupt(a, &progress),
        Command::Score(a) => run_score(a, &progress),
        Command::Compare(a) => run_compare(a),
        Command::Rank(a) => run_rank(a, &progress),
        Command::Hist(a) => run_hist(a),
    }?;
    progress.note(&format!("done in {:.1}s", progress.start.elapsed().as_secs_f64()));
    Ok(summary)
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
    match dispatch(&cli).and_then(|s| s.to_json()) {
        Ok(json) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(json.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
