use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use multiband::band::{dump_bands, time_expand, Decomposer};
use multiband::harness::synthetic::{write_chirp_dataset, ChirpDatasetSpec};
use multiband::harness::{
    analyze_experiment, gain_over_baseband, run_experiment, EncoderChoice, ExperimentReport, ExperimentSpec,
    FeatureExtractor, Method, Stage, CHECKPOINT_DIR, GAIN_FILE, RESULTS_FILE,
};
use multiband::signal_io::load_clip;
use multiband::{Error, Result};

#[derive(Parser)]
#[command(name = "multiband", version, about = "Multi-band encoding of wide-band audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a clip into baseband signals and write them as WAV files.
    Decompose(DecomposeArgs),
    /// Compute and cache per-clip functionals for every requested stage.
    Encode(SpecArgs),
    /// Train every requested method and write its checkpoint.
    TrainFusion(SpecArgs),
    /// Write band-similarity and class-separation CSVs.
    Analyze(SpecArgs),
    /// Train, score Test and write the results and gain tables.
    Evaluate(SpecArgs),
    /// Write the synthetic two-class chirp dataset.
    Synthesize(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DecomposeStage {
    Mb,
    Bb,
    Te,
}

#[derive(Args)]
struct DecomposeArgs {
    clip: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 16_000)]
    model_rate: u32,
    #[arg(long, value_enum, default_value = "mb")]
    stage: DecomposeStage,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (JSON). Without it, --manifest and --output-dir are required.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// `builtin`, `tcp://host:port` or `stdio:<command>`.
    #[arg(long)]
    encoder: Option<EncoderChoice>,
    #[arg(long)]
    model_rate: Option<u32>,
    /// Comma-separated method tags, e.g. `BB,TE,MP`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dataset_id: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    context_seconds: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 400)]
    clips: usize,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    val: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SpecArgs {
    fn resolve(self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => {
                let (Some(manifest), Some(out)) = (&self.manifest, &self.output_dir) else {
                    return Err(Error::Invalid(
                        "either --config or both --manifest and --output-dir are required".into(),
                    ));
                };
                ExperimentSpec::new(manifest, Method::ALL.to_vec(), out)
            }
        };
        if let Some(v) = self.manifest {
            spec.manifest = v;
        }
        if let Some(v) = self.output_dir {
            spec.output_dir = v;
        }
        if let Some(v) = self.cache_dir {
            spec.cache_dir = Some(v);
        }
        if let Some(v) = self.encoder {
            spec.encoder = v;
        }
        if let Some(v) = self.model_rate {
            spec.model_rate_hz = v;
        }
        if let Some(v) = self.methods {
            spec.methods = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.epochs {
            spec.fusion.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            spec.fusion.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            spec.fusion.batch_size = v;
        }
        if let Some(v) = self.dataset_id {
            spec.dataset_id = Some(v);
        }
        if let Some(v) = self.workers {
            spec.workers = Some(v);
        }
        if let Some(v) = self.context_seconds {
            spec.context_seconds = Some(v);
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn decompose(args: DecomposeArgs) -> Result<()> {
    let clip = load_clip(&args.clip)?;
    let stem = args
        .clip
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    let bands = match args.stage {
        DecomposeStage::Mb => Decomposer::for_rates(clip.sample_rate_hz(), args.model_rate)?.decompose(&clip)?,
        DecomposeStage::Bb => vec![Decomposer::for_rates(clip.sample_rate_hz(), args.model_rate)?.baseband(&clip)?],
        DecomposeStage::Te => vec![time_expand(&clip, args.model_rate)?],
    };
    for path in dump_bands(&bands, &args.out, &stem)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn encode(spec: ExperimentSpec) -> Result<()> {
    let mut stages: Vec<Stage> = spec.methods.iter().map(|m| m.stage()).collect();
    stages.sort();
    stages.dedup();
    let mut extractor = FeatureExtractor::new(spec.clone())?;
    for stage in stages {
        let f = extractor.extract(stage)?;
        let (bands, dim) = f.features.first().map_or((0, 0), |s| (s.band_count(), s.dim()));
        println!("{}: {} clips, {bands} x {dim}", stage.tag(), f.features.len());
    }
    println!("cache: {}", spec.cache_dir().display());
    Ok(())
}

/// Prints per-method failures; true when there were none.
fn print_failures(report: &ExperimentReport) -> bool {
    for f in &report.failures {
        eprintln!("{} failed: {}", f.method, f.error);
    }
    report.failures.is_empty()
}

fn train_fusion(spec: ExperimentSpec) -> Result<bool> {
    let report = run_experiment(&spec)?;
    let dir = spec.output_dir.join(CHECKPOINT_DIR);
    for row in &report.rows {
        println!("{}", dir.join(format!("{}.json", row.method.tag())).display());
    }
    Ok(print_failures(&report))
}

fn evaluate(spec: ExperimentSpec) -> Result<bool> {
    let report = run_experiment(&spec)?;
    println!("{:<6} {:>8} {:>8} {:>8}", "method", "test %", "val %", "gain");
    let gains = gain_over_baseband(&report.rows).unwrap_or_default();
    for row in &report.rows {
        let val = row.val_accuracy.map_or("-".to_string(), |v| format!("{v:.1}"));
        let gain = gains
            .iter()
            .find(|g| g.method == row.method)
            .map_or("-".to_string(), |g| format!("{:+.1}", g.gain));
        println!("{:<6} {:>8.1} {val:>8} {gain:>8}", row.method.tag(), row.test_accuracy);
    }
    report_path(&spec.output_dir, RESULTS_FILE);
    if report.rows.iter().any(|r| r.method == Method::Baseband) {
        report_path(&spec.output_dir, GAIN_FILE);
    }
    Ok(print_failures(&report))
}

fn report_path(dir: &Path, name: &str) {
    println!("wrote {}", dir.join(name).display());
}

fn analyze(spec: ExperimentSpec) -> Result<()> {
    let report = analyze_experiment(&spec)?;
    if let Some(s) = &report.similarity {
        let cells: Vec<String> = s.per_band_mean_cosine.iter().map(|c| format!("{c:.3}")).collect();
        println!("band similarity: {}", cells.join(" "));
    }
    for (name, s) in &report.separation {
        println!(
            "{name:<6} intra {:.4} inter {:.4} separation {:.4}",
            s.intra, s.inter, s.separation
        );
    }
    Ok(())
}

fn synthesize(args: SynthArgs) -> Result<()> {
    let spec = ChirpDatasetSpec {
        clips: args.clips,
        train: args.train,
        val: args.val,
        seed: args.seed,
        ..Default::default()
    };
    println!("{}", write_chirp_dataset(&args.out, &spec)?.display());
    Ok(())
}

/// `Ok(false)` means the command ran but some methods failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Decompose(a) => decompose(a).map(|_| true),
        Command::Encode(a) => encode(a.resolve()?).map(|_| true),
        Command::TrainFusion(a) => train_fusion(a.resolve()?),
        Command::Analyze(a) => analyze(a.resolve()?).map(|_| true),
        Command::Evaluate(a) => evaluate(a.resolve()?),
        Command::Synthesize(a) => synthesize(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
