//! `umadkit` command-line front end.
//!
//! Exit status is 0 on success, 1 for configuration errors (bad flags,
//! invalid weights, inconsistent settings) and 2 for everything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use umadkit::diffs::SsimConfig;
use umadkit::features::ExtractorConfig;
use umadkit::manifest::load_manifest;
use umadkit::pipeline::{
    default_grid, parse_grid, run_baseline, run_evaluate, run_score, run_sweep, write_sweep,
    FeatureSource, MaskSource, RunConfig, SweepConfig,
};
use umadkit::scoring::Refinement;
use umadkit::synthgen::{describe, generate, SynthConfig, MANIFEST_FILE};
use umadkit::metrics::EvalReport;
use umadkit::{Error, FusionWeights, Result};

#[derive(Parser)]
#[command(name = "umadkit", version, about = "Mask-level anomaly scoring from world-model outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark dataset.
    Generate(GenerateArgs),
    /// Score every frame of a dataset with one setting.
    Score(ScoreArgs),
    /// Evaluate a directory of score maps.
    Evaluate(EvaluateArgs),
    /// Evaluate a grid of settings.
    Sweep(SweepArgs),
    /// Score and evaluate the pixel-wise L2 baseline.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    scenarios: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 0.5)]
    anomaly_rate: f64,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0.01)]
    drift: f64,
    #[arg(long, default_value_t = 2)]
    history: usize,
}

/// Settings shared by score and sweep.
#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 11)]
    ssim_window: usize,
    /// Override the manifest's prediction history depth.
    #[arg(long)]
    history: Option<usize>,
    /// Seed of the built-in feature extractor.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read feature stacks from this directory instead of running the extractor.
    #[arg(long)]
    features: Option<PathBuf>,
}

impl MapArgs {
    fn feature_source(&self) -> FeatureSource {
        match &self.features {
            Some(dir) => FeatureSource::Directory(dir.clone()),
            None => FeatureSource::Extractor(ExtractorConfig {
                seed: self.seed,
                ..ExtractorConfig::default()
            }),
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    maps: MapArgs,
    /// Fusion weights abs,mse,ssim,per,temp; fractions such as 1/3 are accepted.
    #[arg(long)]
    weights: String,
    #[arg(long, default_value = "none")]
    strategy: String,
    /// predicted or gt; defaults to predicted when the strategy uses masks.
    #[arg(long)]
    masks: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `score` or `baseline`.
    #[arg(long)]
    scores: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    maps: MapArgs,
    /// Grid file with one `a,m,s,p,t strategy [masks]` row per line; the
    /// standard 75-row grid is used when absent.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("UMADKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("UMADKIT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot set up {n} worker threads: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn report_text(report: &EvalReport) -> String {
    let [ap, fpr, auroc] = report.percent_fields();
    format!("{report}\nAP,FPR95,AUROC\n{ap},{fpr},{auroc}\n")
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        num_scenarios: a.scenarios,
        frames_per_scenario: a.frames,
        image_size: (a.height, a.width),
        anomaly_rate: a.anomaly_rate,
        recon_noise_sigma: a.noise,
        prediction_drift: a.drift,
        history_depth: a.history,
    };
    let manifest = generate(&cfg, &a.out)?;
    print!("{}", describe(&manifest)?);
    println!("manifest: {}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let strategy: Refinement = a.strategy.parse()?;
    let masks = match a.masks.as_deref() {
        Some(m) => Some(m.parse::<MaskSource>()?),
        None if strategy.uses_masks() => Some(MaskSource::Predicted),
        None => None,
    };
    let rc = RunConfig {
        strategy,
        masks,
        ssim: SsimConfig::with_window(a.maps.ssim_window),
        features: a.maps.feature_source(),
        history: a.maps.history,
        ..RunConfig::new(&a.maps.manifest, a.weights.parse::<FusionWeights>()?, &a.out)
    };
    let manifest = run_score(&rc)?;
    println!("scored {} frames into {}", manifest.frames().len(), a.out.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let text = report_text(&run_evaluate(&a.scores, &a.manifest)?);
    print!("{text}");
    if let Some(out) = a.out {
        write_file(&out, &text)?;
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let grid = match &a.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            parse_grid(&text)?
        }
        None => default_grid(),
    };
    let cfg = SweepConfig {
        ssim: SsimConfig::with_window(a.maps.ssim_window),
        features: a.maps.feature_source(),
        history: a.maps.history,
        ..SweepConfig::new(&a.maps.manifest)
    };
    let table = run_sweep(&cfg, &grid)?;
    write_sweep(&table, &a.out)?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_baseline(a: BaselineArgs) -> Result<()> {
    load_manifest(&a.manifest)?;
    let text = report_text(&run_baseline(&a.manifest, &a.out)?);
    write_file(&a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Score(a) => cmd_score(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Baseline(a) => cmd_baseline(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("umadkit: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
