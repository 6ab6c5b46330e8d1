use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pixmix::adversary::{attack_report, load_dataset, load_model, AttackConfig};
use pixmix::fractal::{generate_mixing_set, FractalConfig};
use pixmix::metrics::{evaluate, gen_synthetic_anomalies, ingest_predictions, AnomalyKind, Normalizers};
use pixmix::mixing::{augment_dataset, DatasetSummary, MixMode, PixMixConfig, Preset};
use pixmix::mixing_set::{MixingManifest, MixingSource, PictureCache, SourceTag};
use pixmix::{AugConfig, RngStream};

/// Manifests up to this size are decoded once up front.
const PRELOAD_LIMIT: usize = 4096;

#[derive(Parser, Debug)]
#[command(name = "pixmix", version, about = "PixMix augmentation and safety-metric evaluation")]
struct Cli {
    /// Root seed for every random decision.
    #[arg(long, global = true, env = "PIXMIX_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: logical CPUs). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Augment every PNG under a directory.
    Augment(AugmentArgs),
    /// Render IFS fractals and write a mixing-set manifest.
    GenFractals(GenFractalsArgs),
    /// Mixing-set manifests.
    Manifest {
        #[command(subcommand)]
        action: ManifestCommand,
    },
    /// Compute safety metrics from a prediction log.
    Eval(EvalArgs),
    /// PGD attack on a toy classifier.
    Attack(AttackArgs),
    /// Write synthetic anomaly images.
    SynthAnomalies(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Cifar,
    Imagenet,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Full,
    InputOnly,
    MixsetOnly,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Manifest JSON; not needed with `--mode input-only`.
    #[arg(long)]
    mixing_set: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cifar")]
    preset: PresetArg,
    /// Overrides the preset's maximum round count.
    #[arg(long)]
    k: Option<usize>,
    /// Overrides the preset's Beta parameter.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    severity: u8,
    /// Output side length; overrides the preset.
    #[arg(long)]
    size: Option<usize>,
    /// Comma-separated source tags to keep, e.g. `fractal,feature_vis`.
    #[arg(long, value_delimiter = ',')]
    sources: Vec<String>,
    /// Grid such as "k=2,3,4 beta=3,4,5"; writes OUT/k{k}_beta{beta}/.
    #[arg(long)]
    sweep: Option<String>,
    /// Optional JSON summary path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenFractalsArgs {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum ManifestCommand {
    /// Scan picture directories into a manifest.
    Build(ManifestArgs),
}

#[derive(Args, Debug)]
struct ManifestArgs {
    #[arg(long)]
    fractals: Vec<PathBuf>,
    #[arg(long)]
    feature_vis: Vec<PathBuf>,
    #[arg(long)]
    other: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    normalizers: Option<PathBuf>,
    /// Calibration bins (default floor(sqrt(n)) per split).
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-corruption CSV table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2.0 / 255.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// Default 2.5 * epsilon / steps.
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    no_random_start: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Gaussian,
    Rademacher,
    Blobs,
}

/// Whether every item succeeded.
enum Outcome {
    Complete,
    PartialFailure,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(values: &str, key: &str) -> anyhow::Result<Vec<T>> {
    values
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("bad value {v:?} for {key} in --sweep"))
        })
        .collect()
}

/// Parses "k=2,3,4 beta=3,4,5" into its `(k, beta)` grid.
fn parse_sweep(spec: &str, base: &PixMixConfig) -> anyhow::Result<Vec<(usize, f64)>> {
    let (mut ks, mut betas) = (vec![base.k], vec![base.beta]);
    for part in spec.split_whitespace() {
        match part.split_once('=') {
            Some(("k", v)) => ks = parse_list(v, "k")?,
            Some(("beta", v)) => betas = parse_list(v, "beta")?,
            _ => bail!("--sweep expects terms like k=2,3,4 beta=3,4,5, got {part:?}"),
        }
    }
    Ok(ks
        .iter()
        .flat_map(|&k| betas.iter().map(move |&b| (k, b)))
        .collect())
}

fn load_source(args: &AugmentArgs, mode: MixMode) -> anyhow::Result<Box<dyn MixingSource>> {
    let Some(path) = &args.mixing_set else {
        if mode == MixMode::InputOnly {
            return Ok(Box::new(PictureCache::new(Vec::new())));
        }
        bail!("--mixing-set is required unless --mode input-only");
    };
    let mut manifest = MixingManifest::load(path)?;
    if !args.sources.is_empty() {
        let tags = args
            .sources
            .iter()
            .map(|s| s.parse::<SourceTag>())
            .collect::<Result<Vec<_>, _>>()?;
        manifest = manifest.filter_sources(&tags);
    }
    if manifest.is_empty() && mode != MixMode::InputOnly {
        bail!("{}: no mixing pictures left after filtering", path.display());
    }
    if manifest.len() <= PRELOAD_LIMIT {
        Ok(Box::new(manifest.preload()?))
    } else {
        Ok(Box::new(manifest))
    }
}

fn augment(args: &AugmentArgs, stream: &RngStream, workers: usize) -> anyhow::Result<Outcome> {
    let mode = match args.mode {
        ModeArg::Full => MixMode::Full,
        ModeArg::InputOnly => MixMode::InputOnly,
        ModeArg::MixsetOnly => MixMode::MixsetOnly,
    };
    let mut config = PixMixConfig::preset(match args.preset {
        PresetArg::Cifar => Preset::Cifar,
        PresetArg::Imagenet => Preset::Imagenet,
    });
    config.mode = mode;
    config.aug = AugConfig::with_severity(args.severity)?;
    config.k = args.k.unwrap_or(config.k);
    config.beta = args.beta.unwrap_or(config.beta);
    config.target_size = args.size.unwrap_or(config.target_size);
    config.validate()?;

    let source = load_source(args, mode)?;
    let runs: Vec<(PixMixConfig, PathBuf)> = match &args.sweep {
        None => vec![(config, args.out.clone())],
        Some(spec) => parse_sweep(spec, &config)?
            .into_iter()
            .map(|(k, beta)| {
                let cfg = PixMixConfig { k, beta, ..config };
                (cfg, args.out.join(format!("k{k}_beta{beta}")))
            })
            .collect(),
    };
    for (cfg, _) in &runs {
        cfg.validate()?;
    }

    #[derive(Serialize)]
    struct Run<'a> {
        out: &'a Path,
        config: &'a PixMixConfig,
        summary: DatasetSummary,
    }
    let mut reports = Vec::new();
    let mut failed = false;
    for (cfg, out) in &runs {
        let summary = augment_dataset(&args.input, source.as_ref(), cfg, stream, out, workers)?;
        println!(
            "{}: {} augmented, {} failed (k={}, beta={}) in {:.2}s",
            out.display(),
            summary.count,
            summary.failures.len(),
            cfg.k,
            cfg.beta,
            summary.duration_secs
        );
        for (path, err) in &summary.failures {
            eprintln!("failed: {}: {err}", path.display());
        }
        failed |= !summary.failures.is_empty();
        reports.push(Run {
            out,
            config: cfg,
            summary,
        });
    }
    if let Some(path) = &args.report {
        write_json(path, &reports)?;
    }
    Ok(if failed { Outcome::PartialFailure } else { Outcome::Complete })
}

fn gen_fractals(args: &GenFractalsArgs, stream: &RngStream) -> anyhow::Result<Outcome> {
    let manifest = generate_mixing_set(stream, args.count, &FractalConfig::new(args.size), &args.out)?;
    println!(
        "wrote {} fractals ({}x{}) and manifest.json to {}",
        manifest.len(),
        args.size,
        args.size,
        args.out.display()
    );
    Ok(Outcome::Complete)
}

fn manifest_build(args: &ManifestArgs) -> anyhow::Result<Outcome> {
    let dirs: Vec<(PathBuf, SourceTag)> = args
        .fractals
        .iter()
        .map(|d| (d.clone(), SourceTag::Fractal))
        .chain(args.feature_vis.iter().map(|d| (d.clone(), SourceTag::FeatureVis)))
        .chain(args.other.iter().map(|d| (d.clone(), SourceTag::Other)))
        .collect();
    if dirs.is_empty() {
        bail!("give at least one of --fractals, --feature-vis, --other");
    }
    let (manifest, report) = MixingManifest::build(&dirs)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    manifest.save(&args.out)?;
    println!(
        "{}: {} entries ({} scanned, {} skipped)",
        args.out.display(),
        manifest.len(),
        report.scanned,
        report.failures.len()
    );
    for (path, err) in &report.failures {
        eprintln!("skipped: {}: {err}", path.display());
    }
    Ok(if report.failures.is_empty() {
        Outcome::Complete
    } else {
        Outcome::PartialFailure
    })
}

fn eval(args: &EvalArgs) -> anyhow::Result<Outcome> {
    let records = ingest_predictions(&args.predictions)?;
    let normalizers: Option<Normalizers> = match &args.normalizers {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
    };
    let report = evaluate(&records, normalizers.as_ref(), args.bins)?;
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["corruption", "ce"])?;
        if let Some(m) = &report.mce {
            for (c, v) in &m.per_corruption {
                w.write_record([c.as_str(), &v.to_string()])?;
            }
        }
        w.flush()?;
    }
    println!("{report}");
    Ok(Outcome::Complete)
}

fn attack(args: &AttackArgs, stream: &RngStream) -> anyhow::Result<Outcome> {
    let model = load_model(&args.model)?;
    let data = load_dataset(&args.data)?;
    let mut config = AttackConfig::new(args.epsilon, args.steps);
    if let Some(s) = args.step_size {
        config.step_size = s;
    }
    config.random_start = !args.no_random_start;
    config.validate()?;
    let report = attack_report(&model, &data, &config, stream)?;
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    println!(
        "{} examples, epsilon {:.6}, {} steps: clean error {:.2}%, adversarial error {:.2}%",
        report.examples,
        config.epsilon,
        config.steps,
        100.0 * report.clean_error,
        100.0 * report.adversarial_error
    );
    Ok(Outcome::Complete)
}

fn synth(args: &SynthArgs, stream: &RngStream) -> anyhow::Result<Outcome> {
    let kind = match args.kind {
        KindArg::Gaussian => AnomalyKind::Gaussian,
        KindArg::Rademacher => AnomalyKind::Rademacher,
        KindArg::Blobs => AnomalyKind::Blobs,
    };
    let paths = gen_synthetic_anomalies(kind, stream, args.count, args.size, &args.out)?;
    println!("wrote {} {} images to {}", paths.len(), kind.name(), args.out.display());
    Ok(Outcome::Complete)
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let workers = match cli.workers {
        Some(0) => bail!("--workers must be >= 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let root = RngStream::new(cli.seed);
    pool.install(|| match &cli.command {
        Command::Augment(a) => augment(a, &root.split("augment"), workers),
        Command::GenFractals(a) => gen_fractals(a, &root.split("gen-fractals")),
        Command::Manifest {
            action: ManifestCommand::Build(a),
        } => manifest_build(a),
        Command::Eval(a) => eval(a),
        Command::Attack(a) => attack(a, &root.split("attack")),
        Command::SynthAnomalies(a) => synth(a, &root.split("synth-anomalies")),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    match run(&cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::PartialFailure) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let stalled = matches!(
                e.downcast_ref::<pixmix::Error>(),
                Some(pixmix::Error::GenerationStalled { .. })
            );
            ExitCode::from(if stalled { 1 } else { 2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid() {
        let base = PixMixConfig::default();
        let grid = parse_sweep("k=2,3 beta=3,4,5", &base).unwrap();
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[0], (2, 3.0));
        assert_eq!(grid[5], (3, 5.0));
        assert_eq!(parse_sweep("beta=1", &base).unwrap(), vec![(4, 1.0)]);
        assert!(parse_sweep("gamma=1", &base).is_err());
        assert!(parse_sweep("k=x", &base).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
