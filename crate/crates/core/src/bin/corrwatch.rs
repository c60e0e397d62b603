use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use corrwatch::harness::{
    default_stride, phase_transition, GroupSize, PhaseTransitionConfig, Pipeline, PipelineParams,
};
use corrwatch::ingest::{load_csv, load_labels, CsvSchema, Dataset, LabelRegistry};
use corrwatch::localize::{Algorithm, DEFAULT_RESTARTS_SQRT_N};
use corrwatch::synth::{generate_walks, WalkConfig};
use corrwatch::{Error, Result};

/// Detect and localize anomalously correlated sensor groups.
#[derive(Parser)]
#[command(name = "corrwatch", version)]
struct Cli {
    /// TOML file with default values for any flag; flags given on the
    /// command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Spectral-gap detection on one window.
    Detect(DetectArgs),
    /// Localize a correlated group on one window, regardless of detection.
    Localize(LocalizeArgs),
    /// Run the full pipeline over a sweep of windows.
    Run(RunArgs),
    /// Benchmark experiments.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Eigenvalues of one window's correlation matrix.
    Spectrum(SpectrumArgs),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Lazy random walks with one planted master-follower group.
    Walks(WalksArgs),
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Success probabilities of detection and recovery across walk counts.
    PhaseTransition(PhaseArgs),
}

#[derive(Args)]
struct WalksArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    /// Number of time steps.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    pstep: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_data: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Data CSV: a time column followed by one column per sensor.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    delimiter: Option<char>,
    /// Expected row spacing (steps, or seconds for timestamps).
    #[arg(long)]
    interval: Option<i64>,
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long)]
    tau_av: Option<usize>,
    #[arg(long)]
    tau_corr: Option<usize>,
    /// Last step of the window; defaults to the last valid step.
    #[arg(long)]
    t_end: Option<usize>,
}

#[derive(Args)]
struct LocalizeFlags {
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Group size: `auto` (√N), an integer, or `elbow:EPS`.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    localize: LocalizeFlags,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    tau_av: Option<usize>,
    #[arg(long)]
    tau_corr: Option<usize>,
    /// Steps between window ends; defaults to half of tau_av.
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    localize: LocalizeFlags,
    /// Score selections against the sensors carrying this tag.
    #[arg(long)]
    truth_tag: Option<String>,
}

#[derive(Args)]
struct PhaseArgs {
    #[arg(long)]
    k0: Option<usize>,
    /// Comma-separated walk counts.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of time steps per walk.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    tau_av: Option<usize>,
    #[arg(long)]
    tau_corr: Option<usize>,
    /// Also write the success table as CSV.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n: Option<usize>,
    k0: Option<usize>,
    t: Option<usize>,
    p0: Option<f64>,
    pstep: Option<f64>,
    rho: Option<f64>,
    seed: Option<u64>,
    delimiter: Option<char>,
    interval: Option<i64>,
    tau_av: Option<usize>,
    tau_corr: Option<usize>,
    t_end: Option<usize>,
    stride: Option<usize>,
    algorithm: Option<Algorithm>,
    k: Option<KSetting>,
    restarts: Option<usize>,
    n_grid: Option<Vec<usize>>,
    trials: Option<usize>,
    truth_tag: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum KSetting {
    Int(usize),
    Text(String),
}

impl KSetting {
    fn text(&self) -> String {
        match self {
            KSetting::Int(k) => k.to_string(),
            KSetting::Text(s) => s.clone(),
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::InvalidParameter(format!("config {}: {e}", path.display())))
}

fn parse_group_size(text: &str) -> Result<GroupSize> {
    let text = text.trim();
    if text.eq_ignore_ascii_case("auto") {
        return Ok(GroupSize::SqrtN);
    }
    if let Some(eps) = text.strip_prefix("elbow:") {
        return eps
            .parse()
            .map(GroupSize::Elbow)
            .map_err(|_| Error::InvalidParameter(format!("bad elbow threshold `{eps}`")));
    }
    text.parse().map(GroupSize::Fixed).map_err(|_| {
        Error::InvalidParameter(format!(
            "k must be auto, an integer or elbow:EPS, got `{text}`"
        ))
    })
}

fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::InvalidParameter(format!("delimiter `{c}` is not ASCII")))
}

fn load_dataset(args: &DataArgs, cfg: &FileConfig) -> Result<Dataset> {
    let schema = CsvSchema {
        delimiter: delimiter_byte(args.delimiter.or(cfg.delimiter).unwrap_or(','))?,
        interval: args.interval.or(cfg.interval),
    };
    load_csv(BufReader::new(File::open(&args.data)?), &schema)
}

fn load_registry(path: Option<&Path>) -> Result<LabelRegistry> {
    match path {
        Some(p) => load_labels(BufReader::new(File::open(p)?)),
        None => Ok(LabelRegistry::new()),
    }
}

fn params(
    tau_av: Option<usize>,
    tau_corr: Option<usize>,
    flags: Option<&LocalizeFlags>,
    cfg: &FileConfig,
) -> Result<PipelineParams> {
    let base = PipelineParams::default();
    let k = flags
        .and_then(|f| f.k.clone())
        .or_else(|| cfg.k.as_ref().map(KSetting::text));
    Ok(PipelineParams {
        tau_av: tau_av.or(cfg.tau_av).unwrap_or(base.tau_av),
        tau_corr: tau_corr.or(cfg.tau_corr).unwrap_or(base.tau_corr),
        group_size: k
            .as_deref()
            .map(parse_group_size)
            .transpose()?
            .unwrap_or(base.group_size),
        algorithm: flags
            .and_then(|f| f.algorithm)
            .or(cfg.algorithm)
            .unwrap_or(base.algorithm),
        restarts: flags
            .and_then(|f| f.restarts)
            .or(cfg.restarts)
            .unwrap_or(DEFAULT_RESTARTS_SQRT_N),
        seed: flags.and_then(|f| f.seed).or(cfg.seed).unwrap_or(base.seed),
    })
}

fn resolve_t_end(pipeline: &Pipeline, requested: Option<usize>) -> Result<usize> {
    let (_, last) = pipeline.t_end_range()?;
    Ok(requested.unwrap_or(last))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(io::Error::other(e)))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn synth_walks(args: &WalksArgs, cfg: &FileConfig, out: Option<&Path>) -> Result<()> {
    let base = WalkConfig::default();
    let config = WalkConfig {
        n: args.n.or(cfg.n).unwrap_or(base.n),
        k0: args.k0.or(cfg.k0).unwrap_or(base.k0),
        steps: args.t.or(cfg.t).unwrap_or(base.steps),
        p0: args.p0.or(cfg.p0).unwrap_or(base.p0),
        p_step: args.pstep.or(cfg.pstep).unwrap_or(base.p_step),
        rho: args.rho.or(cfg.rho).unwrap_or(base.rho),
        coupled_steps: None,
        seed: args.seed.or(cfg.seed).unwrap_or(base.seed),
    };
    let walks = generate_walks(&config)?;
    walks
        .dataset
        .write_csv(BufWriter::new(File::create(&args.out_data)?))?;
    walks
        .labels
        .write_csv(BufWriter::new(File::create(&args.out_labels)?))?;
    emit(
        &json!({
            "config": config,
            "data": args.out_data,
            "labels": args.out_labels,
            "truth": walks.truth_ids(),
            "master": walks.master.map(|i| walks.dataset.sensors()[i].clone()),
        }),
        out,
    )
}

fn detect(args: &DetectArgs, cfg: &FileConfig, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(&args.data, cfg)?;
    let labels = LabelRegistry::new();
    let p = params(args.window.tau_av, args.window.tau_corr, None, cfg)?;
    let pipeline = Pipeline::new(&ds, &labels, p)?;
    let t_end = resolve_t_end(&pipeline, args.window.t_end.or(cfg.t_end))?;
    let cm = pipeline.correlation(t_end)?;
    let report = corrwatch::spectral::detect(cm.matrix()).map_err(|e| Error::Stage {
        stage: "spectral",
        source: Box::new(e),
    })?;
    emit(
        &json!({
            "t_end": t_end,
            "time": ds.time_axis().label(t_end),
            "excluded": cm.excluded(),
            "spectrum": report,
        }),
        out,
    )
}

fn localize(args: &LocalizeArgs, cfg: &FileConfig, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(&args.data, cfg)?;
    let labels = load_registry(args.labels.as_deref())?;
    let p = params(
        args.window.tau_av,
        args.window.tau_corr,
        Some(&args.localize),
        cfg,
    )?;
    let pipeline = Pipeline::new(&ds, &labels, p)?;
    let t_end = resolve_t_end(&pipeline, args.window.t_end.or(cfg.t_end))?;
    let analysis = pipeline.analyze_forced(t_end)?;
    let ids = analysis.matrix.sensors();
    let result = analysis.localization.as_ref().expect("forced localization");
    let to_ids = |v: &[usize]| v.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
    emit(
        &json!({
            "t_end": t_end,
            "detected": analysis.record.detected,
            "margin": analysis.record.margin,
            "excluded": analysis.record.excluded,
            "low_confidence_k": analysis.record.low_confidence_k,
            "localization": result,
            "selected_ids": to_ids(&result.selected),
            "column_ids": result.columns.as_deref().map(to_ids),
            "causes": analysis.record.causes,
            "untagged_selected": analysis.record.untagged_selected,
        }),
        out,
    )
}

fn run(args: &RunArgs, cfg: &FileConfig, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(&args.data, cfg)?;
    let labels = load_registry(args.labels.as_deref())?;
    let p = params(args.tau_av, args.tau_corr, Some(&args.localize), cfg)?;
    let stride = args
        .stride
        .or(cfg.stride)
        .unwrap_or_else(|| default_stride(&p));
    let mut pipeline = Pipeline::new(&ds, &labels, p)?;
    if let Some(tag) = args.truth_tag.as_ref().or(cfg.truth_tag.as_ref()) {
        let truth = (0..ds.n_sensors())
            .filter(|&i| {
                labels
                    .get(&ds.sensors()[i])
                    .is_some_and(|tags| tags.iter().any(|t| t == tag))
            })
            .collect();
        pipeline = pipeline.with_truth(truth);
    }
    emit(&pipeline.sweep(stride)?, out)
}

fn eval_phase(args: &PhaseArgs, cfg: &FileConfig, out: Option<&Path>) -> Result<()> {
    let base = PhaseTransitionConfig::default();
    let mut config = PhaseTransitionConfig {
        k0: args.k0.or(cfg.k0).unwrap_or(base.k0),
        n_grid: args
            .n_grid
            .clone()
            .or_else(|| cfg.n_grid.clone())
            .unwrap_or(base.n_grid),
        trials: args.trials.or(cfg.trials).unwrap_or(base.trials),
        seed: args.seed.or(cfg.seed).unwrap_or(base.seed),
        ..base
    };
    config.params = params(args.tau_av, args.tau_corr, None, cfg)?;
    config.walks.steps = args.t.or(cfg.t).unwrap_or(config.walks.steps);
    let report = phase_transition(&config)?;
    if let Some(path) = &args.out_csv {
        report.write_csv(BufWriter::new(File::create(path)?))?;
    }
    emit(
        &json!({
            "k0": report.k0,
            "trials": report.trials,
            "seed": report.seed,
            "points": report.points,
            "half_crossing": report.half_crossing(),
            "pooled_half_given_detection": report.pooled_half_given_detection(),
        }),
        out,
    )
}

fn spectrum(args: &SpectrumArgs, cfg: &FileConfig, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(&args.data, cfg)?;
    let labels = LabelRegistry::new();
    let p = params(args.window.tau_av, args.window.tau_corr, None, cfg)?;
    let pipeline = Pipeline::new(&ds, &labels, p)?;
    let t_end = resolve_t_end(&pipeline, args.window.t_end.or(cfg.t_end))?;
    let cm = pipeline.correlation(t_end)?;
    let eigenvalues = corrwatch::spectral::eigen_spectrum(cm.matrix())?;
    if let Some(path) = &args.out_csv {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "index,eigenvalue")?;
        for (i, l) in eigenvalues.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1)?;
        }
        w.flush()?;
    }
    emit(&json!({ "t_end": t_end, "eigenvalues": eigenvalues }), out)
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        e if e.is_numerical() => 3,
        e if e.is_io() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.as_deref();
    let result = read_config(cli.config.as_deref()).and_then(|cfg| match &cli.command {
        Command::Synth(SynthCommand::Walks(a)) => synth_walks(a, &cfg, out),
        Command::Detect(a) => detect(a, &cfg, out),
        Command::Localize(a) => localize(a, &cfg, out),
        Command::Run(a) => run(a, &cfg, out),
        Command::Eval(EvalCommand::PhaseTransition(a)) => eval_phase(a, &cfg, out),
        Command::Spectrum(a) => spectrum(a, &cfg, out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
