//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::config::{MeanShapeMode, RunConfig};
use crate::dataset::{generate_synthetic, persist_features, synth::write_spec, SyntheticSpec};
use crate::evaluation::{emit_report, load_report, EvaluationReport, PostMethod};
use crate::experiment::{write_audit, write_fold_models, Experiment};
use crate::rvm::KernelKind;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "painfuse", version, about = "Frame-level pain intensity regression experiments")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Write GF and HOG feature files for a manifest.
    Extract(ExtractArgs),
    /// Train every leave-one-subject-out fold and write the fold models.
    Train(RunArgs),
    /// Run the full leave-one-subject-out evaluation and write the report files.
    Evaluate(RunArgs),
    /// Re-render report files from a saved report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    sequences: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    zero_fraction: Option<f64>,
    /// JSON spec file; flags override its keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `fold` or `full`.
    #[arg(long, value_parser = parse_mean_shape)]
    mean_shape: Option<MeanShapeMode>,
    /// Comma-separated channels; replaces configured columns.
    #[arg(long, value_delimiter = ',')]
    channels: Option<Vec<String>>,
    /// Comma-separated post-processing methods.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<PostMethod>>,
    /// Second-level kernel: `rbf` or `linear`.
    #[arg(long, value_parser = parse_kernel)]
    second_level: Option<KernelKind>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Feature file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write one CSV per channel next to the feature file.
    #[arg(long)]
    text: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Saved report.json.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mean_shape(s: &str) -> std::result::Result<MeanShapeMode, String> {
    match s {
        "fold" => Ok(MeanShapeMode::Fold),
        "full" => Ok(MeanShapeMode::Full),
        _ => Err(format!("expected fold or full, got {s}")),
    }
}

fn parse_method(s: &str) -> std::result::Result<PostMethod, String> {
    s.parse().map_err(|e: crate::evaluation::EvalError| e.to_string())
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    match s {
        "rbf" => Ok(KernelKind::Rbf),
        "linear" => Ok(KernelKind::Linear),
        _ => Err(format!("expected rbf or linear, got {s}")),
    }
}

impl RunArgs {
    /// Config file (if any) with flag overrides applied.
    fn resolve(&self, jobs: Option<usize>) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.seed, &self.dataset) {
            (Some(path), _, _) => RunConfig::load(path)?,
            (None, Some(seed), Some(dataset)) => RunConfig::new(seed, dataset),
            (None, _, _) => {
                return Err(Error::Invalid(
                    "either --config or both --seed and --dataset are required".into(),
                ))
            }
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(m) = self.mean_shape {
            cfg.mean_shape = m;
        }
        if let Some(c) = &self.channels {
            cfg.channels = c.clone();
            cfg.columns.clear();
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.clone();
        }
        if let Some(k) = self.second_level {
            cfg.fusion.second_level = k;
        }
        if let Some(j) = jobs {
            cfg.jobs = j;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format(|buf, record| writeln!(buf, "{:<5} {}", record.level(), record.args()))
        .try_init();
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(args: &SynthArgs, jobs: usize) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.subjects {
        spec.n_subjects = v;
    }
    if let Some(v) = args.sequences {
        spec.sequences_per_subject = v;
    }
    if let Some(v) = args.frames {
        spec.frames_per_sequence = v;
    }
    if let Some(v) = args.zero_fraction {
        spec.zero_fraction = v;
    }
    spec.validate()?;
    let data = with_pool(jobs, || Ok(generate_synthetic(&spec, &args.out)?))?;
    write_spec(&spec, &args.out.join("spec.json"))?;
    let stats = data.dataset.stats();
    info!(
        "wrote {} frames of {} subjects to {} (zero fraction {:.4})",
        stats.frames,
        stats.subjects,
        data.manifest_path.display(),
        stats.zero_fraction
    );
    Ok(())
}

fn extract(args: &ExtractArgs, jobs: Option<usize>) -> Result<()> {
    let cfg = args.run.resolve(jobs)?;
    let tables = with_pool(cfg.jobs, || Experiment::load(cfg.clone())?.extract_all())?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    persist_features(&tables, &args.out)?;
    if args.text {
        for t in &tables {
            let path = args.out.with_extension(format!("{}.csv", t.channel));
            fs::write(&path, t.to_text()).map_err(|e| Error::io(&path, e))?;
        }
    }
    info!("wrote {} channel(s) to {}", tables.len(), args.out.display());
    Ok(())
}

fn run(args: &RunArgs, jobs: Option<usize>, evaluate: bool) -> Result<()> {
    let cfg = args.resolve(jobs)?;
    let out_dir = cfg.output.clone();
    let outcome = with_pool(cfg.jobs, || Experiment::load(cfg)?.run(evaluate))?;
    create_dir(&out_dir)?;
    write_audit(&outcome.audit, &out_dir.join("audit.json"))?;
    if !outcome.audit.is_clean() {
        for v in &outcome.audit.violations {
            warn!("[fold {}] {} includes subject {}", v.fold, v.artifact, v.subject);
        }
        return Err(Error::Leakage(format!(
            "{} violation(s); see {}",
            outcome.audit.violations.len(),
            out_dir.join("audit.json").display()
        )));
    }
    match outcome.report {
        Some(report) => render(&report, &out_dir),
        None => {
            let paths = write_fold_models(&outcome.folds, &out_dir.join("models"))?;
            info!("wrote {} fold model file(s) to {}", paths.len(), out_dir.join("models").display());
            Ok(())
        }
    }
}

fn render(report: &EvaluationReport, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let written = emit_report(report, out_dir)?;
    let table = out_dir.join("comparison.csv");
    let text = fs::read_to_string(&table).map_err(|e| Error::io(&table, e))?;
    print!("{text}");
    info!("wrote {} report file(s) to {}", written.len(), out_dir.display());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let jobs = cli.jobs;
    match &cli.command {
        Command::Synth(a) => synth(a, jobs.unwrap_or(0)),
        Command::Extract(a) => extract(a, jobs),
        Command::Train(a) => run(a, jobs, false),
        Command::Evaluate(a) => run(a, jobs, true),
        Command::Report(a) => render(&load_report(&a.report)?, &a.out),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code:
/// 0 on success, 1 on usage or validation errors, 2 on I/O errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.quiet);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
