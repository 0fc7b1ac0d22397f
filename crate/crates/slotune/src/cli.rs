//! Command-line interface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use slotune_core::check::calibration_suite;
use slotune_core::stats::TestMethod;
use slotune_core::{Config, DispatchMode, HardwareProfile, OptimizerKind, Simulator, TrialRecord};

use crate::config::{FileConfig, Overrides};
use crate::error::{Error, Result};
use crate::log::{log_file_name, read_log};
use crate::report::{analyze, load_logs, load_summary_csv, render_csv, render_text, write_summary_csv};
use crate::runner::{run_multiseed, run_study, RunOptions};

#[derive(Debug, Parser)]
#[command(
    name = "slotune",
    version,
    about = "Crash-aware autotuning of LLM serving configurations against a simulated engine"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every optimizer on every seed; re-running resumes the directory.
    RunMultiseed(RunMultiseedArgs),
    /// Run or resume a single study.
    RunStudy(RunStudyArgs),
    /// Cross-seed statistics from trial logs or a summary CSV.
    Analyze(AnalyzeArgs),
    /// Print one trial of a log.
    ShowTrial(ShowTrialArgs),
    /// Check the simulator against its calibration targets.
    CalibrationCheck(CalibrationArgs),
}

#[derive(Debug, Args)]
pub struct RunMultiseedArgs {
    /// Directory holding one log per study; required here or in the settings file.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// [default: 42 142 242 342 442]
    #[arg(long, num_args = 1..)]
    pub seeds: Option<Vec<u64>>,
    /// random, tba, tpe, tba-tpe [default: random tba-tpe]
    #[arg(long, num_args = 1..)]
    pub optimizers: Option<Vec<OptimizerKind>>,
    /// Trials per study [default: 15].
    #[arg(long)]
    pub budget: Option<u32>,
    /// Request dispatch: concurrent or sequential.
    #[arg(long)]
    pub harness: Option<DispatchMode>,
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds run in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Stop after this many new trials; run again to continue.
    #[arg(long)]
    pub max_trials: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunStudyArgs {
    /// random, tba, tpe or tba-tpe.
    #[arg(long, default_value = "tba-tpe")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub budget: Option<u32>,
    #[arg(long)]
    pub harness: Option<DispatchMode>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Log file; defaults to the standard name inside `output_dir`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Text,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Approximate,
    Exact,
}

impl From<Method> for TestMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Approximate => TestMethod::Approximate,
            Method::Exact => TestMethod::Exact,
        }
    }
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true))]
pub struct AnalyzeArgs {
    /// Directory of trial logs.
    #[arg(long, group = "input")]
    pub input_dir: Option<PathBuf>,
    /// CSV of per-seed summaries.
    #[arg(long, group = "input")]
    pub input_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Emit::Text)]
    pub emit: Emit,
    #[arg(long, value_enum, default_value_t = Method::Approximate)]
    pub method: Method,
    /// Also write the per-seed summaries as CSV.
    #[arg(long)]
    pub summaries_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShowTrialArgs {
    /// A trial log (.jsonl).
    #[arg(long)]
    pub file: PathBuf,
    /// 1-based trial position in the file.
    #[arg(long)]
    pub index: u32,
}

#[derive(Debug, Args)]
pub struct CalibrationArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return 1;
            }
            let _ = write!(out, "{text}");
            return 0;
        }
    };
    match run(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let text = match cli.command {
        Command::RunMultiseed(args) => run_multiseed_cmd(args, err)?,
        Command::RunStudy(args) => run_study_cmd(args, err)?,
        Command::Analyze(args) => analyze_cmd(args)?,
        Command::ShowTrial(args) => show_trial_cmd(args)?,
        Command::CalibrationCheck(args) => return calibration_cmd(args, out),
    };
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn warn_fallback(fallback: bool, err: &mut dyn Write) {
    if fallback {
        let _ = writeln!(
            err,
            "warning: model not in the registry; using fallback memory constants"
        );
    }
}

fn run_multiseed_cmd(args: RunMultiseedArgs, err: &mut dyn Write) -> Result<String> {
    let file = FileConfig::load_optional(args.config.as_deref())?;
    let settings = file.resolve(Overrides {
        output_dir: args.output_dir,
        seeds: args.seeds,
        optimizers: args.optimizers,
        budget: args.budget,
        harness: args.harness,
        jobs: args.jobs,
    })?;
    warn_fallback(settings.fallback_hardware, err);
    let dir = settings
        .output_dir
        .ok_or_else(|| Error::InvalidSettings("an output directory is required (--output-dir or output_dir)".into()))?;
    let options = RunOptions {
        jobs: settings.jobs,
        max_new_trials: args.max_trials,
    };
    let outcome = run_multiseed(&dir, &settings.matrix, &Simulator::default(), options)?;

    let mut text = String::new();
    for s in &outcome.studies {
        let _ = write!(
            text,
            "{:<8} seed {:<6} {:>3}/{} trials  {}",
            s.optimizer.as_str(),
            s.seed,
            s.trials,
            s.budget,
            s.file
        );
        if let Some(e) = &s.error {
            let _ = write!(text, "  FAILED: {e}");
        }
        text.push('\n');
    }
    let complete = outcome.studies.iter().filter(|s| s.complete).count();
    let _ = writeln!(
        text,
        "{} new trials; {complete} of {} studies complete in {}",
        outcome.new_trials,
        outcome.studies.len(),
        dir.display()
    );
    if outcome.failures() > 0 {
        let _ = err.write_all(text.as_bytes());
        return Err(Error::StudiesFailed {
            failed: outcome.failures(),
            total: outcome.studies.len(),
        });
    }
    Ok(text)
}

fn run_study_cmd(args: RunStudyArgs, err: &mut dyn Write) -> Result<String> {
    let file = FileConfig::load_optional(args.config.as_deref())?;
    let settings = file.resolve(Overrides {
        budget: args.budget,
        harness: args.harness,
        ..Overrides::default()
    })?;
    warn_fallback(settings.fallback_hardware, err);
    let path = match (args.output, settings.output_dir) {
        (Some(p), _) => p,
        (None, Some(dir)) => dir.join(log_file_name(args.optimizer, args.seed)),
        (None, None) => {
            return Err(Error::InvalidSettings(
                "a log path is required (--output or output_dir)".into(),
            ))
        }
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let spec = settings.matrix.spec(args.optimizer, args.seed);
    let status = run_study(&spec, &path, &mut Simulator::default())?;
    Ok(format!(
        "{} seed {}: {}/{} trials in {}\n",
        status.optimizer,
        status.seed,
        status.trials,
        status.budget,
        path.display()
    ))
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<String> {
    let loaded = match (&args.input_dir, &args.input_csv) {
        (Some(dir), _) => load_logs(dir)?,
        (None, Some(csv)) => load_summary_csv(csv)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    if let Some(path) = &args.summaries_out {
        fs::write(path, write_summary_csv(&loaded.summaries)).map_err(|source| Error::Write {
            path: path.clone(),
            source,
        })?;
    }
    let report = analyze(&loaded, args.method.into())?;
    Ok(match args.emit {
        Emit::Text => render_text(&report, &loaded),
        Emit::Csv => render_csv(&report),
    })
}

fn show_trial_cmd(args: ShowTrialArgs) -> Result<String> {
    let records = read_log(&args.file)?;
    let record = (args.index as usize)
        .checked_sub(1)
        .and_then(|i| records.get(i))
        .ok_or_else(|| Error::IndexOutOfRange {
            path: args.file.clone(),
            index: args.index,
            len: records.len(),
        })?;
    Ok(format_trial(record))
}

fn format_config(c: &Config) -> String {
    format!(
        "quantization={} max_num_seqs={} max_num_batched_tokens={} gpu_memory_utilization={:.4} max_model_len={} enforce_eager={} enable_chunked_prefill={} enable_prefix_caching={}",
        c.quantization.as_str(),
        c.max_num_seqs,
        c.max_num_batched_tokens,
        c.gpu_memory_utilization,
        c.max_model_len,
        c.enforce_eager,
        c.enable_chunked_prefill,
        c.enable_prefix_caching
    )
}

/// Human-readable view of one record. Metrics a crash leaves undefined
/// print as `-`.
pub fn format_trial(r: &TrialRecord) -> String {
    let ms = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2} ms"));
    let actions: Vec<&str> = r.repair_actions.iter().map(|a| a.as_str()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "trial {} of {}/{} ({})", r.trial_index, r.optimizer, r.seed, r.phase);
    let _ = writeln!(s, "crash category:   {}", r.crash_category);
    let _ = writeln!(s, "raw config:       {}", format_config(&r.raw_config));
    let _ = writeln!(s, "repaired config:  {}", format_config(&r.repaired_config));
    let _ = writeln!(
        s,
        "repair actions:   {}",
        if actions.is_empty() {
            "none".to_string()
        } else {
            actions.join(", ")
        }
    );
    let _ = writeln!(s, "dispatch:         {}", r.dispatch_mode.as_str());
    if r.crash_category.is_crash() && r.requests.is_empty() {
        let _ = writeln!(s, "batch wall-clock: -");
    } else {
        let _ = writeln!(s, "batch wall-clock: {:.2} ms", r.batch_wall_clock_ms);
    }
    let _ = writeln!(s, "feasible:         {}", if r.feasible { "yes" } else { "no" });
    let _ = writeln!(s, "ttft p99:         {}", ms(r.ttft_p99_ms));
    let _ = writeln!(s, "itl p99:          {}", ms(r.itl_p99_ms));
    let _ = writeln!(s, "avg latency:      {}", ms(r.avg_latency_ms));
    let _ = writeln!(s, "memory:           {:.3} GiB", r.memory_bytes / (1u64 << 30) as f64);
    let _ = writeln!(s, "goodput:          {:.3} tokens/s", r.goodput_tokens_per_s);
    let _ = writeln!(s, "violation score:  {}", r.violation_score);
    if r.requests.is_empty() {
        let _ = writeln!(s, "requests:         none");
    } else {
        let _ = writeln!(s, "requests:");
        let _ = writeln!(
            s,
            "  {:>3} {:>10} {:>10} {:>12} {:>7} {:>4}  error",
            "#", "ttft_ms", "max_itl_ms", "total_ms", "tokens", "slo"
        );
        for (i, q) in r.requests.iter().enumerate() {
            let _ = writeln!(
                s,
                "  {:>3} {:>10.2} {:>10.2} {:>12.2} {:>7} {:>4}  {}",
                i + 1,
                q.ttft_ms,
                q.max_itl_ms(),
                q.total_latency_ms,
                q.output_tokens,
                if q.satisfied_slo { "ok" } else { "miss" },
                q.error.as_deref().unwrap_or("-")
            );
        }
    }
    s
}

fn calibration_cmd(args: CalibrationArgs, out: &mut dyn Write) -> Result<()> {
    let results = calibration_suite(&Simulator::default(), &HardwareProfile::reference(), args.seed);
    let mut text = String::new();
    for r in &results {
        let _ = writeln!(
            text,
            "{}  {:<28} {:>14.6}  target {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.observed,
            r.target
        );
    }
    let _ = out.write_all(text.as_bytes());
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::CalibrationFailed { failed });
    }
    Ok(())
}
