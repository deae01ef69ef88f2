use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dynacal_core::harness::{self, output, SweepReport, SweepRow, SweepSpec};
use dynacal_core::learner::{run_detailed, RunConfig};
use dynacal_core::metrics::{self, BiasAudit, InvariantReport, MetricsReport};
use dynacal_core::{RecordLevel, Schedule, Transcript};

#[derive(Parser)]
#[command(name = "dynacal", version, about = "Dynamic-bin online multicalibration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the learner once from a run config.
    Run(RunArgs),
    /// Run replicated experiments over one axis from a sweep config.
    Sweep(SweepArgs),
    /// Check invariants and audit per-bin bias on a stored transcript.
    Audit(AuditArgs),
    /// Fit a log-log scaling exponent to a CSV report.
    Fit(FitArgs),
}

#[derive(Args)]
struct Overrides {
    /// Seed; for a sweep this is the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Expert spawning schedule.
    #[arg(long, value_parser = ["full", "dyadic"])]
    schedule: Option<String>,
    /// Transcript detail.
    #[arg(long, value_parser = ["summary", "full"])]
    record: Option<String>,
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) -> dynacal_core::Result<()> {
        if let Some(s) = &self.schedule {
            config.schedule = s.parse::<Schedule>()?;
        }
        if let Some(r) = &self.record {
            config.record_level = r.parse::<RecordLevel>()?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Also write the per-round wrapper trace to debug.csv.
    #[arg(long)]
    debug: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct AuditArgs {
    /// Transcript in JSONL form.
    transcript: PathBuf,
    /// Directory for audit.json; printed to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Feasibility tolerance on the per-round bias.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with a header row, such as a sweep's report.csv.
    csv: PathBuf,
    #[arg(long, default_value = "value")]
    x: String,
    #[arg(long, default_value = "calerr")]
    y: String,
    /// Directory for fit.json; printed to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: &'a RunConfig,
    metrics: MetricsReport,
    invariants: InvariantReport,
    runtime_ms: u64,
}

#[derive(Serialize)]
struct AuditSummary {
    metrics: MetricsReport,
    invariants: InvariantReport,
    bias_audit: Option<BiasAudit>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Audit(args) => cmd_audit(args),
        Command::Fit(args) => cmd_fit(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs) -> dynacal_core::Result<ExitCode> {
    let mut config: RunConfig = harness::load_json(&args.config)?;
    args.overrides.apply(&mut config)?;
    if let Some(seed) = args.overrides.seed {
        config.seeds = harness::derive_seeds(seed, 0);
    }
    config.diagnostics |= args.debug;
    std::fs::create_dir_all(&args.out)?;

    let started = Instant::now();
    let result = run_detailed(&config)?;
    let runtime_ms = started.elapsed().as_millis() as u64;
    let transcript = &result.transcript;
    let summary = metrics::summarize(transcript);
    let invariants = metrics::check_invariants(transcript, config.tol);

    let row = SweepRow {
        axis: "run".into(),
        value: config.horizon,
        replica: 0,
        seed: config.seeds.learner,
        env_seed: config.seeds.environment,
        mcerr: summary.calibration.mcerr,
        calerr: summary.calibration.calerr,
        ever_active_total: summary.ever_active,
        max_depth_reached: summary.max_depth_reached,
        runtime_ms,
        baseline_mcerr: None,
        baseline_calerr: None,
        baseline_bins: None,
    };
    let report = SweepReport {
        axis: "run".into(),
        master_seed: config.seeds.learner,
        rows: vec![row],
        aggregates: Vec::new(),
        fit_calerr: None,
        fit_mcerr: None,
        fit_baseline_calerr: None,
    };
    output::write_report_csv(&args.out.join("report.csv"), &report)?;
    output::write_group_csv(&args.out.join("groups.csv"), &summary.calibration)?;
    if config.record_level == RecordLevel::Full {
        output::write_transcript(&args.out.join("transcripts"), "run", transcript)?;
    }
    if config.diagnostics {
        output::write_debug_csv(&args.out.join("debug.csv"), &result.diagnostics)?;
    }
    println!(
        "T={} calerr={} mcerr={} ever_active={} max_depth={}",
        config.horizon,
        summary.calibration.calerr,
        summary.calibration.mcerr,
        summary.ever_active,
        summary.max_depth_reached
    );
    let passed = invariants.passed();
    output::write_json(&args.out.join("report.json"), &RunSummary { config: &config, metrics: summary, invariants, runtime_ms })?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_sweep(args: SweepArgs) -> dynacal_core::Result<ExitCode> {
    let mut spec: SweepSpec = harness::load_json(&args.config)?;
    args.overrides.apply(&mut spec.base)?;
    if let Some(seed) = args.overrides.seed {
        spec.master_seed = seed;
    }
    if args.jobs.is_some() {
        spec.jobs = args.jobs;
    }
    let transcripts = args.out.join("transcripts");
    let keep = spec.base.record_level == RecordLevel::Full;
    let report = harness::run_sweep(&spec, keep.then_some(transcripts.as_path()))?;
    output::write_sweep(&args.out, &report)?;
    for a in &report.aggregates {
        println!("{}={} median calerr={} median mcerr={}", report.axis, a.value, a.median_calerr, a.median_mcerr);
    }
    if let Some(fit) = &report.fit_calerr {
        println!("calerr exponent {:.4} (stderr {:?})", fit.exponent, fit.stderr);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_audit(args: AuditArgs) -> dynacal_core::Result<ExitCode> {
    let transcript = Transcript::read_jsonl(BufReader::new(File::open(&args.transcript)?))?;
    let invariants = metrics::check_invariants(&transcript, args.tol);
    let bias_audit = transcript.has_ledger().then(|| metrics::bias_audit(&transcript)).transpose()?;
    let passed = invariants.passed();
    for c in &invariants.checks {
        let status = match c.ok {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{status} {}: {}", c.name, c.detail);
    }
    if let Some(a) = &bias_audit {
        println!("bias audit: worst ratio {:.4} over {} blocks", a.worst_ratio, a.blocks_checked);
    }
    let summary = AuditSummary { metrics: metrics::summarize(&transcript), invariants, bias_audit };
    emit(args.out.as_deref(), "audit.json", &summary)?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_fit(args: FitArgs) -> dynacal_core::Result<ExitCode> {
    let fit = harness::fit_csv(&args.csv, &args.x, &args.y)?;
    println!("exponent {} intercept {} stderr {:?}", fit.exponent, fit.intercept, fit.stderr);
    emit(args.out.as_deref(), "fit.json", &fit)?;
    Ok(ExitCode::SUCCESS)
}

fn emit<T: Serialize>(out: Option<&Path>, name: &str, value: &T) -> dynacal_core::Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            output::write_json(&dir.join(name), value)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}
