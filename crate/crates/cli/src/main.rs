//! `eqforge`: cohort synthesis, equalizer design, experiment grids and
//! filter evaluation.
//!
//! Verbosity follows `EQFORGE_LOG` (`error`, `warn`, `info`, `debug`,
//! `trace`; default `warn`).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eqforge::design::{residual_norm, DesignTerm, EqFilter, EqFilterRecord};
use eqforge::experiment::{run_experiment, write_magnitudes};
use eqforge::metrics::ConditionReport;
use eqforge::simulation::{evaluate_filter, write_cohort, Cohort, Condition, PreparedCohort};

use config::{FileConfig, Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "eqforge",
    version,
    about = "Individualized equalization filters for hearing devices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort (response CSVs plus manifest.json) to --out.
    Synth(CommonArgs),
    /// Design one equalizer and write it as JSON.
    Design(DesignArgs),
    /// Run the subject x condition x delay grid and write reports to --out.
    Experiment(CommonArgs),
    /// Score an existing filter JSON on one subject's true acoustics.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cohort manifest; without it the synthetic cohort is used.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Comma-separated condition names.
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<Condition>>,
    /// Comma-separated device delays d_G in samples.
    #[arg(long, value_delimiter = ',')]
    delays: Option<Vec<usize>>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Equalizer length L_a.
    #[arg(long)]
    filter_length: Option<usize>,
    /// Acausal lead L_d in samples.
    #[arg(long)]
    lead: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Experiment: drop this subject. Design: leave this subject out of
    /// pooled estimates instead of the designed one.
    #[arg(long)]
    exclude_subject: Option<String>,
}

#[derive(Args, Debug)]
struct DesignArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    subject: String,
    #[arg(long)]
    condition: Condition,
    /// Device delay d_G in samples.
    #[arg(long)]
    delay: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    subject: String,
    /// Filter JSON written by `design`.
    #[arg(long)]
    filter: PathBuf,
    /// Also recompute the design residual under this condition.
    #[arg(long)]
    condition: Option<Condition>,
}

impl CommonArgs {
    fn resolve(&self, device_delay: Option<usize>) -> Result<RunConfig> {
        let file = self.config.as_deref().map(FileConfig::load).transpose()?;
        let flags = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            manifest: self.manifest.clone(),
            conditions: self.conditions.clone(),
            delays: self.delays.clone(),
            lambda: self.lambda,
            filter_length: self.filter_length,
            lead: self.lead,
            device_delay,
            workers: self.workers,
            exclude_subject: self.exclude_subject.clone(),
        };
        Ok(RunConfig::resolve(file, &flags))
    }
}

fn require_out(cfg: &RunConfig) -> Result<&Path> {
    cfg.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

fn write_json<S: Serialize>(path: Option<&Path>, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_cohort(cfg: &RunConfig) -> Result<Cohort<f64>> {
    let source = cfg.cohort_source();
    source.load().with_context(|| match &cfg.manifest {
        Some(p) => format!("loading cohort manifest {}", p.display()),
        None => "building the synthetic cohort".to_string(),
    })
}

fn cmd_synth(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = args.resolve(None)?;
    let out = require_out(&cfg)?;
    let cohort = Cohort::<f64>::synthetic(&cfg.synth)?;
    let manifest = write_cohort(&cohort, out)?;
    write_json(Some(&out.join("synth_params.json")), &cfg.synth)?;
    log::info!("wrote {} subjects to {}", cohort.subjects.len(), out.display());
    println!("{}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_design(args: &DesignArgs) -> Result<ExitCode> {
    let cfg = args.common.resolve(args.delay)?;
    let cohort = load_cohort(&cfg)?;
    cohort.index_of(&args.subject)?;
    let prepared = PreparedCohort::new(cohort, cfg.design.acausal_lead, cfg.rtf_ridge);
    let exclude = cfg.exclude_subject.as_deref().unwrap_or(&args.subject);
    let filter = prepared
        .design(&args.subject, exclude, args.condition, &cfg.design)
        .with_context(|| format!("designing {} for {}", args.condition, args.subject))?;
    write_json(cfg.out.as_deref(), &filter.to_record())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = args.resolve(None)?;
    let out = require_out(&cfg)?;
    let report = run_experiment(&cfg.experiment_spec(), Some(out), cfg.workers)?;
    println!(
        "{:<22} {:>5} {:>10} {:>9} {:>4}",
        "condition", "d_G", "mean_lsd", "sd", "n"
    );
    for s in &report.summary {
        println!(
            "{:<22} {:>5} {:>10.4} {:>9.4} {:>4}",
            s.condition, s.device_delay, s.mean_lsd_db, s.sd_lsd_db, s.n_subjects
        );
    }
    let failed = report.failures();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see runs.csv", report.runs.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Evaluation {
    report: ConditionReport,
    residual_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual_norm_recomputed: Option<f64>,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<ExitCode> {
    let cfg = args.common.resolve(None)?;
    let text = fs::read_to_string(&args.filter).with_context(|| format!("reading {}", args.filter.display()))?;
    let record: EqFilterRecord =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.filter.display()))?;
    let filter = EqFilter::<f64>::from_record(&record)?;
    let cohort = load_cohort(&cfg)?;
    let ear = &cohort.subjects[cohort.index_of(&args.subject)?];

    let recomputed = match args.condition {
        Some(condition) => {
            let prepared = PreparedCohort::new(cohort.clone(), filter.config.acausal_lead, cfg.rtf_ridge);
            let exclude = cfg.exclude_subject.as_deref().unwrap_or(&args.subject);
            let members = prepared.design_problem(&args.subject, exclude, condition, &filter.config)?;
            let terms: Vec<_> = members
                .iter()
                .map(|(d_hat, target)| DesignTerm { d_hat, target })
                .collect();
            Some(residual_norm(&filter.coefficients, &terms)?)
        }
        None => None,
    };

    let label = args.condition.map_or("filter", Condition::name);
    let run = evaluate_filter(ear, label, filter, &cfg.eval)?;
    let mut report = run.report;
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let csv = out.join(format!("{}.csv", args.subject));
        write_magnitudes(&csv, &run.magnitudes)?;
        report.responses = Some(csv.display().to_string());
    }
    let evaluation = Evaluation {
        report,
        residual_norm: run.filter.residual_norm,
        residual_norm_recomputed: recomputed,
    };
    let json_path = cfg.out.as_ref().map(|o| o.join(format!("{}.json", args.subject)));
    write_json(json_path.as_deref(), &evaluation)?;
    if json_path.is_some() {
        println!("LSD {:.4} dB", evaluation.report.lsd_db);
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EQFORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Design(a) => cmd_design(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
