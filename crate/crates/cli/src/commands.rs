//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rtrl_core::copy_train::UpdateSchedule;
use rtrl_core::gradcheck::{
    default_suite, elstm_suite, felstm_suite, fwp_suite, gradcheck, hybrid_suite, vanilla_suite, AlgoPair, Arch, GradCase,
    GradReport,
};

use crate::bench::{run_bench, BenchConfig};
use crate::config::{output_root, OptimizerBlock, RunConfig, TaskKind};
use crate::error::{CliError, CliResult};
use crate::metrics::{write_text, MetricsRow};
use crate::train::{train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "rtrl", version, about = "Exact RTRL for element-wise LSTMs: gradient checks, training and cost benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare gradients from independent algorithms.
    Gradcheck(GradcheckArgs),
    /// Train on the copy task or the T-maze.
    Train(TrainArgs),
    /// Measure memory and time per step of RTRL and truncated BPTT.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Built-in case list: default, elstm, vanilla, hybrid, fwp or felstm.
    #[arg(long, conflicts_with = "arch")]
    pub suite: Option<String>,
    /// Architecture for a custom case: elstm, vanilla, fwp or felstm.
    #[arg(long, requires = "pair")]
    pub arch: Option<String>,
    /// rtrl-bptt, rtrl-fd, bptt-fd, hybrid-bptt, snap1-bptt or snap1-rtrl.
    #[arg(long, requires = "arch")]
    pub pair: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub input: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Comma-separated seeds, one case per seed.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Hybrid segment lengths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub segments: Option<Vec<usize>>,
    /// feLSTM with diagonal gate recurrences.
    #[arg(long)]
    pub diagonal: bool,
    /// Flag the pair as an approximation that should not agree.
    #[arg(long)]
    pub expect_deviation: bool,
    /// Override every case's tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Where to write the JSON report (default: <output root>/gradcheck/report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub architecture: Option<String>,
    /// rtrl, bptt or tbptt.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub input: Option<usize>,
    /// T-maze segment length M, or the copy-task truncation span.
    #[arg(long)]
    pub segment_len: Option<usize>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long)]
    pub corridor_len: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Updates (copy) or environment steps (T-maze).
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Copy task only: per-sequence (default) or per-step updates.
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<UpdateSchedule>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from existing checkpoints.
    #[arg(long)]
    pub resume: bool,
    /// Pause after this many updates per seed, keeping a checkpoint.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Fill the wall_ms column with elapsed time instead of 0.
    #[arg(long)]
    pub wall_clock: bool,
    /// Validate and print the resolved configuration without training.
    #[arg(long)]
    pub dry_run: bool,
}

fn parse_schedule(s: &str) -> Result<UpdateSchedule, String> {
    match s {
        "per-sequence" | "per_sequence" => Ok(UpdateSchedule::PerSequence),
        "per-step" | "per_step" => Ok(UpdateSchedule::PerStep),
        other => Err(format!("unknown schedule `{other}` (per-sequence or per-step)")),
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Hidden sizes for the timing sweep.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Segment lengths for the memory sweep.
    #[arg(long, value_delimiter = ',')]
    pub spans: Option<Vec<usize>>,
    #[arg(long)]
    pub input: Option<usize>,
    #[arg(long)]
    pub memory_hidden: Option<usize>,
    #[arg(long)]
    pub timing_steps: Option<usize>,
    /// Where to write the JSON report (default: <output root>/bench/report.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e)),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format(e.to_string()))?;
    write_text(path, &text)
}

pub fn gradcheck_cases(args: &GradcheckArgs) -> CliResult<Vec<GradCase>> {
    let mut cases = match (&args.suite, &args.arch, &args.pair) {
        (_, Some(arch), Some(pair)) => {
            let arch: Arch = arch.parse()?;
            let pair: AlgoPair = pair.parse()?;
            args.seeds
                .iter()
                .map(|&seed| {
                    let mut c = GradCase::new(arch, pair, args.hidden, args.input, args.steps, seed);
                    c.segments = args.segments.clone().unwrap_or_default();
                    c.diagonal = args.diagonal;
                    c.expect_deviation = args.expect_deviation;
                    c
                })
                .collect()
        }
        (suite, _, _) => match suite.as_deref().unwrap_or("default") {
            "default" => default_suite(),
            "elstm" => elstm_suite(),
            "vanilla" => vanilla_suite(),
            "hybrid" => hybrid_suite(),
            "fwp" => fwp_suite(),
            "felstm" => felstm_suite(),
            other => return Err(CliError::Usage(format!("unknown suite `{other}`"))),
        },
    };
    if let Some(tol) = args.tolerance {
        for c in &mut cases {
            c.tolerance = tol;
        }
    }
    for c in &cases {
        c.validate()?;
    }
    Ok(cases)
}

pub fn format_report_line(r: &GradReport) -> String {
    let verdict = match (r.pass, r.case.expect_deviation) {
        (true, false) => "pass",
        (false, true) if r.as_expected() => "deviates (expected)",
        (true, true) => "FAIL (expected deviation, got agreement)",
        _ => "FAIL",
    };
    format!(
        "{:<58} max_abs {:>10.3e}  max_rel {:>10.3e}  cos {:.12}  tol {:.0e}  {verdict}",
        r.case.label(),
        r.max_abs_err,
        r.max_rel_err,
        r.cosine,
        r.case.tolerance
    )
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let cases = gradcheck_cases(args)?;
    let mut reports = Vec::with_capacity(cases.len());
    for case in &cases {
        let r = gradcheck(case)?;
        println!("{}", format_report_line(&r));
        reports.push(r);
    }
    let path = args.report.clone().unwrap_or_else(|| output_root().join("gradcheck").join("report.json"));
    write_json(&path, &reports)?;
    let bad: Vec<&GradReport> = reports.iter().filter(|r| !r.as_expected()).collect();
    println!("{} cases, {} not as expected; report written to {}", reports.len(), bad.len(), path.display());
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(format!("{} gradient checks failed", bad.len())))
    }
}

impl TrainArgs {
    fn overrides(&self) -> RunConfig {
        let optimizer = (self.lr.is_some() || self.clip_norm.is_some() || self.batch.is_some()).then_some(OptimizerBlock {
            lr: self.lr,
            clip_norm: self.clip_norm,
            batch: self.batch,
        });
        RunConfig {
            task: self.task,
            preset: self.preset.clone(),
            architecture: self.architecture.clone(),
            algorithm: self.algorithm.clone(),
            hidden: self.hidden,
            input: self.input,
            segment_len: self.segment_len,
            l_max: self.l_max,
            corridor_len: self.corridor_len,
            seeds: self.seeds.clone(),
            budget: self.budget,
            eval_every: self.eval_every,
            schedule: self.schedule,
            output_dir: self.output_dir.clone(),
            checkpoint_every: self.checkpoint_every,
            optimizer,
        }
    }
}

fn describe(seed: u64, row: &MetricsRow) -> String {
    match row {
        MetricsRow::Copy(m) => format!(
            "seed {seed} updates {} loss {:.4} per_symbol {:.4} per_sequence {:.4}",
            m.updates, m.loss, m.per_symbol_acc, m.per_sequence_acc
        ),
        MetricsRow::Tmaze(m) => format!(
            "seed {seed} steps {} updates {} loss {:.4} success {:.3} episodes {}",
            m.step, m.updates, m.loss, m.success_rate, m.episodes
        ),
    }
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let run = file.merged(args.overrides()).resolve(&output_root())?;
    if args.dry_run {
        print!("{}", run.to_toml()?);
        println!("# configuration valid; dry run, nothing trained");
        return Ok(());
    }
    let opts = TrainOptions { resume: args.resume, stop_after: args.stop_after, wall_clock: args.wall_clock };
    let outcomes = train(&run, &opts, |seed, row| println!("{}", describe(seed, row)))?;
    for o in &outcomes {
        let state = if o.finished { "finished" } else { "paused" };
        println!("seed {} {state} after {} updates; outputs in {}", o.seed, o.updates, o.dir.display());
    }
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let d = BenchConfig::default();
    let cfg = BenchConfig {
        hidden: args.hidden.clone().unwrap_or(d.hidden),
        spans: args.spans.clone().unwrap_or(d.spans),
        input: args.input.unwrap_or(d.input),
        memory_hidden: args.memory_hidden.unwrap_or(d.memory_hidden),
        timing_steps: args.timing_steps.unwrap_or(d.timing_steps),
        seed: d.seed,
    };
    let report = run_bench(&cfg)?;
    print!("{}", report.table());
    let path = args.report.clone().unwrap_or_else(|| output_root().join("bench").join("report.json"));
    write_json(&path, &report)?;
    println!("report written to {}", path.display());
    if report.all_pass() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed("some cost checks failed".into()))
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
    }
}
