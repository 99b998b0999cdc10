//! Training driver: one trainer per seed, metrics CSV and periodic checkpoints.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rtrl_core::copy_train::CopyTrainer;
use rtrl_core::rl::TmazeTrainer;

use crate::checkpoint::{Checkpoint, TrainerState};
use crate::config::{ResolvedRun, TaskKind};
use crate::error::{CliError, CliResult};
use crate::metrics::{write_text, MetricsRow, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the checkpoint in each seed directory when one exists.
    pub resume: bool,
    /// Pause after this many total updates, writing a checkpoint.
    pub stop_after: Option<u64>,
    /// Record elapsed milliseconds; otherwise the column is 0 so that files
    /// from repeated runs compare byte for byte.
    pub wall_clock: bool,
}

/// Final state of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub updates: u64,
    pub last: Option<MetricsRow>,
    pub finished: bool,
}

impl TrainerState {
    fn fresh(run: &ResolvedRun, seed: u64) -> CliResult<Self> {
        Ok(match run.task {
            TaskKind::Copy => TrainerState::Copy(Box::new(CopyTrainer::new(run.copy_config(seed).expect("copy block"))?)),
            TaskKind::Tmaze => TrainerState::Tmaze(Box::new(TmazeTrainer::new(run.tmaze_config(seed).expect("tmaze block"))?)),
        })
    }

    fn task(&self) -> TaskKind {
        match self {
            TrainerState::Copy(_) => TaskKind::Copy,
            TrainerState::Tmaze(_) => TaskKind::Tmaze,
        }
    }

    /// A resumed run keeps its own configuration except for the budget.
    fn set_budget(&mut self, run: &ResolvedRun) {
        match self {
            TrainerState::Copy(t) => t.config.max_updates = run.copy.as_ref().expect("copy block").max_updates,
            TrainerState::Tmaze(t) => t.config.total_env_steps = run.tmaze.as_ref().expect("tmaze block").total_env_steps,
        }
    }

    fn finished(&self) -> bool {
        match self {
            TrainerState::Copy(t) => t.finished(),
            TrainerState::Tmaze(t) => t.finished(),
        }
    }

    fn advance(&mut self) -> CliResult<Option<MetricsRow>> {
        Ok(match self {
            TrainerState::Copy(t) => t.advance()?.map(MetricsRow::Copy),
            TrainerState::Tmaze(t) => t.advance()?.map(MetricsRow::Tmaze),
        })
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Train every seed of `run` in order.
pub fn train(run: &ResolvedRun, opts: &TrainOptions, mut log: impl FnMut(u64, &MetricsRow)) -> CliResult<Vec<SeedOutcome>> {
    let root = Path::new(&run.output_dir);
    create_dir(root)?;
    write_text(&root.join(RESOLVED_CONFIG_FILE), &run.to_toml()?)?;
    let mut out = Vec::with_capacity(run.seeds.len());
    for &seed in &run.seeds {
        out.push(train_seed(run, seed, opts, |row| log(seed, row))?);
    }
    Ok(out)
}

fn train_seed(run: &ResolvedRun, seed: u64, opts: &TrainOptions, mut log: impl FnMut(&MetricsRow)) -> CliResult<SeedOutcome> {
    let dir = run.seed_dir(seed);
    create_dir(&dir)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let csv_path = dir.join(METRICS_FILE);
    let (mut state, mut writer) = if opts.resume && ckpt_path.exists() {
        let ck = Checkpoint::load(&ckpt_path)?;
        if ck.trainer.task() != run.task {
            return Err(CliError::Usage(format!("{} holds a different task", ckpt_path.display())));
        }
        let writer = MetricsWriter::resume(&csv_path, run.task, ck.csv_rows)?;
        let mut state = ck.trainer;
        state.set_budget(run);
        (state, writer)
    } else {
        (TrainerState::fresh(run, seed)?, MetricsWriter::create(&csv_path, run.task)?)
    };
    let start = Instant::now();
    let mut last = None;
    let save = |state: &TrainerState, rows: u64| Checkpoint::new(state.clone(), rows).save(&ckpt_path);
    while !state.finished() {
        if opts.stop_after.is_some_and(|n| state.updates() >= n) {
            break;
        }
        if let Some(row) = state.advance()? {
            let wall = if opts.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };
            writer.write(&row, wall)?;
            log(&row);
            last = Some(row);
        }
        if state.updates() % run.checkpoint_every == 0 {
            save(&state, writer.rows())?;
        }
    }
    save(&state, writer.rows())?;
    Ok(SeedOutcome { seed, dir, updates: state.updates(), last, finished: state.finished() })
}
