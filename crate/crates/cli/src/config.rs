//! Run configuration: a TOML file, flag overrides on top, and a resolved
//! form that is written next to the outputs of every run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rtrl_core::copy_train::{CopyConfig, CopyLearner, UpdateSchedule};
use rtrl_core::rl::{RlLearner, TmazeConfig};
use rtrl_core::tasks::copy::ALPHABET;
use rtrl_core::tasks::tmaze::OBS_DIM;

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory relative output paths live under.
pub const OUTPUT_ROOT_ENV: &str = "RTRL_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    Tmaze,
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "tmaze" => Ok(TaskKind::Tmaze),
            other => Err(format!("unknown task `{other}` (expected copy or tmaze)")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub lr: Option<f64>,
    pub clip_norm: Option<f64>,
    /// Sequences per update (copy) or parallel environment streams (T-maze).
    pub batch: Option<usize>,
}

/// Everything a user may set. Unset fields fall back to the preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Option<TaskKind>,
    pub preset: Option<String>,
    pub architecture: Option<String>,
    pub algorithm: Option<String>,
    pub hidden: Option<usize>,
    pub input: Option<usize>,
    /// T-maze segment length, or the truncation span of copy-task TBPTT.
    pub segment_len: Option<usize>,
    pub l_max: Option<usize>,
    pub corridor_len: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    /// Updates (copy) or environment steps (T-maze).
    pub budget: Option<u64>,
    /// Updates between copy evaluations, or environment steps between T-maze reports.
    pub eval_every: Option<u64>,
    pub schedule: Option<UpdateSchedule>,
    pub output_dir: Option<String>,
    pub checkpoint_every: Option<u64>,
    pub optimizer: Option<OptimizerBlock>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: RunConfig) -> RunConfig {
        let opt = match (self.optimizer, over.optimizer) {
            (Some(a), Some(b)) => {
                Some(OptimizerBlock { lr: b.lr.or(a.lr), clip_norm: b.clip_norm.or(a.clip_norm), batch: b.batch.or(a.batch) })
            }
            (a, b) => b.or(a),
        };
        RunConfig {
            task: over.task.or(self.task),
            preset: over.preset.or(self.preset),
            architecture: over.architecture.or(self.architecture),
            algorithm: over.algorithm.or(self.algorithm),
            hidden: over.hidden.or(self.hidden),
            input: over.input.or(self.input),
            segment_len: over.segment_len.or(self.segment_len),
            l_max: over.l_max.or(self.l_max),
            corridor_len: over.corridor_len.or(self.corridor_len),
            seeds: over.seeds.or(self.seeds),
            budget: over.budget.or(self.budget),
            eval_every: over.eval_every.or(self.eval_every),
            schedule: over.schedule.or(self.schedule),
            output_dir: over.output_dir.or(self.output_dir),
            checkpoint_every: over.checkpoint_every.or(self.checkpoint_every),
            optimizer: opt,
        }
    }

    /// Validate and fill in every default. Relative output directories are
    /// placed under `root`.
    pub fn resolve(&self, root: &Path) -> CliResult<ResolvedRun> {
        let task = self.task.ok_or_else(|| usage("no task given (copy or tmaze)"))?;
        if let Some(arch) = &self.architecture {
            if arch != "elstm" {
                return Err(usage(format!("training is implemented for the elstm architecture only, not `{arch}`")));
            }
        }
        let seeds = self.seeds.clone().unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(usage("seeds must not be empty"));
        }
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != seeds.len() {
            return Err(usage("seeds must be distinct"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(usage("checkpoint_every must be positive"));
        }
        let opt = self.optimizer.clone().unwrap_or_default();
        let preset = self.preset.clone().unwrap_or_else(|| "desk".to_string());
        let algorithm = self.algorithm.clone().unwrap_or_else(|| "rtrl".to_string());

        let (copy, tmaze, default_ckpt) = match task {
            TaskKind::Copy => {
                if self.corridor_len.is_some() {
                    return Err(usage("corridor_len only applies to the tmaze task"));
                }
                if self.input.is_some_and(|d| d != ALPHABET) {
                    return Err(usage(format!("the copy task has input size {ALPHABET}")));
                }
                let mut c = match preset.as_str() {
                    "desk" => CopyConfig::desk(seeds[0]),
                    "paper50" => CopyConfig::paper(50, seeds[0])?,
                    "paper500" => CopyConfig::paper(500, seeds[0])?,
                    other => return Err(usage(format!("unknown copy preset `{other}` (desk, paper50, paper500)"))),
                };
                c.learner = match (algorithm.as_str(), self.segment_len) {
                    ("rtrl", _) => CopyLearner::Rtrl,
                    ("bptt", _) => CopyLearner::Bptt,
                    ("tbptt", Some(span)) => CopyLearner::Tbptt { span },
                    ("tbptt", None) => return Err(usage("tbptt on the copy task needs segment_len (the truncation span)")),
                    (other, _) => return Err(usage(format!("unknown copy algorithm `{other}` (rtrl, bptt, tbptt)"))),
                };
                if let Some(v) = self.hidden {
                    c.hidden = v;
                }
                if let Some(v) = self.l_max {
                    c.l_max = v;
                }
                if let Some(v) = self.budget {
                    c.max_updates = v;
                }
                if let Some(v) = self.eval_every {
                    c.eval_every = v;
                }
                if let Some(v) = self.schedule {
                    c.schedule = v;
                }
                if let Some(v) = opt.lr {
                    c.lr = v;
                }
                if let Some(v) = opt.clip_norm {
                    c.clip_norm = v;
                }
                if let Some(v) = opt.batch {
                    c.batch = v;
                }
                c.validate()?;
                (Some(c), None, 1000)
            }
            TaskKind::Tmaze => {
                if self.l_max.is_some() {
                    return Err(usage("l_max only applies to the copy task"));
                }
                if self.input.is_some_and(|d| d != OBS_DIM) {
                    return Err(usage(format!("the tmaze task has input size {OBS_DIM}")));
                }
                if self.schedule.is_some() {
                    return Err(usage("tmaze updates once per segment; use segment_len = 1 for per-step updates"));
                }
                if preset != "desk" {
                    return Err(usage(format!("unknown tmaze preset `{preset}` (desk)")));
                }
                let learner = match algorithm.as_str() {
                    "rtrl" => RlLearner::Rtrl,
                    "tbptt" => RlLearner::Tbptt,
                    other => return Err(usage(format!("unknown tmaze algorithm `{other}` (rtrl, tbptt)"))),
                };
                let mut t = TmazeConfig::desk(learner, self.segment_len.unwrap_or(2), seeds[0]);
                if let Some(v) = self.hidden {
                    t.hidden = v;
                }
                if let Some(v) = self.corridor_len {
                    t.corridor_len = v;
                }
                if let Some(v) = self.budget {
                    t.total_env_steps = v;
                }
                if let Some(v) = self.eval_every {
                    t.report_every = v;
                }
                if let Some(v) = opt.lr {
                    t.lr = v;
                }
                if let Some(v) = opt.clip_norm {
                    t.clip_norm = v;
                }
                if let Some(v) = opt.batch {
                    t.streams = v;
                }
                t.validate()?;
                (None, Some(t), 5000)
            }
        };
        let name = self.output_dir.clone().unwrap_or_else(|| format!("{}-{preset}-{algorithm}", task_name(task)));
        let path = Path::new(&name);
        let output_dir = if path.is_absolute() { path.to_path_buf() } else { root.join(path) };
        Ok(ResolvedRun {
            task,
            seeds,
            output_dir: output_dir.to_string_lossy().into_owned(),
            checkpoint_every: self.checkpoint_every.unwrap_or(default_ckpt),
            copy,
            tmaze,
        })
    }
}

fn task_name(t: TaskKind) -> &'static str {
    match t {
        TaskKind::Copy => "copy",
        TaskKind::Tmaze => "tmaze",
    }
}

/// The root relative output paths are resolved against.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// A validated run with every default filled in. The task block is the
/// configuration of the first seed; other seeds differ only in `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedRun {
    pub task: TaskKind,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    /// Updates between checkpoints.
    pub checkpoint_every: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub copy: Option<CopyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tmaze: Option<TmazeConfig>,
}

impl ResolvedRun {
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Format(format!("serializing the resolved config: {e}")))
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        Path::new(&self.output_dir).join(format!("seed-{seed}"))
    }

    pub fn copy_config(&self, seed: u64) -> Option<CopyConfig> {
        self.copy.clone().map(|c| CopyConfig { seed, ..c })
    }

    pub fn tmaze_config(&self, seed: u64) -> Option<TmazeConfig> {
        self.tmaze.clone().map(|t| TmazeConfig { seed, ..t })
    }
}
