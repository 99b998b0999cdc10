//! JSON checkpoints holding the complete trainer state.
//!
//! Parameters and sensitivities are stored as nested arrays of 64-bit
//! reals; floats are written in shortest round-trip form and parsed exactly,
//! so save → load → save is byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rtrl_core::copy_train::CopyTrainer;
use rtrl_core::rl::TmazeTrainer;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "state", rename_all = "lowercase")]
pub enum TrainerState {
    Copy(Box<CopyTrainer>),
    Tmaze(Box<TmazeTrainer>),
}

impl TrainerState {
    pub fn updates(&self) -> u64 {
        match self {
            TrainerState::Copy(t) => t.updates,
            TrainerState::Tmaze(t) => t.updates,
        }
    }

    fn dims(&self) -> Dims {
        match self {
            TrainerState::Copy(t) => Dims { hidden: t.model.hidden(), input: t.model.cell.input() },
            TrainerState::Tmaze(t) => Dims { hidden: t.model.hidden(), input: t.model.cell.input() },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub hidden: usize,
    pub input: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub dims: Dims,
    /// Metrics rows written when the checkpoint was taken.
    pub csv_rows: u64,
    pub trainer: TrainerState,
}

impl Checkpoint {
    pub fn new(trainer: TrainerState, csv_rows: u64) -> Self {
        Checkpoint { schema_version: SCHEMA_VERSION, dims: trainer.dims(), csv_rows, trainer }
    }

    pub fn to_json(&self) -> CliResult<String> {
        serde_json::to_string(self).map_err(|e| CliError::Format(format!("serializing checkpoint: {e}")))
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| CliError::Format(format!("reading checkpoint: {e}")))?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(CliError::Format(format!(
                "checkpoint schema {} is not supported (expected {SCHEMA_VERSION})",
                ck.schema_version
            )));
        }
        if ck.dims != ck.trainer.dims() {
            return Err(CliError::Format("checkpoint dims disagree with its parameter blocks".into()));
        }
        Ok(ck)
    }

    /// Write to a sibling temporary file, then rename over `path`.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let tmp = path.with_extension("json.tmp");
        let text = self.to_json()?;
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(text.as_bytes()).map_err(|e| CliError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
