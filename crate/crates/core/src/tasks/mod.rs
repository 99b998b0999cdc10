//! Task suites: the binary copy task and a T-maze memory POMDP.

pub mod copy;
pub mod tmaze;

pub use copy::{copy_accuracy, copy_sample, CopyBatch, CopySequence, BLANK};
pub use tmaze::{tmaze_step, Action, Cue, TMazeEnv, Transition};
