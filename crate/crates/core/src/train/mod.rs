//! Two-stage offline distillation: train a full-reference teacher, freeze it,
//! then train a student that sees non-aligned references while matching the
//! teacher's difference-encoder features.

mod checkpoint;
mod config;
mod report;
mod stages;

pub use checkpoint::{Checkpoint, Stage, MAGIC, VERSION};
pub use config::{NarMode, TrainConfig, TRAIN_KEYS};
pub use report::{EpochStats, TrainReport};
pub use stages::{
    distill_step, distill_student, distill_student_observed, teacher_step, train_teacher, train_teacher_observed,
    EpochObserver, StepOutcome,
};
