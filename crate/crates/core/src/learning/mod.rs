//! Synthetic federated tasks, local SGD, InstaHide encoding, and Byzantine
//! client update generators.

mod attack;
mod instahide;
mod sgd;
mod task;

pub use attack::{apply_attack, AttackConfig};
pub use instahide::{draw_simplex, instahide_encode, instahide_encode_traced, mix_sample, InstaHideConfig, MixRecord};
pub use sgd::{local_update, LocalTrainConfig};
pub use task::{global_loss, ClientDataset, FeatureMap, Partition, Sample, SyntheticTask, TaskKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearningError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("local training diverged to non-finite values")]
    TrainingDiverged,
    #[error("mix count {mix} invalid for {samples} samples")]
    MixCount { mix: usize, samples: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
}
