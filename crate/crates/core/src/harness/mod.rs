//! Training loops, checkpoints, configuration and evaluation.

mod checkpoint;
mod config;
mod eval;
mod model;
mod train;

pub use checkpoint::{Checkpoint, TensorData, FORMAT_VERSION, MAGIC};
pub use config::{ContourConfig, DataConfig, ModelConfig, OptimConfig, Stage, TrainConfig};
pub use eval::{evaluate, evaluate_images, EvalReport, SampleScore, ViewScore, METRIC_KEYS, YAW_SWEEP};
pub use model::{load_codec, SsspModel};
pub use train::{
    clone_teacher_into_contour_encoder, contour_token_accuracy, flip_consistency, init_codebook_from_data, train,
    train_contour, train_contour_on, train_sssp, train_vq, vq_recon_l1, StepLog, TrainOutcome,
};
