//! Desk-scale training and evaluation of the four normalization variants
//! behind a toy classifier.

mod adam;
mod backend;
mod harness;
mod model;
mod task;

pub use adam::Adam;
pub use backend::{cross_entropy, softmax, BackendTape, ToyBackend, STD_FLOOR};
pub use harness::{
    apply_step, backward_and_step, batch_gradient, crop, evaluate, evaluate_manifest, forward_batch, forward_loss,
    history_csv, train, train_on, windows, BatchTape, ClipSet, EpochRecord, EvalReport, TrainConfig, TrainOutcome,
};
pub use model::{Model, ModelTape, Normalizer, Variant, MODEL_MAGIC, MODEL_VERSION};
pub use task::{generate_task, Profile, SynthTask};
