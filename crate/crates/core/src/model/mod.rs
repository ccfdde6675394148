//! The contextualized, noise-aware concept learner and the small
//! differentiable-ops core it is built on.

pub mod checkpoint;
pub mod concept;
pub mod gru;
pub mod noise;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use concept::{
    argmax, decode, ConceptModel, ConceptPrediction, EncoderMode, HardLabels, ModelDims, ModelError,
};
pub use noise::{apply_noise, mean_row_l1, NoiseModel};
pub use tensor::{ParamStore, Tensor};
pub use train::{
    backward_and_step, evaluate, loss, train, EpochMetrics, TaskAccuracy, TrainConfig, TrainError,
    TrainingExample,
};
