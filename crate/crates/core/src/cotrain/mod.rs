//! Multi-language co-training: a shared encoder, one classification head per
//! language behind a language gate, and a boundary regression head.

pub mod augment;
pub mod batch;
pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use augment::{intersample_augment, maybe_mix, mix_with_lambda, MixConfig, MixMode};
pub use batch::{
    gate_split, language_weights, merge_sub_batches, BatchItem, MixedBatch, SoftLabel, SubBatch,
};
pub use checkpoint::Checkpoint;
pub use loss::{
    compute_loss, loss_and_grad, plain_loss_and_grad, Gradients, LanguageLoss, LossConfig,
    LossReport, PlainStep,
};
pub use model::{CoTrainModel, Encoder, LinearHead, MlpEncoder};
pub use optim::{AdamW, AdamWConfig};
pub use train::{
    accuracy, export_embeddings, init_model, predict, train, write_metrics, DatasetSplit,
    EncoderMode, EpochMetrics, Example, Pipeline, TrainConfig, TrainOutcome,
};
