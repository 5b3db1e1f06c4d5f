//! End-to-end model: embedding, encoder, base attention, gated layer stack,
//! bidirectional attention and span head, with training and persistence.

mod checkpoint;
mod dump;
mod model;
mod train;

pub use checkpoint::Checkpoint;
pub use dump::{dump_attention, AttentionDump};
pub use model::{
    batch_loss, forward, forward_any, forward_baseline, Batch, BoundModel, ExampleOutput, Model, ModelConfig,
    ModelKind,
};
pub use train::{
    answer_texts, build_vocabulary, clip_global_norm, eval_loss, history_csv, predict, score, train, train_with,
    write_history, Adam, EpochRecord, Prediction, TrainConfig, TrainOutcome, Trainer,
};
