//! Small differentiable text classifier trained with focal loss, label
//! smoothing and R-Drop.

mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use loss::{focal_ls_loss, rdrop_loss, CompositeLossConfig};
pub use model::{tokenize, total_loss, Encoder, EncoderConfig, LossOutput, Pooling, CLS_ID, PAD_ID};
pub use optim::{lr_at, warmup_steps, AdamW};
pub use train::{
    log_jsonl, predict_proba_many, tokenize_dataset, tokenize_subset, train, train_with_validator, EpochLog,
    TokenizedExample, TrainConfig, TrainFailure, TrainedModel,
};
