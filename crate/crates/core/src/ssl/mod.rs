//! Contrastive self-supervised pretraining on a small convnet.

pub mod augment;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use augment::{augment_pair, center_view, raster_tensor, AugmentSpec};
pub use loss::nt_xent;
pub use model::{EncoderState, Grads, Model, ModelConfig, ProjectionHead};
pub use optim::{cosine_lr, OptimizerKind, OptimizerState};
pub use tensor::Tensor;
pub use train::{
    derive_seed, init_seed, stage1_trainer, stage2_trainer, train_stage1, train_stage2, FreezeSpec, TrainConfig, Trainer,
};
