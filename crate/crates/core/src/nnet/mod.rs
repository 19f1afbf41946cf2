//! Dense tensors, a sequential layer chain, losses and SGD.

mod checkpoint;
mod gradcheck;
mod layer;
pub mod loss;
mod network;
mod optim;
mod scalar;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, grad_check_head, relative_error, GradCheckConfig, GradCheckReport, LayerCheck};
pub use layer::{Conv3x3, Dropout, Layer, Linear, MaxPool, Mode};
pub use loss::{cross_entropy_l1, softmax, softmax_cross_entropy, CrossEntropy};
pub use network::{Cache, Grads, Network};
pub use optim::{Plateau, TrainState, LEARNING_RATE, MOMENTUM};
pub use scalar::Scalar;
pub use tensor::Tensor;
