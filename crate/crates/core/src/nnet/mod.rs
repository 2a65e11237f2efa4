//! Small deterministic CNN core: LeNet-5-class plain networks with
//! conv/ReLU/max-pool/fc layers, softmax cross-entropy and SGD.

mod checkpoint;
mod forward;
mod network;
mod ops;
mod tensor;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, HRCK_MAGIC,
    HRCK_VERSION,
};
pub use forward::{
    backward, forward, forward_train, layer_backward, layer_forward, Captured, ForwardOptions,
    ForwardOutput, Gradients, LayerCache, ParamGrad, Trace,
};
pub use network::{
    build_lenet5, build_lenet5_with, Conv2d, Layer, Linear, NetworkDef, Shape,
    DEFAULT_NEGATIVE_SLOPE, LENET5_FILTERS,
};
pub use ops::softmax_cross_entropy;
pub use tensor::Tensor4;
pub use train::{backward_step, evaluate, train, EpochMetrics, Sgd, TrainConfig, TrainObserver};
