//! Single-block convolutional network for waterfall patches: 5x5 valid
//! convolution, ReLU, 2x2 max pooling, dense softmax. Trained from scratch by
//! momentum SGD on the summed cross-entropy.

pub mod checkpoint;
pub mod layers;
mod model;
mod tensor;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CNN1_MAGIC, CNN1_VERSION};
pub use layers::{
    conv2d, conv2d_backward, cross_entropy, dense, dense_backward, maxpool2, maxpool2_backward,
    relu, relu_backward, softmax_forward, ConvGrads, ConvLayer, Pooled,
};
pub use model::{predict_image, CnnModel, CnnShape, ForwardTrace, CLASSES, FILTERS, KERNEL};
pub use tensor::Tensor;
pub use train::{accuracy, train_cnn, train_cnn_from, TrainConfig, TrainReport};
