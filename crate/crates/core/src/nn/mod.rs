//! Dense tensors, the convolution family, and the two-branch activity network.
//!
//! Feature maps are `[H, W, C]` row-major with channels innermost. Kernels are
//! `[k, k, c_in / G, c_out]` for full and grouped convolution, `[k, k, c]` for depth-wise and
//! `[c_in, c_out]` for point-wise. All convolutions use centred "same" zero padding: output pixel
//! `(i, j)` reads input `(s·i + d·(l - (k-1)/2), s·j + d·(m - (k-1)/2))` for stride `s` and
//! dilation `d`.

mod accounting;
mod network;
pub mod ops;
mod scalar;
mod spec;
mod tensor;
mod train;
mod weights;

pub use accounting::{flop_count, format_layer_table, layer_table, param_count, LayerRow};
pub use network::{block_backward, block_forward, BranchFeatures, Network, ParamEntry, Trace};
pub use scalar::Scalar;
pub use ops::ConvGeometry;
pub use spec::{BlockSpec, Branches, LayerSpec, NamedLayer, NetworkSpec, OpKind, Padding, Pooling, NUM_CLASSES};
pub use tensor::Tensor;
pub use train::{batch_gradient, evaluate_loss, sgd_step, train, Example, TrainConfig, TrainReport};
pub use weights::{decode_weights, encode_weights, read_weights, write_weights, WEIGHTS_MAGIC};
