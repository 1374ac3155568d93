//! The keyword classifier: three 3×3 conv + ReLU + 2×2 max-pool blocks, a
//! ReLU dense layer producing the embedding, and a two-way softmax output.

mod checkpoint;
pub mod layers;
mod model;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use model::{
    backward, forward, forward_logits, Architecture, ConvParams, DenseParams, EmbeddingTap, ForwardTrace,
    ModelParams, ParamGradients, KEYWORD_CLASS, N_CLASSES,
};
pub use tensor::Tensor;
