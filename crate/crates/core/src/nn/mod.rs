//! Minimal dense numeric layer: tensors, the primitives the encoder needs,
//! their backward passes, the weighted loss and the optimizer.

mod attention;
mod loss;
mod ops;
mod optim;
mod tensor;

pub use attention::{
    multi_head_attention, multi_head_attention_backward, AttentionCache, AttentionGrads,
    AttentionParams, LinearParams, MASK_VALUE,
};
pub use loss::weighted_cross_entropy;
pub use ops::{
    apply_dropout_mask, gelu, gelu_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, matmul, matmul_backward, softmax, softmax_backward, softmax_rows,
    softmax_rows_backward, LayerNormCache, LayerNormGrads, LinearGrads,
};
pub use optim::{AdamW, AdamWConfig, Parameter};
pub use tensor::Tensor;
