//! LieConv layers and the residual network built from them.
//!
//! A forward pass lifts the input points, builds one graph per resolution
//! level with precomputed pair embeddings, then runs an input linear layer,
//! `L` bottleneck blocks, a final norm, a linear head and a global mean
//! over valid elements.

mod audit;
mod graph;
mod layers;
mod model;
mod params;

pub use audit::{audit_config, check_equivariance, random_points, ConvInstance, EquivarianceReport};
pub use graph::{build_level, embed_pairs, embedding_dim, pair_embedding, Graph, Level, PointSet};
pub use layers::{
    apply_norm_updates, global_pool, Bottleneck, ConvMode, Fwd, KernelMlp, LieConv, Linear, MaskedBatchNorm, NormUpdate,
};
pub use model::{
    kept_sample_indices, lift_examples, relative_deviation, transform_samples, Head, LieConvNet, ModelConfig,
    PreparedBatch,
};
pub use params::{uniform, ParamId, ParamStore};
