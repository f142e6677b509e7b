//! The MSCMHMST network and its ablation variants: multi-scale convolution
//! encoder, multi-head multi-scale gated attention, positional encoding,
//! transformer encoder, and fully connected output heads.

pub mod checkpoint;
pub mod config;
pub mod network;

pub use config::{default_head_specs, HeadSpec, ModelConfig, Variant, ALL_VARIANTS};
pub use network::{
    bind_all, positional_encoding, Bound, ConvLayer, DenseLayer, EncoderLayer, MhmsAttention,
    Model, MultiScaleConvBlock, NormLayer, ResidualConvBlock, LN_EPS,
};
