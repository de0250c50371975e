//! Layer-wise relevance propagation for residual networks.

pub mod engine;
pub mod quantize;
pub mod rules;
pub mod split;

pub use engine::{
    block_input_label, explain, explain_input, propagate_bottleneck, seed_relevance, Explanation,
    RelevanceState, RuleConfig, RuleKind, Stage, INPUT_LABEL, SEED_LABEL,
};
pub use quantize::{bin_indices, channel_sum, heat_quantize, AttributionMap, QuantizeMode};
pub use rules::{lrp_conv, lrp_gap, lrp_linear, lrp_maxpool, passthrough, LayerRule};
pub use split::{split_relevance, Splitting, RATIO_GUARD};
