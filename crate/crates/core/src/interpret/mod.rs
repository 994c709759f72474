//! Expected-gradients attribution, attention extraction and rendering.

pub mod attention;
pub mod eg;
pub mod render;

pub use attention::{attention_map, AttentionMap};
pub use eg::{
    expected_gradients, expected_gradients_signed, AttributionReport, Classifier, LinearSurrogate, ScalarModel,
    SignedAttribution,
};
pub use render::{attention_heatmap, attribution_heatmap, slot_table_csv, Heatmap};
