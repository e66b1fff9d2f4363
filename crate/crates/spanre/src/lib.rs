//! SpanRE: joint extraction of entities and overlapping relation triplets.
//!
//! A sentence is encoded by a gated-relation CNN, candidate subjects are
//! tagged with start/end span heads, and for each subject an entity-attention
//! fusion drives per-relation labeled span heads that read out objects and
//! relations together — which is what lets overlapping triplets (shared
//! entities, even shared entity pairs) come out intact.
//!
//! The numeric substrate is a small tape-based autodiff library in
//! [`tensor`]; everything is f64 and checked against central finite
//! differences.

pub mod tensor;

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod synth;
pub mod tagger;
pub mod train;
pub mod vocab;

pub use attention::Span;
pub use config::{ModelConfig, TrainConfig};
pub use data::{AnnotatedExample, OverlapCategory, RelationSchema};
pub use model::{ModelParams, Pass};
pub use tagger::Triplet;
