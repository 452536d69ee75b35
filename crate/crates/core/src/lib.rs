//! Forensic video search: person-centric clip indexing, multimodal query
//! retrieval, grounded answering over pluggable encoder and VLM backends,
//! a caption-to-benchmark data engine, and the evaluation harness.

pub mod answer;
pub mod encoder;
pub mod eval;
pub mod frames;
pub mod ingest;
pub mod interval;
pub mod par;
pub mod qa;
pub mod synth;
pub mod tracklet;
pub mod types;
pub mod vecindex;

pub use interval::{canonicalize, interval_iou, interval_set_iou, IntervalSet, TimeInterval};
pub use types::*;
