//! File formats and the synthetic bundle generator.

pub mod bundle_file;
pub mod export;
pub mod synth;

pub use bundle_file::{format_bundle, load_bundle, parse_bundle, save_bundle};
pub use export::Format;
pub use synth::{generate_bundle, GroundTruth, SyntheticSpec};
