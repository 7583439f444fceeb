//! Shared fixture for the criterion benches.

use fsn_core::pipeline::{prepare, Prepared};
use fsn_core::{generate_synthetic, PipelineConfig, SyntheticConfig};

/// Default synthetic data with a pretrained base classifier.
pub fn fixture() -> (PipelineConfig, Prepared) {
    let ds = generate_synthetic(&SyntheticConfig::default()).expect("synthetic data");
    let cfg = PipelineConfig::default();
    let prepared = prepare(&ds, &cfg).expect("pretraining");
    (cfg, prepared)
}
