#![allow(dead_code)]

use std::path::Path;

use acd::config::PipelineConfig;
use acd::synth::{self, SyntheticSpec};

/// Writes the default synthetic corpus under `dir` and returns its config.
pub fn synthetic_config(dir: &Path) -> PipelineConfig {
    let spec = SyntheticSpec::default();
    let files = synth::generate(&spec).unwrap().write(dir, &spec).unwrap();
    PipelineConfig::load(&files.config).unwrap()
}
