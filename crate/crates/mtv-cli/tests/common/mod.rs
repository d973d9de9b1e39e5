#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use mtv_cli::config::PipelineConfig;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn config(name: &str) -> PipelineConfig {
    PipelineConfig::load(&configs_dir().join(name)).expect("shipped config")
}
