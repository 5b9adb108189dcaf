//! Shared fixtures for the benchmarks.

use std::path::{Path, PathBuf};

use glyphgen_core::{FontSpec, GeneratorConfig};

pub fn testdata() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../testdata")
}

/// Three fonts at 40/35/25 over the bundled Kashmiri corpus.
pub fn sample_config(count: u64) -> GeneratorConfig {
    let font = |name: &str| testdata().join("fonts").join(name).display().to_string();
    GeneratorConfig {
        corpus: Some(testdata().join("corpus/kashmiri.txt").display().to_string()),
        fonts: vec![
            FontSpec::path(font("DejaVuSans.ttf"), Some(40.0)),
            FontSpec::path(font("DejaVuSans-Bold.ttf"), Some(35.0)),
            FontSpec::path(font("DejaVuSansMono.ttf"), Some(25.0)),
        ],
        count,
        ..Default::default()
    }
}
