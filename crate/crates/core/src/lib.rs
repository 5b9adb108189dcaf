//! Deterministic synthetic OCR dataset generation.
//!
//! The pipeline turns a Unicode corpus and a set of fonts into labeled text
//! images: [`textprep`] segments and validates the corpus, [`fonts`] and
//! [`renderer`] shape and rasterize each label, [`augment`] applies seeded
//! degradations, and [`packaging`] writes images, label files and a
//! manifest. [`engine`] wires the stages together; every random decision
//! comes from a per-sample [`prng::Lcg`] stream, so the same configuration
//! and seed always produce byte-identical output.

pub mod augment;
pub mod config;
pub mod engine;
pub mod fonts;
pub mod packaging;
pub mod prng;
pub mod raster;
pub mod renderer;
pub mod textprep;

pub use augment::{AugmentationConfig, AugmentationRecipe, Transform, TransformKind};
pub use config::{ConfigError, ConfigIssue, FontSpec, GeneratorConfig, StorageMode};
pub use engine::{generate, preview, Generator, GenerateError, GenerateOptions, ProgressEvent};
pub use fonts::{FontEntry, FontSet, SizeDistribution, SizePolicy};
pub use packaging::{verify, DatasetManifest, OutputFormat, SampleRecord, VerificationReport};
pub use prng::Lcg;
pub use raster::{RasterImage, Rgb};
pub use renderer::{Alignment, BackgroundSpec, Direction, MixOption};
pub use textprep::{CodeRange, Corpus, ScriptPolicy, Segment, SegmentationConfig, SegmentationMode};

/// Version string recorded in every manifest.
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[cfg(test)]
pub(crate) mod testutil {
    use std::path::{Path, PathBuf};

    use sha2::{Digest, Sha256};

    use crate::fonts::FontEntry;

    pub fn fixture_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../testdata")
    }

    pub fn font_path(name: &str) -> PathBuf {
        fixture_dir().join("fonts").join(name)
    }

    pub fn font(name: &str) -> FontEntry {
        FontEntry::load(font_path(name), 100.0).unwrap()
    }

    pub fn sha256_hex(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }
}
