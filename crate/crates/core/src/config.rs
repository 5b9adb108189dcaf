//! The generator configuration document.
//!
//! A [`GeneratorConfig`] serializes to a canonical JSON document (fixed key
//! order, every field present), so a config echoed into a manifest can be
//! fed straight back to reproduce the run.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentationConfig;
use crate::fonts::{SizePolicy, PERCENT_TOLERANCE};
use crate::packaging::OutputFormat;
use crate::prng::DEFAULT_SEED;
use crate::raster::Rgb;
use crate::renderer::{Alignment, BackgroundSpec, Direction};
use crate::textprep::{CodeRange, SegmentationConfig, KASHMIRI_DIACRITICS, KASHMIRI_RANGES};

pub const DEFAULT_MEMORY_BUDGET: u64 = 512 * 1024 * 1024;
pub const MIN_DIMENSION: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    /// Dotted field path, with `[]` for "some element" and `[i]` for a
    /// specific one.
    pub path: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigIssue {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config JSON: {0}")]
    Syntax(serde_json::Error),
    #[error("invalid config: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(issues) => issues,
            ConfigError::Syntax(_) => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    /// Whole archive accumulated in memory, written once.
    #[default]
    Zip,
    /// A sequence of part archives of at most `batch_size` images.
    Chunked,
    /// A plain directory tree.
    Files,
}

impl fmt::Display for StorageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageMode::Zip => "zip",
            StorageMode::Chunked => "chunked",
            StorageMode::Files => "files",
        })
    }
}

impl FromStr for StorageMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zip" | "memory" | "in-memory" => Ok(StorageMode::Zip),
            "chunked" | "streaming" => Ok(StorageMode::Chunked),
            "files" | "directory" => Ok(StorageMode::Files),
            other => Err(format!("unknown storage mode {other:?} (expected zip, chunked or files)")),
        }
    }
}

/// A font reference: a file path, or the id of a font uploaded to the
/// preview service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FontSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font_id: Option<String>,
    #[serde(default)]
    pub percentage: Option<f64>,
}

impl FontSpec {
    pub fn path(path: impl Into<String>, percentage: Option<f64>) -> Self {
        FontSpec {
            path: Some(path.into()),
            font_id: None,
            percentage,
        }
    }

    /// Shown in manifests and errors.
    pub fn label(&self) -> String {
        match (&self.path, &self.font_id) {
            (Some(p), _) => p.clone(),
            (None, Some(id)) => format!("font:{id}"),
            (None, None) => "<unset>".into(),
        }
    }
}

impl FromStr for FontSpec {
    type Err = String;

    /// `PATH[:PCT]`. A trailing `:NUMBER` is read as the percentage.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((path, pct)) = s.rsplit_once(':') {
            if let Ok(p) = pct.trim().parse::<f64>() {
                if path.is_empty() {
                    return Err(format!("font spec {s:?} has no path"));
                }
                return Ok(FontSpec::path(path, Some(p)));
            }
        }
        if s.is_empty() {
            return Err("empty font spec".into());
        }
        Ok(FontSpec::path(s, None))
    }
}

/// Everything that determines the output of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Corpus file path; mutually exclusive with `corpus_text`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_text: Option<String>,
    pub segmentation: SegmentationConfig,
    /// Allowed code point ranges. Empty means unrestricted.
    pub ranges: Vec<CodeRange>,
    /// Combining marks that must survive normalization.
    pub preserve: Vec<CodeRange>,
    pub fonts: Vec<FontSpec>,
    pub size: SizePolicy,
    pub direction: Direction,
    pub alignment: Alignment,
    pub text_color: Rgb,
    pub pad_left: u32,
    pub pad_right: u32,
    pub antialias: bool,
    pub background: BackgroundSpec,
    pub augmentation: AugmentationConfig,
    pub count: u64,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub split: f64,
    pub format: OutputFormat,
    pub storage: StorageMode,
    pub batch_size: usize,
    pub memory_budget: u64,
    /// Worker threads; 0 picks one per core. Never affects output bytes.
    pub workers: usize,
    /// Adds a generation timestamp to the manifest, breaking byte
    /// reproducibility of metadata.json.
    pub timestamp: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            corpus: None,
            corpus_text: None,
            segmentation: SegmentationConfig::default(),
            ranges: KASHMIRI_RANGES.to_vec(),
            preserve: vec![KASHMIRI_DIACRITICS],
            fonts: Vec::new(),
            size: SizePolicy::default(),
            direction: Direction::Rtl,
            alignment: Alignment::Left,
            text_color: Rgb::BLACK,
            pad_left: 10,
            pad_right: 10,
            antialias: true,
            background: BackgroundSpec::default(),
            augmentation: AugmentationConfig::default(),
            count: 1000,
            width: 256,
            height: 64,
            seed: DEFAULT_SEED,
            split: 0.9,
            format: OutputFormat::Crnn,
            storage: StorageMode::Zip,
            batch_size: 1000,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            workers: 0,
            timestamp: false,
        }
    }
}

impl GeneratorConfig {
    /// Parses and validates a JSON document. Syntax errors and semantic
    /// errors are reported separately.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(ConfigError::Syntax)?;
        let cfg = Self::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Deserializes without validating; type errors become issues.
    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        serde_json::from_value(value).map_err(|e| ConfigError::Invalid(vec![ConfigIssue::new("$", e.to_string())]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The config as recorded in a manifest: everything except settings
    /// that cannot change output bytes.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("workers");
        }
        v
    }

    /// Font weights after applying the equal-split default.
    pub fn font_percentages(&self) -> Result<Vec<f64>, ConfigError> {
        let mut issues = Vec::new();
        let p = resolve_percentages(&self.fonts, &mut issues);
        if issues.is_empty() {
            Ok(p)
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    /// Every semantic problem, in field order.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        match (&self.corpus, &self.corpus_text) {
            (None, None) => out.push(ConfigIssue::new("corpus", "a corpus path or corpus_text is required")),
            (Some(_), Some(_)) => out.push(ConfigIssue::new("corpus", "give either corpus or corpus_text, not both")),
            _ => {}
        }
        let seg = &self.segmentation;
        if seg.min_len < 1 {
            out.push(ConfigIssue::new("segmentation.min_len", "must be at least 1"));
        }
        if seg.min_len > seg.max_len {
            out.push(ConfigIssue::new(
                "segmentation.max_len",
                format!("must be >= min_len ({} > {})", seg.min_len, seg.max_len),
            ));
        }
        for (i, r) in self.ranges.iter().chain(&self.preserve).enumerate() {
            if r.lo > r.hi || r.hi > 0x10FFFF {
                let field = if i < self.ranges.len() { "ranges" } else { "preserve" };
                out.push(ConfigIssue::new(format!("{field}[]"), format!("invalid range {r}")));
            }
        }
        if self.fonts.is_empty() {
            out.push(ConfigIssue::new("fonts", "at least one font is required"));
        }
        for (i, f) in self.fonts.iter().enumerate() {
            if f.path.is_some() == f.font_id.is_some() {
                out.push(ConfigIssue::new(format!("fonts[{i}]"), "needs exactly one of path or font_id"));
            }
        }
        resolve_percentages(&self.fonts, &mut out);
        if self.size.min < 1 {
            out.push(ConfigIssue::new("size.min", "must be at least 1"));
        }
        if self.size.min > self.size.max {
            out.push(ConfigIssue::new(
                "size.max",
                format!("must be >= size.min ({} > {})", self.size.min, self.size.max),
            ));
        }
        if u64::from(self.pad_left) + u64::from(self.pad_right) >= u64::from(self.width) {
            out.push(ConfigIssue::new("pad_left", "paddings leave no room for text"));
        }
        check_background(&self.background, &mut out);
        for (field, msg) in self.augmentation.problems() {
            out.push(ConfigIssue::new(format!("augmentation.{field}"), msg));
        }
        if self.count < 1 {
            out.push(ConfigIssue::new("count", "must be at least 1"));
        }
        if self.width < MIN_DIMENSION {
            out.push(ConfigIssue::new("width", format!("must be at least {MIN_DIMENSION}")));
        }
        if self.height < MIN_DIMENSION {
            out.push(ConfigIssue::new("height", format!("must be at least {MIN_DIMENSION}")));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            out.push(ConfigIssue::new("split", format!("must lie strictly between 0 and 1, got {}", self.split)));
        } else if self.count >= 1 && self.count < 2 {
            out.push(ConfigIssue::new("count", "a train/val split needs at least 2 samples"));
        }
        if self.batch_size < 1 {
            out.push(ConfigIssue::new("batch_size", "must be at least 1"));
        }
        if self.memory_budget < 1 {
            out.push(ConfigIssue::new("memory_budget", "must be positive"));
        }
        out
    }
}

fn resolve_percentages(fonts: &[FontSpec], issues: &mut Vec<ConfigIssue>) -> Vec<f64> {
    let given = fonts.iter().filter(|f| f.percentage.is_some()).count();
    if given == 0 {
        return crate::fonts::equal_split(fonts.len());
    }
    if given != fonts.len() {
        issues.push(ConfigIssue::new(
            "fonts[].percentage",
            "give a percentage for every font or for none",
        ));
        return Vec::new();
    }
    let pcts: Vec<f64> = fonts.iter().map(|f| f.percentage.unwrap_or(0.0)).collect();
    if let Some(bad) = pcts.iter().find(|p| !(**p > 0.0)) {
        issues.push(ConfigIssue::new("fonts[].percentage", format!("must be positive, got {bad}")));
    }
    let total: f64 = pcts.iter().sum();
    if (total - 100.0).abs() > PERCENT_TOLERANCE {
        issues.push(ConfigIssue::new(
            "fonts[].percentage",
            format!("percentages sum to {}, expected 100", trim_float(total)),
        ));
    }
    pcts
}

fn check_background(spec: &BackgroundSpec, out: &mut Vec<ConfigIssue>) {
    match spec {
        BackgroundSpec::Color { .. } => {}
        BackgroundSpec::Image { image } => {
            if image.is_empty() {
                out.push(ConfigIssue::new("background.image", "empty path"));
            }
        }
        BackgroundSpec::Mix { options } => {
            if options.is_empty() {
                out.push(ConfigIssue::new("background.options", "mix needs at least one option"));
            }
            for (i, o) in options.iter().enumerate() {
                if o.color.is_some() == o.image.is_some() {
                    out.push(ConfigIssue::new(
                        format!("background.options[{i}]"),
                        "needs exactly one of color or image",
                    ));
                }
            }
            if let Some(bad) = options.iter().find(|o| !(o.percentage > 0.0)) {
                out.push(ConfigIssue::new(
                    "background.options[].percentage",
                    format!("must be positive, got {}", bad.percentage),
                ));
            }
            let total: f64 = options.iter().map(|o| o.percentage).sum();
            if !options.is_empty() && (total - 100.0).abs() > PERCENT_TOLERANCE {
                out.push(ConfigIssue::new(
                    "background.options[].percentage",
                    format!("percentages sum to {}, expected 100", trim_float(total)),
                ));
            }
        }
    }
}

/// `110` rather than `110.0`, but `99.5` stays as is.
fn trim_float(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Resolves relative input paths and uploaded font ids.
#[derive(Debug, Clone, Default)]
pub struct InputPaths {
    /// Base for relative corpus, font and background paths.
    pub base_dir: Option<PathBuf>,
    /// Directory holding uploaded fonts, one file per id.
    pub font_store: Option<PathBuf>,
}

impl InputPaths {
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn font(&self, spec: &FontSpec) -> Option<PathBuf> {
        match (&spec.path, &spec.font_id) {
            (Some(p), _) => Some(self.resolve(p)),
            (None, Some(id)) => {
                let safe = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
                match &self.font_store {
                    Some(store) if safe => Some(store.join(id)),
                    _ => None,
                }
            }
            (None, None) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::MixOption;

    fn valid() -> GeneratorConfig {
        GeneratorConfig {
            corpus_text: Some("سلام دنیا".into()),
            fonts: vec![
                FontSpec::path("a.ttf", Some(40.0)),
                FontSpec::path("b.ttf", Some(35.0)),
                FontSpec::path("c.ttf", Some(25.0)),
            ],
            ..Default::default()
        }
    }

    fn paths(cfg: &GeneratorConfig) -> Vec<String> {
        cfg.issues().into_iter().map(|i| i.path).collect()
    }

    #[test]
    fn defaults() {
        let cfg = GeneratorConfig::default();
        assert_eq!((cfg.width, cfg.height, cfg.seed, cfg.split), (256, 64, 42, 0.9));
        assert_eq!(cfg.memory_budget, 512 * 1024 * 1024);
        assert!(valid().issues().is_empty());
    }

    #[test]
    fn json_round_trip() {
        let cfg = valid();
        let text = cfg.to_json();
        let back = GeneratorConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg = GeneratorConfig::from_json(r#"{"corpus_text": "x", "fonts": [{"path": "a.ttf"}], "count": 5}"#).unwrap();
        assert_eq!(cfg.count, 5);
        assert_eq!(cfg.width, 256);
        assert_eq!(cfg.font_percentages().unwrap(), vec![100.0]);
    }

    #[test]
    fn syntax_and_semantic_errors_differ() {
        assert!(matches!(GeneratorConfig::from_json("{"), Err(ConfigError::Syntax(_))));
        assert!(matches!(
            GeneratorConfig::from_json(r#"{"bogus": 1}"#),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn percentages_summing_to_110() {
        let mut cfg = valid();
        cfg.fonts[0].percentage = Some(50.0);
        let issues = cfg.issues();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].path, "fonts[].percentage");
        assert!(issues[0].message.contains("percentages sum to 110"), "{}", issues[0].message);
    }

    #[test]
    fn mixed_percentages_rejected() {
        let mut cfg = valid();
        cfg.fonts[1].percentage = None;
        assert_eq!(paths(&cfg), ["fonts[].percentage"]);
        cfg.fonts.iter_mut().for_each(|f| f.percentage = None);
        assert!(cfg.issues().is_empty());
        let p = cfg.font_percentages().unwrap();
        assert!((p.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn percentage_tolerance() {
        let mut cfg = valid();
        cfg.fonts[2].percentage = Some(25.005);
        assert!(cfg.issues().is_empty());
        cfg.fonts[2].percentage = Some(25.02);
        assert_eq!(paths(&cfg), ["fonts[].percentage"]);
    }

    #[test]
    fn field_paths() {
        let mut cfg = valid();
        cfg.count = 0;
        cfg.width = 4;
        cfg.split = 1.0;
        cfg.augmentation.probability = -0.1;
        cfg.background = BackgroundSpec::Mix {
            options: vec![MixOption::color(Rgb::WHITE, 60.0)],
        };
        assert_eq!(
            paths(&cfg),
            [
                "pad_left",
                "background.options[].percentage",
                "augmentation.probability",
                "count",
                "width",
                "split"
            ]
        );
        let mut one = valid();
        one.count = 1;
        assert_eq!(paths(&one), ["count"]);
    }

    #[test]
    fn corpus_source_required() {
        let mut cfg = valid();
        cfg.corpus_text = None;
        assert_eq!(paths(&cfg), ["corpus"]);
        cfg.corpus = Some("a".into());
        cfg.corpus_text = Some("b".into());
        assert_eq!(paths(&cfg), ["corpus"]);
    }

    #[test]
    fn font_spec_parsing() {
        assert_eq!("a.ttf:40".parse::<FontSpec>().unwrap(), FontSpec::path("a.ttf", Some(40.0)));
        assert_eq!("a.ttf".parse::<FontSpec>().unwrap(), FontSpec::path("a.ttf", None));
        assert_eq!(
            "C:/fonts/a.ttf".parse::<FontSpec>().unwrap(),
            FontSpec::path("C:/fonts/a.ttf", None)
        );
        assert!(":40".parse::<FontSpec>().is_err());
    }

    #[test]
    fn echo_drops_workers() {
        let mut a = valid();
        let mut b = valid();
        a.workers = 1;
        b.workers = 4;
        assert_eq!(a.echo(), b.echo());
        assert!(a.echo().get("workers").is_none());
        let back: GeneratorConfig = serde_json::from_value(a.echo()).unwrap();
        assert_eq!(back.seed, a.seed);
    }

    #[test]
    fn font_ids_are_sandboxed() {
        let paths = InputPaths {
            base_dir: None,
            font_store: Some("/store".into()),
        };
        let spec = |id: &str| FontSpec {
            path: None,
            font_id: Some(id.into()),
            percentage: None,
        };
        assert_eq!(paths.font(&spec("abc-1")), Some(PathBuf::from("/store/abc-1")));
        assert_eq!(paths.font(&spec("../etc/passwd")), None);
    }
}
