//! Font loading, distribution-weighted font selection and size sampling.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rustybuzz::ttf_parser;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prng::Lcg;

/// Allowed absolute deviation of the percentage total from 100.
pub const PERCENT_TOLERANCE: f64 = 0.01;

/// Code points probed when checking Arabic coverage.
const ARABIC_PROBE: &[char] = &[
    '\u{0627}', '\u{0628}', '\u{062A}', '\u{0633}', '\u{0644}', '\u{0645}', '\u{0646}',
    '\u{0648}', '\u{064A}', '\u{0654}', '\u{0655}', '\u{0656}', '\u{0657}',
];

#[derive(Debug, Error)]
pub enum FontError {
    #[error("failed to read font {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{name} is not a parseable TrueType/OpenType font")]
    Unparseable { name: String },
    #[error("font percentage for {name} must be positive, got {value}")]
    NonPositivePercentage { name: String, value: f64 },
    #[error("font percentages sum to {0}, expected 100")]
    BadTotal(f64),
    #[error("no fonts configured")]
    Empty,
    #[error("invalid size range {min}..{max}")]
    InvalidSizeRange { min: u32, max: u32 },
}

/// A loaded face with its selection weight.
#[derive(Clone)]
pub struct FontEntry {
    display_name: String,
    family_name: String,
    percentage: f64,
    source_path: Option<PathBuf>,
    data: Arc<[u8]>,
    glyph_count: u16,
}

impl fmt::Debug for FontEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FontEntry")
            .field("display_name", &self.display_name)
            .field("percentage", &self.percentage)
            .field("glyph_count", &self.glyph_count)
            .finish()
    }
}

impl FontEntry {
    pub fn from_bytes(display_name: impl Into<String>, data: Vec<u8>, percentage: f64) -> Result<Self, FontError> {
        let display_name = display_name.into();
        let (glyph_count, family_name) = {
            let face = ttf_parser::Face::parse(&data, 0).map_err(|_| FontError::Unparseable {
                name: display_name.clone(),
            })?;
            if face.number_of_glyphs() == 0 {
                return Err(FontError::Unparseable { name: display_name });
            }
            let family = face
                .names()
                .into_iter()
                .filter(|n| n.name_id == ttf_parser::name_id::FAMILY && n.is_unicode())
                .find_map(|n| n.to_string())
                .unwrap_or_else(|| display_name.clone());
            (face.number_of_glyphs(), family)
        };
        if !(percentage > 0.0) {
            return Err(FontError::NonPositivePercentage {
                name: display_name,
                value: percentage,
            });
        }
        Ok(FontEntry {
            display_name,
            family_name,
            percentage,
            source_path: None,
            data: data.into(),
            glyph_count,
        })
    }

    pub fn load(path: impl AsRef<Path>, percentage: f64) -> Result<Self, FontError> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|source| FontError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let mut entry = FontEntry::from_bytes(name, data, percentage)?;
        entry.source_path = Some(path.to_path_buf());
        Ok(entry)
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn family_name(&self) -> &str {
        &self.family_name
    }

    pub fn percentage(&self) -> f64 {
        self.percentage
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn glyph_count(&self) -> u16 {
        self.glyph_count
    }

    /// Parses a shaping face over the shared font bytes.
    pub fn face(&self) -> rustybuzz::Face<'_> {
        // Parsing succeeded at load time on the same bytes.
        rustybuzz::Face::from_slice(&self.data, 0).expect("font bytes validated at load")
    }

    pub fn has_glyph(&self, c: char) -> bool {
        self.face().glyph_index(c).is_some()
    }

    /// Probe code points the face cannot map.
    pub fn missing_from(&self, probe: &[char]) -> Vec<char> {
        let face = self.face();
        probe
            .iter()
            .copied()
            .filter(|&c| face.glyph_index(c).is_none())
            .collect()
    }
}

/// Reported when a font lacks glyphs the script policy needs. Not fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageWarning {
    pub font: String,
    pub missing: Vec<char>,
}

impl fmt::Display for CoverageWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cps: Vec<String> = self.missing.iter().map(|c| format!("U+{:04X}", *c as u32)).collect();
        write!(f, "font {} lacks glyphs for {}", self.font, cps.join(", "))
    }
}

/// Checks Arabic coverage; `None` when the probe set is fully mapped.
pub fn arabic_coverage(entry: &FontEntry) -> Option<CoverageWarning> {
    let missing = entry.missing_from(ARABIC_PROBE);
    (!missing.is_empty()).then(|| CoverageWarning {
        font: entry.display_name.clone(),
        missing,
    })
}

/// Ordered font distribution whose percentages sum to 100.
#[derive(Debug, Clone)]
pub struct FontSet {
    entries: Vec<FontEntry>,
}

impl FontSet {
    pub fn new(entries: Vec<FontEntry>) -> Result<Self, FontError> {
        if entries.is_empty() {
            return Err(FontError::Empty);
        }
        let total: f64 = entries.iter().map(|e| e.percentage).sum();
        if (total - 100.0).abs() > PERCENT_TOLERANCE {
            return Err(FontError::BadTotal(total));
        }
        Ok(FontSet { entries })
    }

    pub fn entries(&self) -> &[FontEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inverse-transform selection. Consumes exactly one uniform.
    pub fn select(&self, rng: &mut Lcg) -> usize {
        let u = rng.next_f64() * 100.0;
        select_bucket(self.entries.iter().map(|e| e.percentage), u)
    }
}

/// Index of the first bucket whose running total exceeds `u`; the last
/// bucket when rounding leaves `u` at or above the total.
pub fn select_bucket(percentages: impl ExactSizeIterator<Item = f64>, u: f64) -> usize {
    let n = percentages.len();
    let mut cumulative = 0.0;
    for (i, p) in percentages.enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    n.saturating_sub(1)
}

/// Splits 100 evenly across `n` fonts.
pub fn equal_split(n: usize) -> Vec<f64> {
    vec![100.0 / n as f64; n]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SizeDistribution {
    #[default]
    Normal,
    Uniform,
}

impl FromStr for SizeDistribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(SizeDistribution::Normal),
            "uniform" => Ok(SizeDistribution::Uniform),
            other => Err(format!("unknown size distribution {other:?} (expected normal or uniform)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizePolicy {
    pub min: u32,
    pub max: u32,
    pub distribution: SizeDistribution,
}

impl Default for SizePolicy {
    fn default() -> Self {
        SizePolicy {
            min: 28,
            max: 42,
            distribution: SizeDistribution::Normal,
        }
    }
}

impl SizePolicy {
    pub fn validate(&self) -> Result<(), FontError> {
        if self.min < 1 || self.min > self.max {
            return Err(FontError::InvalidSizeRange {
                min: self.min,
                max: self.max,
            });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        (f64::from(self.min) + f64::from(self.max)) / 2.0
    }

    /// A sixth of the range, so that ±3 standard deviations span it.
    pub fn std_dev(&self) -> f64 {
        (f64::from(self.max) - f64::from(self.min)) / 6.0
    }

    /// Size for a given standard normal deviate, rounded then clipped.
    pub fn size_for_deviate(&self, g: f64) -> u32 {
        let z = (self.mean() + self.std_dev() * g).round();
        z.clamp(f64::from(self.min), f64::from(self.max)) as u32
    }

    /// Normal mode consumes two uniforms, uniform mode one.
    pub fn sample(&self, rng: &mut Lcg) -> u32 {
        match self.distribution {
            SizeDistribution::Normal => self.size_for_deviate(rng.gaussian()),
            SizeDistribution::Uniform => {
                let lo = f64::from(self.min);
                let span = f64::from(self.max) + 1.0 - lo;
                let z = (lo + rng.next_f64() * span).floor() as u32;
                z.min(self.max)
            }
        }
    }
}
