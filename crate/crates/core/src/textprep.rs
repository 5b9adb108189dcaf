//! Corpus loading, segmentation, length filtering, normalization and script
//! validation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

const BOM: char = '\u{FEFF}';

/// Window sizes for n-gram mode, inclusive.
pub const NGRAM_MIN: usize = 2;
pub const NGRAM_MAX: usize = 4;

pub const DEFAULT_MIN_LEN: usize = 1;
pub const DEFAULT_MAX_LEN: usize = 50;

/// Word delimiters besides whitespace: Arabic comma and semicolon, Latin
/// punctuation, Arabic question mark and the Urdu full stop.
pub const WORD_PUNCTUATION: &[char] = &[
    '\u{060C}', '\u{061B}', '.', '!', '?', '\u{061F}', '\u{06D4}', ':', ';', ',',
];

pub const SENTENCE_TERMINATORS: &[char] = &['.', '?', '!', '\u{061F}', '\u{06D4}'];

#[derive(Debug, Error)]
pub enum TextError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus is not valid UTF-8 (first bad byte at offset {offset})")]
    Encoding { offset: usize },
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no valid segments remain after filtering and validation")]
    NoValidSegments,
    #[error("invalid length bounds: min {min}, max {max}")]
    InvalidLengthBounds { min: usize, max: usize },
    #[error("invalid code point range {0:?}")]
    InvalidRange(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    text: String,
    char_count: usize,
    source_name: String,
}

impl Corpus {
    pub fn new(source_name: impl Into<String>, text: impl Into<String>) -> Self {
        let mut text: String = text.into();
        if text.starts_with(BOM) {
            text.drain(..BOM.len_utf8());
        }
        Corpus {
            char_count: text.chars().count(),
            text,
            source_name: source_name.into(),
        }
    }

    /// Decodes UTF-8 bytes; a leading byte-order mark is dropped.
    pub fn from_bytes(source_name: impl Into<String>, bytes: Vec<u8>) -> Result<Self, TextError> {
        let text = String::from_utf8(bytes).map_err(|e| TextError::Encoding {
            offset: e.utf8_error().valid_up_to(),
        })?;
        Ok(Corpus::new(source_name, text))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Corpus::from_bytes(path.display().to_string(), bytes)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn char_count(&self) -> usize {
        self.char_count
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMode {
    Char,
    #[default]
    Word,
    Ngram,
    Sentence,
    Line,
}

impl FromStr for SegmentationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "char" | "character" => Ok(SegmentationMode::Char),
            "word" => Ok(SegmentationMode::Word),
            "ngram" | "n-gram" => Ok(SegmentationMode::Ngram),
            "sentence" => Ok(SegmentationMode::Sentence),
            "line" => Ok(SegmentationMode::Line),
            other => Err(format!(
                "unknown segmentation mode {other:?} (expected char, word, ngram, sentence or line)"
            )),
        }
    }
}

impl fmt::Display for SegmentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SegmentationMode::Char => "char",
            SegmentationMode::Word => "word",
            SegmentationMode::Ngram => "ngram",
            SegmentationMode::Sentence => "sentence",
            SegmentationMode::Line => "line",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub mode: SegmentationMode,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            mode: SegmentationMode::Word,
            min_len: DEFAULT_MIN_LEN,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), TextError> {
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(TextError::InvalidLengthBounds {
                min: self.min_len,
                max: self.max_len,
            });
        }
        Ok(())
    }
}

/// Inclusive code point interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodeRange {
    pub lo: u32,
    pub hi: u32,
}

impl CodeRange {
    pub const fn new(lo: u32, hi: u32) -> Self {
        CodeRange { lo, hi }
    }

    pub fn contains(&self, c: char) -> bool {
        (self.lo..=self.hi).contains(&(c as u32))
    }
}

impl fmt::Display for CodeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04X}-{:04X}", self.lo, self.hi)
    }
}

impl FromStr for CodeRange {
    type Err = TextError;

    /// Parses `HEXLO-HEXHI`, with optional `U+`/`0x` prefixes, or a single
    /// hex code point.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TextError::InvalidRange(s.to_string());
        let hex = |t: &str| -> Result<u32, TextError> {
            let t = t.trim();
            let t = t
                .strip_prefix("U+")
                .or_else(|| t.strip_prefix("u+"))
                .or_else(|| t.strip_prefix("0x"))
                .unwrap_or(t);
            u32::from_str_radix(t, 16).map_err(|_| bad())
        };
        let (lo, hi) = match s.split_once('-') {
            Some((lo, hi)) => (hex(lo)?, hex(hi)?),
            None => {
                let v = hex(s)?;
                (v, v)
            }
        };
        if lo > hi || hi > 0x10FFFF {
            return Err(bad());
        }
        Ok(CodeRange { lo, hi })
    }
}

impl Serialize for CodeRange {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CodeRange {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Arabic, Arabic Supplement, Arabic Extended-A, Basic Latin and General
/// Punctuation.
pub const KASHMIRI_RANGES: [CodeRange; 5] = [
    CodeRange::new(0x0600, 0x06FF),
    CodeRange::new(0x0750, 0x077F),
    CodeRange::new(0x08A0, 0x08FF),
    CodeRange::new(0x0020, 0x007F),
    CodeRange::new(0x2000, 0x206F),
];

/// Combining marks that must survive normalization untouched.
pub const KASHMIRI_DIACRITICS: CodeRange = CodeRange::new(0x064B, 0x065F);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptPolicy {
    ranges: Vec<CodeRange>,
    preserved: Vec<CodeRange>,
}

impl ScriptPolicy {
    /// Builds a policy, merging overlapping or adjacent ranges. Preserved
    /// diacritic ranges are clipped to the allowed set.
    pub fn new(ranges: &[CodeRange], preserved: &[CodeRange]) -> Self {
        let ranges = canonicalize(ranges);
        let preserved = canonicalize(preserved)
            .into_iter()
            .flat_map(|p| {
                ranges.iter().filter_map(move |r| {
                    let lo = p.lo.max(r.lo);
                    let hi = p.hi.min(r.hi);
                    (lo <= hi).then_some(CodeRange { lo, hi })
                })
            })
            .collect();
        ScriptPolicy { ranges, preserved }
    }

    pub fn kashmiri() -> Self {
        ScriptPolicy::new(&KASHMIRI_RANGES, &[KASHMIRI_DIACRITICS])
    }

    /// Accepts any scalar value.
    pub fn unrestricted() -> Self {
        ScriptPolicy::new(&[CodeRange::new(0, 0x10FFFF)], &[])
    }

    pub fn ranges(&self) -> &[CodeRange] {
        &self.ranges
    }

    pub fn preserved(&self) -> &[CodeRange] {
        &self.preserved
    }

    pub fn allows(&self, c: char) -> bool {
        let cp = c as u32;
        // ranges are sorted and disjoint
        let idx = self.ranges.partition_point(|r| r.hi < cp);
        self.ranges.get(idx).is_some_and(|r| r.lo <= cp)
    }

    pub fn is_preserved(&self, c: char) -> bool {
        self.preserved.iter().any(|r| r.contains(c))
    }

    /// Whether the policy admits any Arabic-block letter; used to decide if
    /// fonts must cover Arabic.
    pub fn is_arabic(&self) -> bool {
        self.ranges
            .iter()
            .any(|r| r.lo <= 0x06FF && r.hi >= 0x0600 && !(r.lo == 0 && r.hi == 0x10FFFF))
    }
}

impl Default for ScriptPolicy {
    fn default() -> Self {
        ScriptPolicy::kashmiri()
    }
}

fn canonicalize(ranges: &[CodeRange]) -> Vec<CodeRange> {
    let mut sorted: Vec<CodeRange> = ranges.to_vec();
    sorted.sort();
    let mut out: Vec<CodeRange> = Vec::with_capacity(sorted.len());
    for r in sorted {
        match out.last_mut() {
            Some(last) if r.lo <= last.hi.saturating_add(1) => last.hi = last.hi.max(r.hi),
            _ => out.push(r),
        }
    }
    out
}

/// A validated, NFC-normalized text unit; the ground-truth label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Segment {
    text: String,
    grapheme_len: usize,
}

impl Segment {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn grapheme_len(&self) -> usize {
        self.grapheme_len
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Accepted(Segment),
    Rejected { offender: char },
}

pub fn grapheme_count(s: &str) -> usize {
    s.graphemes(true).count()
}

pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

fn is_word_delimiter(c: char) -> bool {
    c.is_whitespace() || WORD_PUNCTUATION.contains(&c)
}

fn split_words(text: &str) -> Vec<String> {
    text.split(is_word_delimiter)
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn split_trimmed<'a>(parts: impl Iterator<Item = &'a str>) -> Vec<String> {
    parts
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(collapse_breaks)
        .collect()
}

/// Replaces each whitespace run holding anything other than U+0020 (a
/// line break, a tab) with one space, so labels stay on one line.
pub fn collapse_breaks(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run = String::new();
    let flush = |run: &mut String, out: &mut String| {
        if run.chars().any(|c| c != ' ') {
            out.push(' ');
        } else {
            out.push_str(run);
        }
        run.clear();
    };
    for c in s.chars() {
        if c.is_whitespace() {
            run.push(c);
        } else {
            flush(&mut run, &mut out);
            out.push(c);
        }
    }
    flush(&mut run, &mut out);
    out
}

/// Splits a corpus into raw segment strings, in corpus order.
pub fn segment(corpus: &Corpus, cfg: &SegmentationConfig) -> Result<Vec<String>, TextError> {
    let text = corpus.text();
    if text.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let out = match cfg.mode {
        SegmentationMode::Char => text
            .graphemes(true)
            .filter(|g| !g.chars().all(char::is_whitespace))
            .map(str::to_string)
            .collect(),
        SegmentationMode::Word => split_words(text),
        SegmentationMode::Ngram => ngrams(&split_words(text)),
        SegmentationMode::Sentence => split_trimmed(text.split(SENTENCE_TERMINATORS)),
        SegmentationMode::Line => {
            let unified = text.replace("\r\n", "\n").replace('\r', "\n");
            split_trimmed(unified.split('\n'))
        }
    };
    Ok(out)
}

/// Space-joined word windows for n = 2..=4, ascending n then position,
/// keeping only the first occurrence of each distinct window.
fn ngrams(words: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        for window in words.windows(n) {
            let joined = window.join(" ");
            if seen.insert(joined.clone()) {
                out.push(joined);
            }
        }
    }
    out
}

pub fn filter_by_length(segments: Vec<String>, cfg: &SegmentationConfig) -> Vec<String> {
    segments
        .into_iter()
        .filter(|s| (cfg.min_len..=cfg.max_len).contains(&grapheme_count(s)))
        .collect()
}

/// Normalizes to NFC and checks every scalar against the policy.
pub fn validate(segment: &str, policy: &ScriptPolicy) -> Validation {
    let text = normalize(segment);
    if let Some(offender) = text.chars().find(|&c| !policy.allows(c)) {
        return Validation::Rejected { offender };
    }
    debug_assert!(preserves_diacritics(segment, &text, policy));
    Validation::Accepted(Segment {
        grapheme_len: grapheme_count(&text),
        text,
    })
}

/// Byte-level entry point for untrusted input.
pub fn validate_bytes(bytes: &[u8], policy: &ScriptPolicy) -> Result<Validation, TextError> {
    let s = std::str::from_utf8(bytes).map_err(|e| TextError::Encoding {
        offset: e.valid_up_to(),
    })?;
    Ok(validate(s, policy))
}

/// True when `output` carries exactly the preserved diacritics present in
/// the NFC form of `input`, in order.
pub fn preserves_diacritics(input: &str, output: &str, policy: &ScriptPolicy) -> bool {
    let marks = |s: &str| -> Vec<char> { s.chars().filter(|&c| policy.is_preserved(c)).collect() };
    marks(&normalize(input)) == marks(output)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PreparedText {
    pub segments: Vec<Segment>,
    /// Raw segments produced before any filtering.
    pub raw_count: usize,
    pub length_filtered: usize,
    pub rejected: usize,
}

/// Segment, length-filter, then normalize and validate. Rejected segments
/// are dropped and counted.
pub fn prepare(
    corpus: &Corpus,
    cfg: &SegmentationConfig,
    policy: &ScriptPolicy,
) -> Result<PreparedText, TextError> {
    cfg.validate()?;
    let raw = segment(corpus, cfg)?;
    let raw_count = raw.len();
    let kept = filter_by_length(raw, cfg);
    let mut length_filtered = raw_count - kept.len();
    let mut rejected = 0;
    let mut segments = Vec::with_capacity(kept.len());
    for s in kept {
        match validate(&s, policy) {
            Validation::Accepted(seg) => {
                // NFC may merge clusters; keep the bound on the final label.
                if (cfg.min_len..=cfg.max_len).contains(&seg.grapheme_len) {
                    segments.push(seg);
                } else {
                    length_filtered += 1;
                }
            }
            Validation::Rejected { .. } => rejected += 1,
        }
    }
    if segments.is_empty() {
        return Err(TextError::NoValidSegments);
    }
    Ok(PreparedText {
        segments,
        raw_count,
        length_filtered,
        rejected,
    })
}
