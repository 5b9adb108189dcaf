//! Label formats, train/val splitting, dataset sinks, manifests and
//! integrity verification.
//!
//! Every layout holds `images/image_NNNNNN.png`, `labels_train.<ext>`,
//! `labels_val.<ext>` and `metadata.json`. Label files start with a UTF-8
//! byte-order mark, use LF line endings and end with a newline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, Cursor, Read, Seek, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::config::StorageMode;
use crate::raster::has_png_signature;
use crate::textprep::normalize;

pub const BOM: &str = "\u{FEFF}";
pub const MANIFEST_NAME: &str = "metadata.json";
pub const ARCHIVE_NAME: &str = "dataset.zip";
pub const FAILED_MARKER: &str = "FAILED";
pub const IMAGE_DIR: &str = "images";
/// Files mode appends pending labels to disk after this many samples.
pub const LABEL_FLUSH_INTERVAL: usize = 1000;

#[derive(Debug, Error)]
pub enum PackagingError {
    #[error("label for {name} contains a tab or line break, which the crnn format cannot represent")]
    UnrepresentableLabel { name: String },
    #[error("a train/val split needs at least 2 samples, got {0}")]
    TooFewForSplit(u64),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("no label records")]
    Empty,
    #[error("label file line {line}: {message}")]
    LabelParse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("zip archive: {0}")]
    Zip(#[from] zip::result::ZipError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PackagingError + '_ {
    move |source| PackagingError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// `NAME<TAB>TEXT` lines.
    #[default]
    Crnn,
    /// JSON lines with `image` and `text` keys.
    Trocr,
    /// Two quoted columns, no header.
    Csv,
    /// `file_name,text` header, then quoted rows.
    Huggingface,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 4] = [
        OutputFormat::Crnn,
        OutputFormat::Trocr,
        OutputFormat::Csv,
        OutputFormat::Huggingface,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Crnn => "txt",
            OutputFormat::Trocr => "jsonl",
            OutputFormat::Csv | OutputFormat::Huggingface => "csv",
        }
    }

    pub fn train_file(self) -> String {
        format!("labels_train.{}", self.extension())
    }

    pub fn val_file(self) -> String {
        format!("labels_val.{}", self.extension())
    }

    fn header(self) -> &'static str {
        match self {
            OutputFormat::Huggingface => "file_name,text\n",
            _ => "",
        }
    }

    /// One encoded label record, newline included. `name` is the bare
    /// image file name.
    pub fn encode_entry(self, name: &str, label: &str) -> Result<String, PackagingError> {
        match self {
            OutputFormat::Crnn => {
                if label.contains(['\t', '\n', '\r']) {
                    return Err(PackagingError::UnrepresentableLabel { name: name.into() });
                }
                Ok(format!("{name}\t{label}\n"))
            }
            OutputFormat::Trocr => {
                let line = serde_json::to_string(&TrocrLine {
                    image: format!("{IMAGE_DIR}/{name}"),
                    text: label.to_string(),
                })
                .expect("strings serialize");
                Ok(line + "\n")
            }
            OutputFormat::Csv | OutputFormat::Huggingface => {
                Ok(format!("{},{}\n", csv_quote(&format!("{IMAGE_DIR}/{name}")), csv_quote(label)))
            }
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Crnn => "crnn",
            OutputFormat::Trocr => "trocr",
            OutputFormat::Csv => "csv",
            OutputFormat::Huggingface => "huggingface",
        })
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "crnn" | "tesseract" => Ok(OutputFormat::Crnn),
            "trocr" | "jsonl" => Ok(OutputFormat::Trocr),
            "csv" => Ok(OutputFormat::Csv),
            "huggingface" | "hf" => Ok(OutputFormat::Huggingface),
            other => Err(format!(
                "unknown format {other:?} (expected crnn, trocr, csv or huggingface)"
            )),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TrocrLine {
    image: String,
    text: String,
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Zero-based image file name; the pad width grows past a million.
pub fn filename_for(index: u64) -> String {
    format!("image_{index:06}.png")
}

/// A rendered sample ready for packaging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub index: u64,
    pub image_png: Vec<u8>,
    pub label: String,
    pub font_used: String,
    pub size_used: u32,
    pub background_used: String,
    pub recipe_summary: String,
}

impl SampleRecord {
    pub fn file_name(&self) -> String {
        filename_for(self.index)
    }
}

/// A decoded label record. `image` is the file name without directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelEntry {
    pub image: String,
    pub text: String,
}

/// Full label file contents: BOM, optional header, one record per entry.
pub fn encode_labels<'a>(
    entries: impl IntoIterator<Item = (&'a str, &'a str)>,
    format: OutputFormat,
) -> Result<Vec<u8>, PackagingError> {
    let mut out = String::from(BOM);
    out.push_str(format.header());
    for (name, label) in entries {
        out.push_str(&format.encode_entry(name, label)?);
    }
    Ok(out.into_bytes())
}

pub fn decode_labels(bytes: &[u8], format: OutputFormat) -> Result<Vec<LabelEntry>, PackagingError> {
    let text = std::str::from_utf8(bytes).map_err(|e| PackagingError::LabelParse {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let text = text.strip_prefix(BOM).unwrap_or(text);
    let strip_dir = |s: &str| s.strip_prefix("images/").unwrap_or(s).to_string();
    match format {
        OutputFormat::Crnn => text
            .split_terminator('\n')
            .enumerate()
            .map(|(i, line)| {
                line.split_once('\t')
                    .map(|(name, label)| LabelEntry {
                        image: strip_dir(name),
                        text: label.to_string(),
                    })
                    .ok_or_else(|| PackagingError::LabelParse {
                        line: i + 1,
                        message: "missing tab separator".into(),
                    })
            })
            .collect(),
        OutputFormat::Trocr => text
            .split_terminator('\n')
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str::<TrocrLine>(line)
                    .map(|l| LabelEntry {
                        image: strip_dir(&l.image),
                        text: l.text,
                    })
                    .map_err(|e| PackagingError::LabelParse {
                        line: i + 1,
                        message: e.to_string(),
                    })
            })
            .collect(),
        OutputFormat::Csv | OutputFormat::Huggingface => {
            let has_header = format == OutputFormat::Huggingface;
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(has_header)
                .flexible(false)
                .from_reader(text.as_bytes());
            if has_header {
                let headers = reader.headers().map_err(|e| PackagingError::LabelParse {
                    line: 1,
                    message: e.to_string(),
                })?;
                if headers.iter().collect::<Vec<_>>() != ["file_name", "text"] {
                    return Err(PackagingError::LabelParse {
                        line: 1,
                        message: "expected header file_name,text".into(),
                    });
                }
            }
            let offset = if has_header { 2 } else { 1 };
            reader
                .records()
                .enumerate()
                .map(|(i, rec)| {
                    let rec = rec.map_err(|e| PackagingError::LabelParse {
                        line: i + offset,
                        message: e.to_string(),
                    })?;
                    if rec.len() != 2 {
                        return Err(PackagingError::LabelParse {
                            line: i + offset,
                            message: format!("expected 2 columns, found {}", rec.len()),
                        });
                    }
                    Ok(LabelEntry {
                        image: strip_dir(&rec[0]),
                        text: rec[1].to_string(),
                    })
                })
                .collect()
        }
    }
}

/// Number of training samples: the first `floor(ratio * n)` indices.
pub fn split_point(n: u64, ratio: f64) -> Result<u64, PackagingError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PackagingError::BadRatio(ratio));
    }
    if n < 2 {
        return Err(PackagingError::TooFewForSplit(n));
    }
    // The epsilon absorbs representation error such as 0.9 * 10 = 8.999...
    Ok(((ratio * n as f64 + 1e-9).floor() as u64).min(n))
}

pub fn split_train_val<T>(records: &[T], ratio: f64) -> Result<(&[T], &[T]), PackagingError> {
    let k = split_point(records.len() as u64, ratio)? as usize;
    Ok(records.split_at(k))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputDigests {
    pub corpus: Option<InputFile>,
    pub fonts: Vec<InputFile>,
    pub backgrounds: Vec<InputFile>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub total: u64,
    pub train: u64,
    pub val: u64,
    pub clean: u64,
    pub augmented: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageCount {
    pub name: String,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statistics {
    /// Segments produced before any filtering.
    pub raw_segments: u64,
    /// Segments that passed every filter.
    pub segments: u64,
    pub rejected: u64,
    pub length_filtered: u64,
    /// Segments passed over because they did not fit the canvas.
    pub skipped_unfit: u64,
    pub missing_glyphs: u64,
    pub throttle_events: u64,
    pub jpeg_failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkInfo {
    pub file: String,
    pub images: u64,
    pub sha256: String,
}

/// The contents of metadata.json. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool_version: String,
    pub seed: u64,
    pub format: OutputFormat,
    pub storage: StorageMode,
    pub config: serde_json::Value,
    pub inputs: InputDigests,
    pub counts: SampleCounts,
    pub transforms: BTreeMap<String, u64>,
    pub fonts: Vec<UsageCount>,
    pub backgrounds: Vec<UsageCount>,
    pub statistics: Statistics,
    pub characters: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunks: Vec<ChunkInfo>,
    pub checksums: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl DatasetManifest {
    /// Pretty JSON with two-space indentation and a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Where each sample's label goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SinkLayout {
    pub format: OutputFormat,
    /// Samples with index below this go to the training split.
    pub train_count: u64,
}

/// Ordered consumer of generated samples.
pub trait DatasetSink: Send {
    /// Records must arrive in ascending index order.
    fn write_sample(&mut self, record: &SampleRecord) -> Result<(), PackagingError>;
    /// Bytes held in memory and not yet written out.
    fn buffered_bytes(&self) -> u64;
    fn can_drain(&self) -> bool;
    fn drain(&mut self) -> Result<(), PackagingError>;
    /// Writes labels and the manifest, filling in its checksum list.
    /// Returns the files written at the top level.
    fn finish(&mut self, manifest: &mut DatasetManifest) -> Result<Vec<PathBuf>, PackagingError>;
    /// Called once after a fatal error.
    fn abort(&mut self, reason: &str);
}

/// An incrementally built label file.
struct LabelStream {
    name: String,
    pending: String,
    hasher: Sha256,
    records: u64,
}

impl LabelStream {
    fn new(name: String, format: OutputFormat) -> Self {
        let mut pending = String::from(BOM);
        pending.push_str(format.header());
        LabelStream {
            name,
            pending,
            hasher: Sha256::new(),
            records: 0,
        }
    }

    /// Pending text, recorded in the running digest.
    fn take(&mut self) -> String {
        let out = std::mem::take(&mut self.pending);
        self.hasher.update(out.as_bytes());
        out
    }

    fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

struct LabelSet {
    layout: SinkLayout,
    train: LabelStream,
    val: LabelStream,
}

impl LabelSet {
    fn new(layout: SinkLayout) -> Self {
        LabelSet {
            layout,
            train: LabelStream::new(layout.format.train_file(), layout.format),
            val: LabelStream::new(layout.format.val_file(), layout.format),
        }
    }

    fn push(&mut self, record: &SampleRecord) -> Result<(), PackagingError> {
        let line = self.layout.format.encode_entry(&record.file_name(), &record.label)?;
        let stream = if record.index < self.layout.train_count {
            &mut self.train
        } else {
            &mut self.val
        };
        stream.pending.push_str(&line);
        stream.records += 1;
        Ok(())
    }

    fn pending_bytes(&self) -> u64 {
        (self.train.pending.len() + self.val.pending.len()) as u64
    }
}

fn zip_options(method: CompressionMethod) -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(method)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644)
}

/// PNGs are already compressed; deflating them again only costs time.
fn image_options() -> SimpleFileOptions {
    zip_options(CompressionMethod::Stored)
}

fn text_options() -> SimpleFileOptions {
    zip_options(CompressionMethod::Deflated)
}

fn image_entry(record: &SampleRecord) -> String {
    format!("{IMAGE_DIR}/{}", record.file_name())
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PackagingError> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<(), PackagingError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// In-memory archive written to `<dir>/dataset.zip` on finish.
pub struct ZipSink {
    path: PathBuf,
    writer: Option<ZipWriter<Cursor<Vec<u8>>>>,
    written: u64,
    labels: LabelSet,
    checksums: BTreeMap<String, String>,
}

impl ZipSink {
    pub fn new(dir: &Path, layout: SinkLayout) -> Result<Self, PackagingError> {
        create_dir(dir)?;
        Ok(ZipSink {
            path: dir.join(ARCHIVE_NAME),
            writer: Some(ZipWriter::new(Cursor::new(Vec::new()))),
            written: 0,
            labels: LabelSet::new(layout),
            checksums: BTreeMap::new(),
        })
    }

    fn writer(&mut self) -> &mut ZipWriter<Cursor<Vec<u8>>> {
        self.writer.as_mut().expect("zip sink used after finish")
    }
}

impl DatasetSink for ZipSink {
    fn write_sample(&mut self, record: &SampleRecord) -> Result<(), PackagingError> {
        self.labels.push(record)?;
        let name = image_entry(record);
        let w = self.writer();
        w.start_file(name.as_str(), image_options())?;
        w.write_all(&record.image_png).map_err(io_err(Path::new(&name)))?;
        self.written += record.image_png.len() as u64;
        self.checksums.insert(name, sha256_hex(&record.image_png));
        Ok(())
    }

    fn buffered_bytes(&self) -> u64 {
        self.written + self.labels.pending_bytes()
    }

    fn can_drain(&self) -> bool {
        false
    }

    fn drain(&mut self) -> Result<(), PackagingError> {
        Ok(())
    }

    fn finish(&mut self, manifest: &mut DatasetManifest) -> Result<Vec<PathBuf>, PackagingError> {
        for stream in [&mut self.labels.train, &mut self.labels.val] {
            let text = stream.take();
            self.checksums.insert(stream.name.clone(), stream.digest());
            let w = self.writer.as_mut().expect("zip sink used after finish");
            w.start_file(stream.name.as_str(), text_options())?;
            w.write_all(text.as_bytes()).map_err(io_err(Path::new(&stream.name)))?;
        }
        manifest.checksums = std::mem::take(&mut self.checksums);
        let json = manifest.to_json();
        let mut w = self.writer.take().expect("zip sink used after finish");
        w.start_file(MANIFEST_NAME, text_options())?;
        w.write_all(json.as_bytes()).map_err(io_err(Path::new(MANIFEST_NAME)))?;
        let bytes = w.finish()?.into_inner();
        write_atomic(&self.path, &bytes)?;
        Ok(vec![self.path.clone()])
    }

    fn abort(&mut self, _reason: &str) {
        self.writer = None;
        let _ = fs::remove_file(self.path.with_extension("partial"));
    }
}

pub fn part_name(index: usize) -> String {
    format!("dataset.part-{index:04}.zip")
}

struct Part {
    writer: ZipWriter<Cursor<Vec<u8>>>,
    labels: LabelSet,
    images: u64,
    written: u64,
}

/// Part archives of at most `batch_size` images, each with its own label
/// files, followed by one archive holding only the manifest.
pub struct ChunkedSink {
    dir: PathBuf,
    layout: SinkLayout,
    batch_size: usize,
    current: Option<Part>,
    parts: Vec<PathBuf>,
    chunks: Vec<ChunkInfo>,
    checksums: BTreeMap<String, String>,
}

impl ChunkedSink {
    pub fn new(dir: &Path, layout: SinkLayout, batch_size: usize) -> Result<Self, PackagingError> {
        create_dir(dir)?;
        Ok(ChunkedSink {
            dir: dir.to_path_buf(),
            layout,
            batch_size: batch_size.max(1),
            current: None,
            parts: Vec::new(),
            chunks: Vec::new(),
            checksums: BTreeMap::new(),
        })
    }

    fn close_part(&mut self) -> Result<(), PackagingError> {
        let Some(mut part) = self.current.take() else {
            return Ok(());
        };
        let name = part_name(self.parts.len());
        for stream in [&mut part.labels.train, &mut part.labels.val] {
            let text = stream.take();
            self.checksums.insert(format!("{name}/{}", stream.name), stream.digest());
            part.writer.start_file(stream.name.as_str(), text_options())?;
            part.writer.write_all(text.as_bytes()).map_err(io_err(Path::new(&name)))?;
        }
        let bytes = part.writer.finish()?.into_inner();
        let path = self.dir.join(&name);
        write_atomic(&path, &bytes)?;
        self.chunks.push(ChunkInfo {
            file: name,
            images: part.images,
            sha256: sha256_hex(&bytes),
        });
        self.parts.push(path);
        Ok(())
    }
}

impl DatasetSink for ChunkedSink {
    fn write_sample(&mut self, record: &SampleRecord) -> Result<(), PackagingError> {
        let layout = self.layout;
        let part = self.current.get_or_insert_with(|| Part {
            writer: ZipWriter::new(Cursor::new(Vec::new())),
            labels: LabelSet::new(layout),
            images: 0,
            written: 0,
        });
        part.labels.push(record)?;
        let entry = image_entry(record);
        part.writer.start_file(entry.as_str(), image_options())?;
        part.writer.write_all(&record.image_png).map_err(io_err(Path::new(&entry)))?;
        part.images += 1;
        part.written += record.image_png.len() as u64;
        let key = format!("{}/{entry}", part_name(self.parts.len()));
        self.checksums.insert(key, sha256_hex(&record.image_png));
        if part.images as usize >= self.batch_size {
            self.close_part()?;
        }
        Ok(())
    }

    fn buffered_bytes(&self) -> u64 {
        self.current
            .as_ref()
            .map_or(0, |p| p.written + p.labels.pending_bytes())
    }

    fn can_drain(&self) -> bool {
        true
    }

    fn drain(&mut self) -> Result<(), PackagingError> {
        self.close_part()
    }

    fn finish(&mut self, manifest: &mut DatasetManifest) -> Result<Vec<PathBuf>, PackagingError> {
        self.close_part()?;
        manifest.chunks = std::mem::take(&mut self.chunks);
        manifest.checksums = std::mem::take(&mut self.checksums);
        let mut w = ZipWriter::new(Cursor::new(Vec::new()));
        w.start_file(MANIFEST_NAME, text_options())?;
        w.write_all(manifest.to_json().as_bytes())
            .map_err(io_err(Path::new(MANIFEST_NAME)))?;
        let bytes = w.finish()?.into_inner();
        let path = self.dir.join(part_name(self.parts.len()));
        write_atomic(&path, &bytes)?;
        self.parts.push(path);
        Ok(self.parts.clone())
    }

    fn abort(&mut self, _reason: &str) {
        self.current = None;
        for p in self.parts.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

/// Plain directory tree. Images are written immediately; labels are
/// appended every [`LABEL_FLUSH_INTERVAL`] samples.
pub struct FilesSink {
    dir: PathBuf,
    labels: LabelSet,
    since_flush: usize,
    checksums: BTreeMap<String, String>,
    opened: bool,
}

impl FilesSink {
    pub fn new(dir: &Path, layout: SinkLayout) -> Result<Self, PackagingError> {
        create_dir(&dir.join(IMAGE_DIR))?;
        let _ = fs::remove_file(dir.join(FAILED_MARKER));
        Ok(FilesSink {
            dir: dir.to_path_buf(),
            labels: LabelSet::new(layout),
            since_flush: 0,
            checksums: BTreeMap::new(),
            opened: false,
        })
    }

    fn flush_labels(&mut self) -> Result<(), PackagingError> {
        let truncate = !self.opened;
        for stream in [&mut self.labels.train, &mut self.labels.val] {
            let path = self.dir.join(&stream.name);
            let mut f = fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(!truncate)
                .truncate(truncate)
                .open(&path)
                .map_err(io_err(&path))?;
            f.write_all(stream.take().as_bytes()).map_err(io_err(&path))?;
        }
        self.opened = true;
        self.since_flush = 0;
        Ok(())
    }
}

impl DatasetSink for FilesSink {
    fn write_sample(&mut self, record: &SampleRecord) -> Result<(), PackagingError> {
        self.labels.push(record)?;
        let entry = image_entry(record);
        let path = self.dir.join(&entry);
        fs::write(&path, &record.image_png).map_err(io_err(&path))?;
        self.checksums.insert(entry, sha256_hex(&record.image_png));
        self.since_flush += 1;
        if self.since_flush >= LABEL_FLUSH_INTERVAL {
            self.flush_labels()?;
        }
        Ok(())
    }

    fn buffered_bytes(&self) -> u64 {
        self.labels.pending_bytes()
    }

    fn can_drain(&self) -> bool {
        true
    }

    fn drain(&mut self) -> Result<(), PackagingError> {
        self.flush_labels()
    }

    fn finish(&mut self, manifest: &mut DatasetManifest) -> Result<Vec<PathBuf>, PackagingError> {
        self.flush_labels()?;
        for stream in [&self.labels.train, &self.labels.val] {
            self.checksums.insert(stream.name.clone(), stream.digest());
        }
        manifest.checksums = std::mem::take(&mut self.checksums);
        let path = self.dir.join(MANIFEST_NAME);
        write_atomic(&path, manifest.to_json().as_bytes())?;
        Ok(vec![self.dir.clone()])
    }

    fn abort(&mut self, reason: &str) {
        let _ = self.flush_labels();
        let _ = fs::write(self.dir.join(FAILED_MARKER), format!("{reason}\n"));
    }
}

/// Opens the sink for `storage` rooted at `dir`.
pub fn open_sink(
    storage: StorageMode,
    dir: &Path,
    layout: SinkLayout,
    batch_size: usize,
) -> Result<Box<dyn DatasetSink>, PackagingError> {
    Ok(match storage {
        StorageMode::Zip => Box::new(ZipSink::new(dir, layout)?),
        StorageMode::Chunked => Box::new(ChunkedSink::new(dir, layout, batch_size)?),
        StorageMode::Files => Box::new(FilesSink::new(dir, layout)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Missing,
    Unreadable,
    BadSignature,
    CountMismatch,
    LabelParse,
    NotNormalized,
    UnknownImage,
    ChecksumMismatch,
    Unlisted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationFailure {
    pub kind: FailureKind,
    pub file: String,
    pub detail: String,
}

impl fmt::Display for VerificationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {}: {}", self.kind, self.file, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub location: String,
    pub layout: String,
    pub images: u64,
    pub labels: u64,
    pub failures: Vec<VerificationFailure>,
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, kind: FailureKind, file: impl Into<String>, detail: impl Into<String>) {
        self.failures.push(VerificationFailure {
            kind,
            file: file.into(),
            detail: detail.into(),
        });
    }
}

type ZipFileArchive = ZipArchive<BufReader<File>>;

/// Read access to the entries of one dataset unit.
enum Store {
    Dir(PathBuf),
    Zip(Box<ZipFileArchive>),
}

impl Store {
    fn names(&mut self) -> Vec<String> {
        match self {
            Store::Dir(root) => {
                let mut out = Vec::new();
                for top in [MANIFEST_NAME, FAILED_MARKER] {
                    if root.join(top).is_file() {
                        out.push(top.to_string());
                    }
                }
                if let Ok(rd) = fs::read_dir(&*root) {
                    for e in rd.flatten() {
                        let name = e.file_name().to_string_lossy().into_owned();
                        if name.starts_with("labels_") && e.path().is_file() {
                            out.push(name);
                        }
                    }
                }
                if let Ok(rd) = fs::read_dir(root.join(IMAGE_DIR)) {
                    for e in rd.flatten() {
                        if e.path().is_file() {
                            out.push(format!("{IMAGE_DIR}/{}", e.file_name().to_string_lossy()));
                        }
                    }
                }
                out.sort();
                out
            }
            Store::Zip(archive) => {
                let mut out: Vec<String> = archive
                    .file_names()
                    .filter_map(Result::ok)
                    .map(|n| n.into_owned())
                    .filter(|n| !n.ends_with('/'))
                    .collect();
                out.sort();
                out
            }
        }
    }

    fn read(&mut self, name: &str) -> io::Result<Vec<u8>> {
        match self {
            Store::Dir(root) => fs::read(root.join(name)),
            Store::Zip(archive) => {
                let mut f = archive.by_name(name).map_err(io::Error::other)?;
                let mut buf = Vec::new();
                f.read_to_end(&mut buf)?;
                Ok(buf)
            }
        }
    }
}

fn open_zip(path: &Path) -> io::Result<ZipFileArchive> {
    let f = File::open(path)?;
    ZipArchive::new(BufReader::new(f)).map_err(io::Error::other)
}

/// Checks a dataset directory, archive, or chunked archive directory.
/// Problems are collected in the report rather than returned as errors.
pub fn verify(path: &Path) -> VerificationReport {
    let mut report = VerificationReport {
        location: path.display().to_string(),
        ..Default::default()
    };
    let mut units: Vec<(String, Store)> = Vec::new();
    if path.is_file() {
        report.layout = "zip".into();
        match open_zip(path) {
            Ok(z) => units.push((String::new(), Store::Zip(Box::new(z)))),
            Err(e) => report.fail(FailureKind::Unreadable, path.display().to_string(), e.to_string()),
        }
    } else if path.join(MANIFEST_NAME).is_file() || path.join(IMAGE_DIR).is_dir() {
        report.layout = "files".into();
        units.push((String::new(), Store::Dir(path.to_path_buf())));
    } else if path.join(ARCHIVE_NAME).is_file() {
        return verify(&path.join(ARCHIVE_NAME));
    } else {
        let mut parts: Vec<String> = fs::read_dir(path)
            .map(|rd| {
                rd.flatten()
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .filter(|n| n.starts_with("dataset.part-") && n.ends_with(".zip"))
                    .collect()
            })
            .unwrap_or_default();
        parts.sort();
        if parts.is_empty() {
            report.fail(FailureKind::Missing, path.display().to_string(), "no dataset found");
            return report;
        }
        report.layout = "chunked".into();
        for p in parts {
            match open_zip(&path.join(&p)) {
                Ok(z) => units.push((format!("{p}/"), Store::Zip(Box::new(z)))),
                Err(e) => report.fail(FailureKind::Unreadable, p, e.to_string()),
            }
        }
    }

    let mut listings: Vec<Vec<String>> = units.iter_mut().map(|(_, s)| s.names()).collect();

    // The manifest lives in the single-unit root or in the last part.
    let mut manifest: Option<DatasetManifest> = None;
    let mut manifest_seen = false;
    for ((prefix, store), names) in units.iter_mut().zip(&listings) {
        if names.iter().any(|n| n == MANIFEST_NAME) {
            manifest_seen = true;
            let key = format!("{prefix}{MANIFEST_NAME}");
            match store.read(MANIFEST_NAME) {
                Ok(bytes) => match serde_json::from_slice::<DatasetManifest>(&bytes) {
                    Ok(m) => manifest = Some(m),
                    Err(e) => report.fail(FailureKind::Unreadable, key, e.to_string()),
                },
                Err(e) => report.fail(FailureKind::Unreadable, key, e.to_string()),
            }
        }
        if names.iter().any(|n| n == FAILED_MARKER) {
            report.fail(FailureKind::Unreadable, format!("{prefix}{FAILED_MARKER}"), "generation did not complete");
        }
    }
    if !manifest_seen {
        report.fail(FailureKind::Missing, MANIFEST_NAME, "manifest not found");
    }
    let format = manifest
        .as_ref()
        .map(|m| m.format)
        .or_else(|| infer_format(&mut units, &listings))
        .unwrap_or_default();

    let mut digests: BTreeMap<String, String> = BTreeMap::new();
    let mut flagged: BTreeSet<String> = BTreeSet::new();
    let label_files = [format.train_file(), format.val_file()];

    for ((prefix, store), names) in units.iter_mut().zip(listings.iter_mut()) {
        let images: Vec<&String> = names.iter().filter(|n| n.starts_with("images/")).collect();
        let has_labels = names.iter().any(|n| label_files.contains(n));
        if images.is_empty() && !has_labels {
            continue;
        }
        let mut image_names = BTreeSet::new();
        for name in &images {
            let key = format!("{prefix}{name}");
            report.images += 1;
            image_names.insert(name.trim_start_matches("images/").to_string());
            match store.read(name) {
                Ok(bytes) => {
                    if !has_png_signature(&bytes) {
                        report.fail(
                            FailureKind::BadSignature,
                            key.clone(),
                            format!("PNG signature missing ({} bytes)", bytes.len()),
                        );
                        flagged.insert(key.clone());
                    }
                    digests.insert(key, sha256_hex(&bytes));
                }
                Err(e) => {
                    report.fail(FailureKind::Unreadable, key.clone(), e.to_string());
                    flagged.insert(key);
                }
            }
        }
        let mut label_count = 0u64;
        for lf in &label_files {
            let key = format!("{prefix}{lf}");
            if !names.contains(lf) {
                report.fail(FailureKind::Missing, key.clone(), "label file not found");
                flagged.insert(key);
                continue;
            }
            let bytes = match store.read(lf) {
                Ok(b) => b,
                Err(e) => {
                    report.fail(FailureKind::Unreadable, key.clone(), e.to_string());
                    flagged.insert(key);
                    continue;
                }
            };
            digests.insert(key.clone(), sha256_hex(&bytes));
            match decode_labels(&bytes, format) {
                Ok(entries) => {
                    for (i, e) in entries.iter().enumerate() {
                        label_count += 1;
                        if e.text.is_empty() || normalize(&e.text) != e.text {
                            report.fail(
                                FailureKind::NotNormalized,
                                key.clone(),
                                format!("record {} is empty or not NFC", i + 1),
                            );
                            flagged.insert(key.clone());
                        }
                        if !image_names.contains(&e.image) {
                            report.fail(
                                FailureKind::UnknownImage,
                                key.clone(),
                                format!("record {} names missing image {}", i + 1, e.image),
                            );
                            flagged.insert(key.clone());
                        }
                    }
                }
                Err(e) => {
                    report.fail(FailureKind::LabelParse, key.clone(), e.to_string());
                    flagged.insert(key);
                }
            }
        }
        report.labels += label_count;
        if label_count != images.len() as u64 {
            report.fail(
                FailureKind::CountMismatch,
                format!("{prefix}labels"),
                format!("{label_count} label records for {} images", images.len()),
            );
            for lf in &label_files {
                flagged.insert(format!("{prefix}{lf}"));
            }
        }
    }

    if let Some(m) = &manifest {
        for (key, expected) in &m.checksums {
            if flagged.contains(key) {
                continue;
            }
            match digests.get(key) {
                None => report.fail(FailureKind::Missing, key.clone(), "listed in manifest but not found"),
                Some(actual) if actual != expected => report.fail(
                    FailureKind::ChecksumMismatch,
                    key.clone(),
                    format!("expected {expected}, found {actual}"),
                ),
                Some(_) => {}
            }
        }
        for key in digests.keys() {
            if !m.checksums.contains_key(key) && !flagged.contains(key) {
                report.fail(FailureKind::Unlisted, key.clone(), "not listed in manifest");
            }
        }
        if !m.chunks.is_empty() {
            for c in &m.chunks {
                if flagged.iter().any(|k| k.starts_with(&c.file)) {
                    continue;
                }
                match fs::read(path.join(&c.file)) {
                    Ok(bytes) if sha256_hex(&bytes) != c.sha256 => {
                        report.fail(FailureKind::ChecksumMismatch, c.file.clone(), "part archive digest differs")
                    }
                    Ok(_) => {}
                    Err(e) => report.fail(FailureKind::Missing, c.file.clone(), e.to_string()),
                }
            }
        }
    }
    report
}

fn infer_format(units: &mut [(String, Store)], listings: &[Vec<String>]) -> Option<OutputFormat> {
    for ((_, store), names) in units.iter_mut().zip(listings) {
        for n in names {
            if n.ends_with(".txt") && n.starts_with("labels_") {
                return Some(OutputFormat::Crnn);
            }
            if n.ends_with(".jsonl") {
                return Some(OutputFormat::Trocr);
            }
            if n.ends_with(".csv") && n.starts_with("labels_") {
                let bytes = store.read(n).ok()?;
                let text = String::from_utf8_lossy(&bytes);
                let text = text.strip_prefix(BOM).unwrap_or(&text);
                return Some(if text.starts_with("file_name,text") {
                    OutputFormat::Huggingface
                } else {
                    OutputFormat::Csv
                });
            }
        }
    }
    None
}

/// Reads one entry of a dataset, e.g. `images/image_000000.png`, from a
/// directory or a single archive.
pub fn read_entry(dataset: &Path, name: &str) -> io::Result<Vec<u8>> {
    if dataset.is_file() {
        let mut z = open_zip(dataset)?;
        let mut f = z.by_name(name).map_err(io::Error::other)?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        return Ok(buf);
    }
    let archive = dataset.join(ARCHIVE_NAME);
    if archive.is_file() {
        return read_entry(&archive, name);
    }
    fs::read(dataset.join(name))
}

/// Lists archive entry names in stored order.
pub fn archive_entries<R: Read + Seek>(reader: R) -> Result<Vec<String>, PackagingError> {
    let mut z = ZipArchive::new(reader)?;
    (0..z.len())
        .map(|i| Ok(z.by_index(i)?.name()?.into_owned()))
        .collect()
}
