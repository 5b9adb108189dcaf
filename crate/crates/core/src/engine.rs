//! End-to-end generation.
//!
//! Corpus segments are prepared once and shuffled with the master stream.
//! Slot `i` then renders segment `i mod M` of the shuffled order using its
//! own substream [`Lcg::for_sample`], so any slot can be produced
//! independently and in parallel. Per slot the substream is consumed in a
//! fixed order:
//!
//! 1. font selection (one uniform)
//! 2. font size (two uniforms for normal sizes, one for uniform)
//! 3. background (one uniform when a mix is configured)
//! 4. augmentation gate, transform count, selection, parameters
//! 5. per-pixel draws of the noise transforms, while applying them
//!
//! Text that cannot fit the canvas moves on to the next segment without
//! consuming anything, for at most `M` attempts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::augment::{apply, plan_recipe, TransformKind};
use crate::config::{ConfigError, GeneratorConfig, InputPaths};
use crate::fonts::{arabic_coverage, FontEntry, FontError, FontSet};
use crate::packaging::{
    open_sink, sha256_hex, split_point, DatasetManifest, DatasetSink, InputDigests, InputFile, PackagingError,
    SampleCounts, SampleRecord, SinkLayout, Statistics, UsageCount,
};
use crate::prng::{Lcg, PrngError};
use crate::raster::RasterError;
use crate::renderer::{
    centered_baseline, compute_origin, measure_and_fit, render, Background, BackgroundSpec, RenderError, RenderPlan,
};
use crate::textprep::{prepare, Corpus, ScriptPolicy, Segment, TextError};
use crate::TOOL_VERSION;

/// Slots produced per parallel batch; also the memory-guard cadence.
pub const BATCH_SLOTS: u64 = 256;
pub const MAX_PREVIEW: usize = 64;
pub const THROTTLE_ON: f64 = 0.7;
pub const THROTTLE_OFF: f64 = 0.5;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Font(#[from] FontError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Packaging(#[from] PackagingError),
    #[error(transparent)]
    Prng(#[from] PrngError),
    #[error("font {0} could not be resolved")]
    UnresolvedFont(String),
    #[error("slot {slot}: none of the {segments} segments fits the canvas")]
    NothingFits { slot: u64, segments: usize },
    #[error("buffered output ({buffered} bytes) exceeds the memory budget of {budget} bytes; use chunked or files storage")]
    MemoryBudget { buffered: u64, budget: u64 },
    #[error("preview count {0} exceeds the limit of {MAX_PREVIEW}")]
    PreviewTooLarge(usize),
    #[error("generation cancelled")]
    Cancelled,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ProgressEvent {
    pub produced: u64,
    pub total: u64,
    /// Samples per second since the run started.
    pub rate: f64,
    pub skips: u64,
    pub memory_buffered: u64,
}

type ProgressFn<'a> = Box<dyn FnMut(&ProgressEvent) + Send + 'a>;

#[derive(Default)]
pub struct GenerateOptions<'a> {
    /// Overrides `workers` from the config when set.
    pub workers: Option<usize>,
    pub progress: Option<ProgressFn<'a>>,
    pub cancel: Option<Arc<AtomicBool>>,
    /// Wall-clock timestamp for the manifest when the config asks for one.
    pub timestamp: Option<String>,
}

/// Throttle state with hysteresis: on above 70% of the budget, off again
/// only below 50%.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryGuard {
    budget: u64,
    throttled: bool,
    events: u64,
}

impl MemoryGuard {
    pub fn new(budget: u64) -> Self {
        MemoryGuard {
            budget: budget.max(1),
            throttled: false,
            events: 0,
        }
    }

    /// Updates the state for the current buffered size and returns whether
    /// the producer should pause.
    pub fn check(&mut self, buffered: u64) -> bool {
        let was = self.throttled;
        self.throttled = memory_guard(buffered, self.budget, was);
        if self.throttled && !was {
            self.events += 1;
        }
        self.throttled
    }

    pub fn throttled(&self) -> bool {
        self.throttled
    }

    pub fn events(&self) -> u64 {
        self.events
    }
}

/// The throttle decision given the previous state.
pub fn memory_guard(buffered: u64, budget: u64, throttled: bool) -> bool {
    let ratio = buffered as f64 / budget.max(1) as f64;
    if throttled {
        ratio >= THROTTLE_OFF
    } else {
        ratio > THROTTLE_ON
    }
}

/// Everything one slot produced.
#[derive(Debug, Clone)]
pub struct SlotOutput {
    pub record: SampleRecord,
    pub font_index: usize,
    pub background_index: usize,
    pub segment_index: usize,
    pub transforms: Vec<TransformKind>,
    pub skipped: u64,
    pub missing_glyphs: u64,
    pub jpeg_failures: u64,
}

/// A prepared run: shuffled segments, loaded fonts and backgrounds.
pub struct Generator {
    cfg: GeneratorConfig,
    segments: Vec<Segment>,
    fonts: FontSet,
    background: Background,
    inputs: InputDigests,
    prep: Statistics,
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig, paths: &InputPaths) -> Result<Self, GenerateError> {
        cfg.validate()?;
        let mut inputs = InputDigests::default();

        let corpus = match (&cfg.corpus, &cfg.corpus_text) {
            (Some(p), _) => {
                let path = paths.resolve(p);
                let bytes = std::fs::read(&path).map_err(|source| TextError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                inputs.corpus = Some(input_file(p, &bytes));
                Corpus::from_bytes(p.clone(), bytes)?
            }
            (None, Some(text)) => {
                inputs.corpus = Some(input_file("corpus_text", text.as_bytes()));
                Corpus::new("corpus_text", text.clone())
            }
            (None, None) => unreachable!("validated"),
        };
        let policy = ScriptPolicy::new(&cfg.ranges, &cfg.preserve);
        let policy = if cfg.ranges.is_empty() {
            ScriptPolicy::unrestricted()
        } else {
            policy
        };
        let prepared = prepare(&corpus, &cfg.segmentation, &policy)?;
        let mut segments = prepared.segments;
        shuffle(&mut segments, cfg.seed)?;

        let percentages = cfg.font_percentages()?;
        let mut entries = Vec::with_capacity(cfg.fonts.len());
        for (spec, pct) in cfg.fonts.iter().zip(percentages) {
            let path = paths.font(spec).ok_or_else(|| GenerateError::UnresolvedFont(spec.label()))?;
            let entry = FontEntry::load(&path, pct)?;
            if policy.is_arabic() {
                if let Some(w) = arabic_coverage(&entry) {
                    log::warn!("{w}");
                }
            }
            inputs.fonts.push(input_file(&spec.label(), entry.data()));
            entries.push(entry);
        }
        let fonts = FontSet::new(entries)?;

        let background = Background::load(&cfg.background, cfg.width, cfg.height, paths.base_dir.as_deref())?;
        for image in background_images(&cfg.background) {
            let path = paths.resolve(image);
            if let Ok(bytes) = std::fs::read(&path) {
                inputs.backgrounds.push(input_file(image, &bytes));
            }
        }

        let prep = Statistics {
            raw_segments: prepared.raw_count as u64,
            segments: segments.len() as u64,
            rejected: prepared.rejected as u64,
            length_filtered: prepared.length_filtered as u64,
            ..Default::default()
        };
        Ok(Generator {
            cfg: cfg.clone(),
            segments,
            fonts,
            background,
            inputs,
            prep,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Segments in shuffled order.
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn fonts(&self) -> &FontSet {
        &self.fonts
    }

    /// Renders slot `slot`. Depends only on the configuration and the slot.
    pub fn produce(&self, slot: u64) -> Result<SlotOutput, GenerateError> {
        let cfg = &self.cfg;
        let mut rng = Lcg::for_sample(cfg.seed, slot);
        let font_index = self.fonts.select(&mut rng);
        let requested = cfg.size.sample(&mut rng);
        let background_index = self.background.resolve(&mut rng);
        let recipe = plan_recipe(&cfg.augmentation, &mut rng)?;

        let font = &self.fonts.entries()[font_index];
        let m = self.segments.len();
        let mut skipped = 0u64;
        let mut fitted = None;
        for attempt in 0..m {
            let idx = ((slot % m as u64) as usize + attempt) % m;
            let text = self.segments[idx].text();
            match measure_and_fit(font, text, cfg.direction, requested, cfg.width, cfg.pad_left, cfg.pad_right) {
                Ok(fit) => {
                    fitted = Some((idx, fit));
                    break;
                }
                Err(RenderError::Unfit { .. }) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let (segment_index, fit) = fitted.ok_or(GenerateError::NothingFits { slot, segments: m })?;
        let label = self.segments[segment_index].text().to_string();

        let leaf = self.background.leaf(background_index);
        let canvas = leaf.render(cfg.width, cfg.height);
        let plan = RenderPlan {
            text: label.clone(),
            font_index,
            requested_size: requested,
            size: fit.size,
            text_color: cfg.text_color,
            background_index,
            direction: cfg.direction,
            alignment: cfg.alignment,
            pad_left: cfg.pad_left,
            pad_right: cfg.pad_right,
            x_start: compute_origin(
                f64::from(cfg.width),
                fit.width,
                cfg.alignment,
                cfg.direction,
                f64::from(cfg.pad_left),
                f64::from(cfg.pad_right),
            ),
            baseline: centered_baseline(font, fit.size, cfg.height),
            text_width: fit.width,
        };
        let (image, stats) = render(&plan, font, &fit.run, &canvas, cfg.antialias);
        let (image, applied) = apply(&image, &recipe, leaf.base_color(), &mut rng);
        let record = SampleRecord {
            index: slot,
            image_png: image.to_png()?,
            label,
            font_used: font.display_name().to_string(),
            size_used: fit.size,
            background_used: leaf.name(),
            recipe_summary: recipe.summary(),
        };
        Ok(SlotOutput {
            record,
            font_index,
            background_index,
            segment_index,
            transforms: recipe.transforms.iter().map(|t| t.kind()).collect(),
            skipped,
            missing_glyphs: stats.missing_glyphs as u64,
            jpeg_failures: applied.jpeg_failures as u64,
        })
    }

    /// The first `count` records of the dataset this run would produce.
    pub fn preview(&self, count: usize) -> Result<Vec<SampleRecord>, GenerateError> {
        if count > MAX_PREVIEW {
            return Err(GenerateError::PreviewTooLarge(count));
        }
        let n = (count as u64).min(self.cfg.count);
        (0..n).into_par_iter().map(|i| self.produce(i).map(|o| o.record)).collect()
    }

    /// Produces every slot into `sink` and returns the finished manifest.
    /// On error the sink is aborted.
    pub fn run(&self, sink: &mut dyn DatasetSink, opts: GenerateOptions<'_>) -> Result<DatasetManifest, GenerateError> {
        match self.run_inner(sink, opts) {
            Ok(m) => Ok(m),
            Err(e) => {
                sink.abort(&e.to_string());
                Err(e)
            }
        }
    }

    fn run_inner(&self, sink: &mut dyn DatasetSink, mut opts: GenerateOptions<'_>) -> Result<DatasetManifest, GenerateError> {
        let cfg = &self.cfg;
        let total = cfg.count;
        let train = split_point(total, cfg.split)?;
        let workers = opts.workers.unwrap_or(cfg.workers);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| GenerateError::Pool(e.to_string()))?;

        let mut tally = Tally::new(self);
        let mut guard = MemoryGuard::new(cfg.memory_budget);
        let started = Instant::now();
        let mut start = 0u64;
        while start < total {
            if opts.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed)) {
                return Err(GenerateError::Cancelled);
            }
            let end = (start + BATCH_SLOTS).min(total);
            let outputs: Vec<Result<SlotOutput, GenerateError>> =
                pool.install(|| (start..end).into_par_iter().map(|i| self.produce(i)).collect());
            for out in outputs {
                let out = out?;
                sink.write_sample(&out.record)?;
                tally.add(&out);
            }
            start = end;

            let buffered = sink.buffered_bytes();
            if guard.check(buffered) {
                if sink.can_drain() {
                    sink.drain()?;
                    guard.check(sink.buffered_bytes());
                } else if buffered > cfg.memory_budget {
                    return Err(GenerateError::MemoryBudget {
                        buffered,
                        budget: cfg.memory_budget,
                    });
                }
            }
            if let Some(cb) = opts.progress.as_mut() {
                let secs = started.elapsed().as_secs_f64();
                cb(&ProgressEvent {
                    produced: start,
                    total,
                    rate: if secs > 0.0 { start as f64 / secs } else { 0.0 },
                    skips: tally.stats.skipped_unfit,
                    memory_buffered: sink.buffered_bytes(),
                });
            }
        }
        tally.stats.throttle_events = guard.events();

        let mut manifest = tally.into_manifest(self, train, opts.timestamp.take());
        sink.finish(&mut manifest)?;
        Ok(manifest)
    }
}

/// Running manifest counters.
struct Tally {
    counts: SampleCounts,
    transforms: BTreeMap<String, u64>,
    fonts: Vec<u64>,
    backgrounds: Vec<u64>,
    characters: BTreeMap<String, u64>,
    stats: Statistics,
}

impl Tally {
    fn new(gen: &Generator) -> Self {
        Tally {
            counts: SampleCounts::default(),
            transforms: TransformKind::ALL.iter().map(|k| (k.name().to_string(), 0)).collect(),
            fonts: vec![0; gen.fonts.len()],
            backgrounds: vec![0; gen.background.leaves().len()],
            characters: BTreeMap::new(),
            stats: gen.prep,
        }
    }

    fn add(&mut self, out: &SlotOutput) {
        self.counts.total += 1;
        if out.transforms.is_empty() {
            self.counts.clean += 1;
        } else {
            self.counts.augmented += 1;
        }
        for k in &out.transforms {
            *self.transforms.entry(k.name().to_string()).or_default() += 1;
        }
        self.fonts[out.font_index] += 1;
        self.backgrounds[out.background_index] += 1;
        for c in out.record.label.chars() {
            *self.characters.entry(c.to_string()).or_default() += 1;
        }
        self.stats.skipped_unfit += out.skipped;
        self.stats.missing_glyphs += out.missing_glyphs;
        self.stats.jpeg_failures += out.jpeg_failures;
    }

    fn into_manifest(mut self, gen: &Generator, train: u64, timestamp: Option<String>) -> DatasetManifest {
        let cfg = &gen.cfg;
        self.counts.train = train.min(self.counts.total);
        self.counts.val = self.counts.total - self.counts.train;
        DatasetManifest {
            tool_version: TOOL_VERSION.to_string(),
            seed: cfg.seed,
            format: cfg.format,
            storage: cfg.storage,
            config: cfg.echo(),
            inputs: gen.inputs.clone(),
            counts: self.counts,
            transforms: self.transforms,
            fonts: gen
                .fonts
                .entries()
                .iter()
                .zip(&self.fonts)
                .map(|(f, &count)| UsageCount {
                    name: f.display_name().to_string(),
                    count,
                })
                .collect(),
            backgrounds: gen
                .background
                .leaves()
                .iter()
                .zip(&self.backgrounds)
                .map(|(b, &count)| UsageCount { name: b.name(), count })
                .collect(),
            statistics: self.stats,
            characters: self.characters,
            chunks: Vec::new(),
            checksums: BTreeMap::new(),
            timestamp: if cfg.timestamp { timestamp } else { None },
        }
    }
}

fn input_file(name: &str, bytes: &[u8]) -> InputFile {
    InputFile {
        name: name.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    }
}

fn background_images(spec: &BackgroundSpec) -> Vec<&str> {
    match spec {
        BackgroundSpec::Color { .. } => vec![],
        BackgroundSpec::Image { image } => vec![image.as_str()],
        BackgroundSpec::Mix { options } => options.iter().filter_map(|o| o.image.as_deref()).collect(),
    }
}

/// Fisher-Yates over the master stream seeded with `seed`.
pub fn shuffle<T>(items: &mut [T], seed: u64) -> Result<(), PrngError> {
    let mut rng = Lcg::new(seed);
    for i in (1..items.len()).rev() {
        let j = rng.int_range(0, i as i64)? as usize;
        items.swap(i, j);
    }
    Ok(())
}

/// Generates the configured dataset into `output` (a directory).
pub fn generate(
    cfg: &GeneratorConfig,
    paths: &InputPaths,
    output: &Path,
    opts: GenerateOptions<'_>,
) -> Result<DatasetManifest, GenerateError> {
    let generator = Generator::new(cfg, paths)?;
    let layout = SinkLayout {
        format: cfg.format,
        train_count: split_point(cfg.count, cfg.split)?,
    };
    let mut sink = open_sink(cfg.storage, output, layout, cfg.batch_size)?;
    generator.run(sink.as_mut(), opts)
}

/// The first `count` records `generate` would write for `cfg`.
pub fn preview(cfg: &GeneratorConfig, paths: &InputPaths, count: usize) -> Result<Vec<SampleRecord>, GenerateError> {
    if count > MAX_PREVIEW {
        return Err(GenerateError::PreviewTooLarge(count));
    }
    Generator::new(cfg, paths)?.preview(count)
}

/// Path of the single-file archive written by zip storage.
pub fn archive_path(output: &Path) -> PathBuf {
    output.join(crate::packaging::ARCHIVE_NAME)
}
