//! Text shaping, layout and anti-aliased rasterization onto a background.
//!
//! Shaping runs the Unicode bidirectional algorithm with the paragraph
//! direction taken from [`Direction`], then shapes each visual run with
//! OpenType rules (Arabic joining forms, mark positioning). Glyph outlines
//! are rasterized with exact area coverage and alpha-blended over the
//! background: `out = a * text + (1 - a) * bg`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ab_glyph_rasterizer::{point, Point, Rasterizer};
use rustybuzz::ttf_parser::{self, GlyphId, OutlineBuilder};
use rustybuzz::UnicodeBuffer;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_bidi::{BidiInfo, Level};

use crate::fonts::{select_bucket, FontEntry, PERCENT_TOLERANCE};
use crate::prng::Lcg;
use crate::raster::{RasterError, RasterImage, Rgb};

/// Smallest size the fitter will shrink text to.
pub const MIN_FIT_SIZE: u32 = 8;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("text does not fit within {available:.1}px even at {MIN_FIT_SIZE}px")]
    Unfit { available: f64 },
    #[error("background image {path}: {source}")]
    BackgroundImage {
        path: String,
        #[source]
        source: RasterError,
    },
    #[error("failed to read background image {path}: {source}")]
    BackgroundIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid background configuration: {0}")]
    InvalidBackground(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Rtl,
    Ltr,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rtl" => Ok(Direction::Rtl),
            "ltr" => Ok(Direction::Ltr),
            other => Err(format!("unknown direction {other:?} (expected rtl or ltr)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Under RTL, "left" anchors the text at the right margin.
    #[default]
    Left,
    Center,
    Right,
}

impl FromStr for Alignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" => Ok(Alignment::Left),
            "center" | "centre" => Ok(Alignment::Center),
            "right" => Ok(Alignment::Right),
            other => Err(format!("unknown alignment {other:?}")),
        }
    }
}

/// Horizontal position of the text box's left edge.
///
/// RTL: left -> `W - p_r - w`, center -> `(W - w) / 2`, right -> `p_l`.
/// LTR mirrors it: left -> `p_l`, right -> `W - p_r - w`.
pub fn compute_origin(
    width: f64,
    text_width: f64,
    alignment: Alignment,
    direction: Direction,
    pad_left: f64,
    pad_right: f64,
) -> f64 {
    match (alignment, direction) {
        (Alignment::Center, _) => (width - text_width) / 2.0,
        (Alignment::Left, Direction::Rtl) | (Alignment::Right, Direction::Ltr) => {
            width - pad_right - text_width
        }
        (Alignment::Right, Direction::Rtl) | (Alignment::Left, Direction::Ltr) => pad_left,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapedGlyph {
    pub glyph_id: u16,
    /// Byte offset of the source cluster in the shaped text.
    pub cluster: u32,
    pub x_advance: i32,
    pub x_offset: i32,
    pub y_offset: i32,
}

/// Glyphs in visual left-to-right order, in font units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapedRun {
    pub glyphs: Vec<ShapedGlyph>,
    pub advance: i64,
    pub units_per_em: u16,
}

impl ShapedRun {
    pub fn width_at(&self, size: u32) -> f64 {
        self.advance as f64 * f64::from(size) / f64::from(self.units_per_em)
    }

    pub fn missing_glyphs(&self) -> usize {
        self.glyphs.iter().filter(|g| g.glyph_id == 0).count()
    }
}

/// Bidi-reorders `text` under the given paragraph direction and shapes each
/// visual run.
pub fn shape(font: &FontEntry, text: &str, direction: Direction) -> ShapedRun {
    let face = font.face();
    let base_level = match direction {
        Direction::Rtl => Level::rtl(),
        Direction::Ltr => Level::ltr(),
    };
    let bidi = BidiInfo::new(text, Some(base_level));
    let mut glyphs = Vec::with_capacity(text.len());
    let mut advance = 0i64;
    for para in &bidi.paragraphs {
        let line = para.range.clone();
        let (levels, runs) = bidi.visual_runs(para, line);
        for run in runs {
            let piece = &text[run.clone()];
            if piece.is_empty() {
                continue;
            }
            let mut buffer = UnicodeBuffer::new();
            buffer.push_str(piece);
            buffer.guess_segment_properties();
            buffer.set_direction(if levels[run.start].is_rtl() {
                rustybuzz::Direction::RightToLeft
            } else {
                rustybuzz::Direction::LeftToRight
            });
            let shaped = rustybuzz::shape(&face, &[], buffer);
            for (info, pos) in shaped.glyph_infos().iter().zip(shaped.glyph_positions()) {
                advance += i64::from(pos.x_advance);
                glyphs.push(ShapedGlyph {
                    glyph_id: info.glyph_id as u16,
                    cluster: info.cluster + run.start as u32,
                    x_advance: pos.x_advance,
                    x_offset: pos.x_offset,
                    y_offset: pos.y_offset,
                });
            }
        }
    }
    ShapedRun {
        glyphs,
        advance,
        units_per_em: face.units_per_em() as u16,
    }
}

#[derive(Debug, Clone)]
pub struct FittedText {
    pub size: u32,
    pub run: ShapedRun,
    pub width: f64,
}

/// Shapes `text` and shrinks the size one pixel at a time until it fits
/// between the paddings.
pub fn measure_and_fit(
    font: &FontEntry,
    text: &str,
    direction: Direction,
    size: u32,
    canvas_width: u32,
    pad_left: u32,
    pad_right: u32,
) -> Result<FittedText, RenderError> {
    let available = f64::from(canvas_width) - f64::from(pad_left) - f64::from(pad_right);
    let run = shape(font, text, direction);
    let mut z = size.max(1);
    loop {
        let width = run.width_at(z);
        if width <= available {
            return Ok(FittedText { size: z, run, width });
        }
        if z <= MIN_FIT_SIZE {
            return Err(RenderError::Unfit { available });
        }
        z -= 1;
    }
}

/// Per-sample rendering parameters, all randomness already resolved.
#[derive(Debug, Clone)]
pub struct RenderPlan {
    pub text: String,
    pub font_index: usize,
    pub requested_size: u32,
    pub size: u32,
    pub text_color: Rgb,
    pub background_index: usize,
    pub direction: Direction,
    pub alignment: Alignment,
    pub pad_left: u32,
    pub pad_right: u32,
    pub x_start: f64,
    pub baseline: f64,
    pub text_width: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub missing_glyphs: usize,
}

/// Vertical baseline that centers the font's ascent-to-descent box on the
/// canvas middle.
pub fn centered_baseline(font: &FontEntry, size: u32, height: u32) -> f64 {
    let face = font.face();
    let scale = f64::from(size) / f64::from(face.units_per_em());
    let ascent = f64::from(face.ascender());
    let descent = f64::from(face.descender());
    f64::from(height) / 2.0 + (ascent + descent) * scale / 2.0
}

struct PathCollector {
    scale: f32,
    origin_x: f32,
    origin_y: f32,
    start: Point,
    last: Point,
    lines: Vec<Segment>,
    min: Point,
    max: Point,
}

enum Segment {
    Line(Point, Point),
    Quad(Point, Point, Point),
    Cubic(Point, Point, Point, Point),
}

impl PathCollector {
    fn new(scale: f32, origin_x: f32, origin_y: f32) -> Self {
        PathCollector {
            scale,
            origin_x,
            origin_y,
            start: point(0.0, 0.0),
            last: point(0.0, 0.0),
            lines: Vec::new(),
            min: point(f32::MAX, f32::MAX),
            max: point(f32::MIN, f32::MIN),
        }
    }

    fn map(&mut self, x: f32, y: f32) -> Point {
        let p = point(self.origin_x + x * self.scale, self.origin_y - y * self.scale);
        self.min.x = self.min.x.min(p.x);
        self.min.y = self.min.y.min(p.y);
        self.max.x = self.max.x.max(p.x);
        self.max.y = self.max.y.max(p.y);
        p
    }
}

impl OutlineBuilder for PathCollector {
    fn move_to(&mut self, x: f32, y: f32) {
        let p = self.map(x, y);
        self.start = p;
        self.last = p;
    }

    fn line_to(&mut self, x: f32, y: f32) {
        let p = self.map(x, y);
        self.lines.push(Segment::Line(self.last, p));
        self.last = p;
    }

    fn quad_to(&mut self, x1: f32, y1: f32, x: f32, y: f32) {
        let c = self.map(x1, y1);
        let p = self.map(x, y);
        self.lines.push(Segment::Quad(self.last, c, p));
        self.last = p;
    }

    fn curve_to(&mut self, x1: f32, y1: f32, x2: f32, y2: f32, x: f32, y: f32) {
        let c1 = self.map(x1, y1);
        let c2 = self.map(x2, y2);
        let p = self.map(x, y);
        self.lines.push(Segment::Cubic(self.last, c1, c2, p));
        self.last = p;
    }

    fn close(&mut self) {
        if self.last != self.start {
            self.lines.push(Segment::Line(self.last, self.start));
        }
        self.last = self.start;
    }
}

/// Accumulated ink coverage in `[0, 1]` for every canvas pixel.
struct Coverage {
    width: u32,
    height: u32,
    alpha: Vec<f32>,
}

impl Coverage {
    fn new(width: u32, height: u32) -> Self {
        Coverage {
            width,
            height,
            alpha: vec![0.0; width as usize * height as usize],
        }
    }

    fn fill(&mut self, path: &PathCollector) {
        if path.lines.is_empty() {
            return;
        }
        let x0 = path.min.x.floor();
        let y0 = path.min.y.floor();
        let w = (path.max.x.ceil() - x0) as usize + 1;
        let h = (path.max.y.ceil() - y0) as usize + 1;
        let local = |p: Point| point(p.x - x0, p.y - y0);
        let mut raster = Rasterizer::new(w, h);
        for seg in &path.lines {
            match *seg {
                Segment::Line(a, b) => raster.draw_line(local(a), local(b)),
                Segment::Quad(a, c, b) => raster.draw_quad(local(a), local(c), local(b)),
                Segment::Cubic(a, c1, c2, b) => {
                    raster.draw_cubic(local(a), local(c1), local(c2), local(b))
                }
            }
        }
        let (ox, oy) = (x0 as i64, y0 as i64);
        raster.for_each_pixel_2d(|x, y, a| {
            let cx = ox + i64::from(x);
            let cy = oy + i64::from(y);
            if cx < 0 || cy < 0 || cx >= i64::from(self.width) || cy >= i64::from(self.height) {
                return;
            }
            let idx = cy as usize * self.width as usize + cx as usize;
            let a = a.abs().min(1.0);
            if a > self.alpha[idx] {
                self.alpha[idx] = a;
            }
        });
    }
}

/// Draws the shaped run onto `background` at the plan's origin.
pub fn render(
    plan: &RenderPlan,
    font: &FontEntry,
    run: &ShapedRun,
    background: &RasterImage,
    antialias: bool,
) -> (RasterImage, RenderStats) {
    let face = font.face();
    let width = background.width();
    let height = background.height();
    let scale = plan.size as f32 / f32::from(run.units_per_em);
    let mut coverage = Coverage::new(width, height);
    let mut stats = RenderStats::default();

    let mut pen = plan.x_start as f32;
    let baseline = plan.baseline as f32;
    for g in &run.glyphs {
        let gx = pen + g.x_offset as f32 * scale;
        let gy = baseline - g.y_offset as f32 * scale;
        let mut path = PathCollector::new(scale, gx, gy);
        if g.glyph_id == 0 {
            stats.missing_glyphs += 1;
        }
        let outlined = face.outline_glyph(GlyphId(g.glyph_id), &mut path).is_some();
        if !outlined && g.glyph_id == 0 {
            notdef_box(&mut path, &face, g.x_advance);
        }
        coverage.fill(&path);
        pen += g.x_advance as f32 * scale;
    }

    let mut out = background.clone();
    let text = plan.text_color.0.map(f32::from);
    for (px, &a) in out.as_bytes_mut().chunks_exact_mut(3).zip(&coverage.alpha) {
        let a = if antialias {
            a
        } else if a >= 0.5 {
            1.0
        } else {
            0.0
        };
        if a <= 0.0 {
            continue;
        }
        if a >= 1.0 {
            px.copy_from_slice(&plan.text_color.0);
            continue;
        }
        for c in 0..3 {
            let bg = f32::from(px[c]);
            px[c] = (a * text[c] + (1.0 - a) * bg).round().clamp(0.0, 255.0) as u8;
        }
    }
    (out, stats)
}

/// Hollow rectangle standing in for a missing glyph in fonts whose
/// `.notdef` has no outline.
fn notdef_box(path: &mut PathCollector, face: &ttf_parser::Face<'_>, advance: i32) {
    let w = if advance > 0 { advance as f32 } else { f32::from(face.units_per_em()) / 2.0 };
    let h = f32::from(face.ascender()).max(1.0);
    let inset = w * 0.1;
    let stroke = w * 0.08;
    let rect = |p: &mut PathCollector, x0: f32, y0: f32, x1: f32, y1: f32, ccw: bool| {
        p.move_to(x0, y0);
        if ccw {
            p.line_to(x1, y0);
            p.line_to(x1, y1);
            p.line_to(x0, y1);
        } else {
            p.line_to(x0, y1);
            p.line_to(x1, y1);
            p.line_to(x1, y0);
        }
        p.close();
    };
    rect(path, inset, 0.0, w - inset, h, true);
    rect(path, inset + stroke, stroke, w - inset - stroke, h - stroke, false);
}

/// Background configuration. Mix options may not themselves be mixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackgroundSpec {
    Color { color: Rgb },
    Image { image: String },
    Mix { options: Vec<MixOption> },
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec::Color { color: Rgb::WHITE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixOption {
    /// Fill color; mutually exclusive with `image`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Rgb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub percentage: f64,
}

impl MixOption {
    pub fn color(c: Rgb, percentage: f64) -> Self {
        MixOption {
            color: Some(c),
            image: None,
            percentage,
        }
    }

    pub fn image(path: impl Into<String>, percentage: f64) -> Self {
        MixOption {
            color: None,
            image: Some(path.into()),
            percentage,
        }
    }
}

/// One resolved background source.
#[derive(Debug, Clone)]
pub enum BackgroundLeaf {
    Color(Rgb),
    Image {
        name: String,
        /// Already stretched to the canvas size.
        image: Arc<RasterImage>,
        base: Rgb,
    },
}

impl BackgroundLeaf {
    pub fn base_color(&self) -> Rgb {
        match self {
            BackgroundLeaf::Color(c) => *c,
            BackgroundLeaf::Image { base, .. } => *base,
        }
    }

    pub fn name(&self) -> String {
        match self {
            BackgroundLeaf::Color(c) => c.hex(),
            BackgroundLeaf::Image { name, .. } => name.clone(),
        }
    }

    pub fn render(&self, width: u32, height: u32) -> RasterImage {
        match self {
            BackgroundLeaf::Color(c) => RasterImage::filled(width, height, *c),
            BackgroundLeaf::Image { image, .. } => {
                if image.width() == width && image.height() == height {
                    (**image).clone()
                } else {
                    image.resize_bilinear(width, height)
                }
            }
        }
    }
}

/// Background source: a single leaf, or a weighted mix of leaves.
#[derive(Debug, Clone)]
pub enum Background {
    Single(BackgroundLeaf),
    Mix(Vec<(BackgroundLeaf, f64)>),
}

impl Background {
    /// Loads the configured source; images are decoded and stretched to
    /// `width x height` once. `base_dir` resolves relative image paths.
    pub fn load(
        spec: &BackgroundSpec,
        width: u32,
        height: u32,
        base_dir: Option<&Path>,
    ) -> Result<Self, RenderError> {
        match spec {
            BackgroundSpec::Color { color } => Ok(Background::Single(BackgroundLeaf::Color(*color))),
            BackgroundSpec::Image { image } => Ok(Background::Single(load_image_leaf(
                image, width, height, base_dir,
            )?)),
            BackgroundSpec::Mix { options } => {
                if options.is_empty() {
                    return Err(RenderError::InvalidBackground("mix has no options".into()));
                }
                let mut leaves = Vec::with_capacity(options.len());
                for opt in options {
                    let leaf = match (&opt.color, &opt.image) {
                        (Some(c), None) => BackgroundLeaf::Color(*c),
                        (None, Some(path)) => load_image_leaf(path, width, height, base_dir)?,
                        _ => {
                            return Err(RenderError::InvalidBackground(
                                "each mix option needs exactly one of color or image".into(),
                            ))
                        }
                    };
                    if !(opt.percentage > 0.0) {
                        return Err(RenderError::InvalidBackground(format!(
                            "mix percentage must be positive, got {}",
                            opt.percentage
                        )));
                    }
                    leaves.push((leaf, opt.percentage));
                }
                let total: f64 = leaves.iter().map(|(_, p)| p).sum();
                if (total - 100.0).abs() > PERCENT_TOLERANCE {
                    return Err(RenderError::InvalidBackground(format!(
                        "background percentages sum to {total}, expected 100"
                    )));
                }
                Ok(Background::Mix(leaves))
            }
        }
    }

    pub fn leaves(&self) -> Vec<&BackgroundLeaf> {
        match self {
            Background::Single(l) => vec![l],
            Background::Mix(options) => options.iter().map(|(l, _)| l).collect(),
        }
    }

    /// Picks a leaf. A mix consumes one uniform; a single source consumes
    /// none.
    pub fn resolve(&self, rng: &mut Lcg) -> usize {
        match self {
            Background::Single(_) => 0,
            Background::Mix(options) => {
                let u = rng.next_f64() * 100.0;
                select_bucket(options.iter().map(|(_, p)| *p), u)
            }
        }
    }

    pub fn leaf(&self, index: usize) -> &BackgroundLeaf {
        match self {
            Background::Single(l) => l,
            Background::Mix(options) => &options[index].0,
        }
    }
}

fn load_image_leaf(
    path: &str,
    width: u32,
    height: u32,
    base_dir: Option<&Path>,
) -> Result<BackgroundLeaf, RenderError> {
    let p = Path::new(path);
    let resolved = match base_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    };
    let bytes = std::fs::read(&resolved).map_err(|source| RenderError::BackgroundIo {
        path: resolved.display().to_string(),
        source,
    })?;
    let img = RasterImage::decode(&bytes).map_err(|source| RenderError::BackgroundImage {
        path: resolved.display().to_string(),
        source,
    })?;
    let stretched = img.resize_bilinear(width, height);
    let name = p
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string());
    Ok(BackgroundLeaf::Image {
        name,
        base: stretched.mean_color(),
        image: Arc::new(stretched),
    })
}

impl fmt::Display for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Background::Single(l) => f.write_str(&l.name()),
            Background::Mix(opts) => {
                let parts: Vec<String> = opts.iter().map(|(l, p)| format!("{}:{p}", l.name())).collect();
                write!(f, "mix[{}]", parts.join(", "))
            }
        }
    }
}
