use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use glyphgen_core::renderer::MixOption;
use glyphgen_core::textprep::CodeRange;
use glyphgen_core::{
    BackgroundSpec, ConfigError, Direction, FontSpec, GeneratorConfig, OutputFormat, Rgb, SegmentationMode,
    StorageMode, TransformKind,
};

#[derive(Debug, Parser)]
#[command(name = "glyphgen", version, about = "Deterministic synthetic text-image datasets for OCR training")]
pub struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset.
    Generate(GenerateArgs),
    /// Render the first samples of a dataset without generating it.
    Preview(PreviewArgs),
    /// Check a generated dataset against its manifest.
    Verify(VerifyArgs),
    /// Time generation at several dataset sizes.
    Bench(BenchArgs),
    /// Run the local HTTP preview service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(short, long, default_value = "output")]
    pub output: PathBuf,
    /// Print a JSON summary on stdout.
    #[arg(long)]
    pub json: bool,
    /// No progress line.
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of samples to render.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Directory for the PNGs and the label preview.
    #[arg(short, long, default_value = "preview")]
    pub output: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Output directory, archive, or first chunk of a dataset.
    pub dataset: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset sizes to time.
    #[arg(long, value_delimiter = ',', default_values_t = [1_000u64, 10_000, 50_000])]
    pub sizes: Vec<u64>,
    /// Keep outputs here instead of a temporary directory.
    #[arg(long)]
    pub keep: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = glyphgen_service::DEFAULT_PORT)]
    pub port: u16,
    /// Base directory for relative paths in submitted configs.
    #[arg(long)]
    pub base_dir: Option<PathBuf>,
}

/// Generation settings. Every flag is optional so that a `--config` file
/// supplies the rest; a flag given explicitly always overrides the file.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// JSON config, or a dataset's metadata.json to rerun it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "text")]
    pub corpus: Option<String>,
    /// Inline corpus text.
    #[arg(long)]
    pub text: Option<String>,
    /// PATH[:PCT], repeatable.
    #[arg(long = "font", value_name = "PATH[:PCT]")]
    pub fonts: Vec<FontSpec>,
    #[arg(long)]
    pub mode: Option<SegmentationMode>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub size_min: Option<u32>,
    #[arg(long)]
    pub size_max: Option<u32>,
    /// normal or uniform.
    #[arg(long)]
    pub size_dist: Option<glyphgen_core::fonts::SizeDistribution>,
    /// Probability that a sample is augmented at all.
    #[arg(long)]
    pub aug_prob: Option<f64>,
    /// Most transforms applied to one sample.
    #[arg(long)]
    pub aug_max: Option<usize>,
    /// Restrict augmentation to these transforms (repeatable).
    #[arg(long = "enable", value_name = "TRANSFORM")]
    pub enable: Vec<TransformKind>,
    #[arg(long = "disable", value_name = "TRANSFORM")]
    pub disable: Vec<TransformKind>,
    #[arg(long)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub storage: Option<StorageMode>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training fraction.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub direction: Option<Direction>,
    /// Allowed code points, HEXLO-HEXHI (repeatable). Replaces the preset.
    #[arg(long = "ranges", value_name = "HEXLO-HEXHI")]
    pub ranges: Vec<CodeRange>,
    /// Accept any code point.
    #[arg(long, conflicts_with = "ranges")]
    pub any_script: bool,
    /// COLOR or IMAGE, with :PCT when mixing (repeatable).
    #[arg(long = "bg", value_name = "COLOR|IMAGE[:PCT]")]
    pub backgrounds: Vec<String>,
    #[arg(long)]
    pub text_color: Option<Rgb>,
    /// Hard-edged glyphs.
    #[arg(long)]
    pub no_antialias: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Bytes, or a number with a KiB/MiB/GiB suffix.
    #[arg(long, value_parser = parse_bytes)]
    pub memory_budget: Option<u64>,
    /// Record the generation time in the manifest.
    #[arg(long)]
    pub timestamp: bool,
}

/// Problems found while assembling a config; reported with exit status 2.
#[derive(Debug)]
pub enum UsageError {
    Message(String),
    Config(ConfigError),
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UsageError::Message(m) => f.write_str(m),
            UsageError::Config(ConfigError::Invalid(issues)) => {
                let lines: Vec<String> = issues.iter().map(ToString::to_string).collect();
                f.write_str(&lines.join("\n"))
            }
            UsageError::Config(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for UsageError {
    fn from(e: ConfigError) -> Self {
        UsageError::Config(e)
    }
}

/// Named background colors accepted by `--bg`.
pub const COLOR_PRESETS: [(&str, Rgb); 5] = [
    ("white", Rgb([0xFF, 0xFF, 0xFF])),
    ("aged-paper", Rgb([0xF3, 0xE9, 0xD2])),
    ("book-page", Rgb([0xFA, 0xF6, 0xEC])),
    ("newspaper", Rgb([0xE8, 0xE6, 0xE1])),
    ("parchment", Rgb([0xF1, 0xE4, 0xC3])),
];

fn color(s: &str) -> Option<Rgb> {
    COLOR_PRESETS
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(s))
        .map(|(_, c)| *c)
        .or_else(|| if s.starts_with('#') { s.parse().ok() } else { None })
}

/// Parses `--bg` values. One value without a percentage is a plain color or
/// image; anything else is a mix.
pub fn parse_backgrounds(values: &[String]) -> Result<BackgroundSpec, UsageError> {
    let mut options = Vec::new();
    for v in values {
        let (body, pct) = match v.rsplit_once(':') {
            Some((b, p)) => match p.trim().parse::<f64>() {
                Ok(p) => (b, Some(p)),
                Err(_) => (v.as_str(), None),
            },
            None => (v.as_str(), None),
        };
        if body.is_empty() {
            return Err(UsageError::Message(format!("--bg {v:?}: missing color or image")));
        }
        options.push((body, pct));
    }
    if let [(body, None)] = options.as_slice() {
        return Ok(match color(body) {
            Some(c) => BackgroundSpec::Color { color: c },
            None => BackgroundSpec::Image { image: body.to_string() },
        });
    }
    let given = options.iter().filter(|(_, p)| p.is_some()).count();
    if given != 0 && given != options.len() {
        return Err(UsageError::Message(
            "--bg: give a percentage for every background or for none".into(),
        ));
    }
    let equal = 100.0 / options.len() as f64;
    Ok(BackgroundSpec::Mix {
        options: options
            .into_iter()
            .map(|(body, pct)| {
                let pct = pct.unwrap_or(equal);
                match color(body) {
                    Some(c) => MixOption::color(c, pct),
                    None => MixOption::image(body, pct),
                }
            })
            .collect(),
    })
}

pub fn parse_bytes(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: u64 = num.parse().map_err(|_| format!("invalid size {s:?}"))?;
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        "g" | "gb" | "gib" => 1 << 30,
        other => return Err(format!("unknown size unit {other:?}")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}

/// Reads a config file. A dataset manifest yields the config it recorded.
pub fn read_config_file(path: &Path) -> Result<Value, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError::Message(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(ConfigError::Syntax)?;
    match value.get("config") {
        Some(cfg) if value.get("tool_version").is_some() => Ok(cfg.clone()),
        _ => Ok(value),
    }
}

impl ConfigArgs {
    /// The config file (or defaults) with explicit flags applied, validated.
    pub fn resolve(&self) -> Result<GeneratorConfig, UsageError> {
        let base = match &self.config {
            Some(p) => GeneratorConfig::from_value(read_config_file(p)?)?,
            None => GeneratorConfig::default(),
        };
        let cfg = self.apply(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, mut cfg: GeneratorConfig) -> Result<GeneratorConfig, UsageError> {
        if let Some(c) = &self.corpus {
            cfg.corpus = Some(c.clone());
            cfg.corpus_text = None;
        }
        if let Some(t) = &self.text {
            cfg.corpus_text = Some(t.clone());
            cfg.corpus = None;
        }
        if !self.fonts.is_empty() {
            cfg.fonts = self.fonts.clone();
        }
        set(&mut cfg.segmentation.mode, self.mode);
        set(&mut cfg.segmentation.min_len, self.min_len);
        set(&mut cfg.segmentation.max_len, self.max_len);
        set(&mut cfg.count, self.count);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.width, self.width);
        set(&mut cfg.height, self.height);
        set(&mut cfg.size.min, self.size_min);
        set(&mut cfg.size.max, self.size_max);
        set(&mut cfg.size.distribution, self.size_dist);
        set(&mut cfg.augmentation.probability, self.aug_prob);
        set(&mut cfg.augmentation.max_transforms, self.aug_max);
        if let Some(both) = self.enable.iter().find(|k| self.disable.contains(k)) {
            return Err(UsageError::Message(format!(
                "--enable {0} conflicts with --disable {0}",
                both.name()
            )));
        }
        if !self.enable.is_empty() {
            cfg.augmentation.enabled = TransformKind::ALL
                .into_iter()
                .filter(|k| self.enable.contains(k))
                .collect();
        }
        cfg.augmentation.enabled.retain(|k| !self.disable.contains(k));
        set(&mut cfg.format, self.format);
        set(&mut cfg.storage, self.storage);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.split, self.split);
        set(&mut cfg.direction, self.direction);
        if !self.ranges.is_empty() {
            cfg.ranges = self.ranges.clone();
        }
        if self.any_script {
            cfg.ranges.clear();
        }
        if !self.backgrounds.is_empty() {
            cfg.background = parse_backgrounds(&self.backgrounds)?;
        }
        set(&mut cfg.text_color, self.text_color);
        if self.no_antialias {
            cfg.antialias = false;
        }
        set(&mut cfg.workers, self.workers);
        set(&mut cfg.memory_budget, self.memory_budget);
        if self.timestamp {
            cfg.timestamp = true;
        }
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> ConfigArgs {
        let mut argv = vec!["glyphgen", "generate"];
        argv.extend_from_slice(args);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Generate(g) => g.config,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_config_values() {
        let base = GeneratorConfig {
            seed: 1,
            count: 50,
            width: 300,
            ..Default::default()
        };
        let cfg = parse(&["--seed", "42", "--count", "7"]).apply(base).unwrap();
        assert_eq!((cfg.seed, cfg.count, cfg.width), (42, 7, 300));
    }

    #[test]
    fn font_flags_parse_percentages() {
        let a = parse(&["--font", "a.ttf:40", "--font", "dir/b.ttf"]);
        assert_eq!(a.fonts[0], FontSpec::path("a.ttf", Some(40.0)));
        assert_eq!(a.fonts[1], FontSpec::path("dir/b.ttf", None));
    }

    #[test]
    fn enable_and_disable_of_one_transform_conflict() {
        let err = parse(&["--enable", "rotation", "--disable", "rotation"])
            .apply(GeneratorConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("--enable rotation conflicts with --disable rotation"));
    }

    #[test]
    fn enable_restricts_and_disable_removes() {
        let cfg = parse(&["--enable", "blur", "--enable", "rotation"])
            .apply(GeneratorConfig::default())
            .unwrap();
        assert_eq!(cfg.augmentation.enabled.len(), 2);
        let cfg = parse(&["--disable", "jpeg"]).apply(GeneratorConfig::default()).unwrap();
        assert_eq!(cfg.augmentation.enabled.len(), TransformKind::ALL.len() - 1);
    }

    #[test]
    fn corpus_and_text_are_exclusive() {
        let err = Cli::try_parse_from(["glyphgen", "generate", "--corpus", "a", "--text", "b"]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("--corpus") && msg.contains("--text"), "{msg}");
    }

    #[test]
    fn single_background_is_color_or_image() {
        let bg = parse_backgrounds(&["aged-paper".into()]).unwrap();
        assert_eq!(bg, BackgroundSpec::Color { color: Rgb([0xF3, 0xE9, 0xD2]) });
        let bg = parse_backgrounds(&["#102030".into()]).unwrap();
        assert_eq!(bg, BackgroundSpec::Color { color: Rgb([0x10, 0x20, 0x30]) });
        let bg = parse_backgrounds(&["paper.png".into()]).unwrap();
        assert_eq!(bg, BackgroundSpec::Image { image: "paper.png".into() });
    }

    #[test]
    fn several_backgrounds_form_a_mix() {
        let bg = parse_backgrounds(&["white:70".into(), "scan.png:30".into()]).unwrap();
        assert_eq!(
            bg,
            BackgroundSpec::Mix {
                options: vec![MixOption::color(Rgb::WHITE, 70.0), MixOption::image("scan.png", 30.0)]
            }
        );
        let bg = parse_backgrounds(&["white".into(), "newspaper".into()]).unwrap();
        match bg {
            BackgroundSpec::Mix { options } => assert!(options.iter().all(|o| o.percentage == 50.0)),
            other => panic!("{other:?}"),
        }
        assert!(parse_backgrounds(&["white:70".into(), "newspaper".into()]).is_err());
    }

    #[test]
    fn byte_sizes() {
        assert_eq!(parse_bytes("512MiB").unwrap(), 512 << 20);
        assert_eq!(parse_bytes("1024").unwrap(), 1024);
        assert_eq!(parse_bytes("2g").unwrap(), 2 << 30);
        assert!(parse_bytes("12 parsecs").is_err());
    }

    #[test]
    fn ranges_replace_the_preset() {
        let cfg = parse(&["--ranges", "0600-06FF", "--ranges", "0020-007F"])
            .apply(GeneratorConfig::default())
            .unwrap();
        assert_eq!(cfg.ranges, vec![CodeRange::new(0x600, 0x6FF), CodeRange::new(0x20, 0x7F)]);
    }

    #[test]
    fn manifest_config_is_unwrapped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metadata.json");
        std::fs::write(&p, r#"{"tool_version":"x","config":{"seed":9}}"#).unwrap();
        assert_eq!(read_config_file(&p).unwrap()["seed"], 9);
        std::fs::write(&p, r#"{"seed":3}"#).unwrap();
        assert_eq!(read_config_file(&p).unwrap()["seed"], 3);
    }
}
