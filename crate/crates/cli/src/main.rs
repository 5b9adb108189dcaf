//! `glyphgen` command-line tool.
//!
//! Exit status: 0 on success, 1 on runtime failure (including a dataset that
//! fails verification), 2 on invalid flags or configuration. Human-readable
//! output goes to stderr; `--json` summaries go to stdout.

mod args;
mod bench;

use std::io::{IsTerminal, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Parser;
use serde_json::json;

use glyphgen_core::config::InputPaths;
use glyphgen_core::packaging::{encode_labels, filename_for};
use glyphgen_core::{generate, preview, verify, GenerateOptions, GeneratorConfig, ProgressEvent};

use args::{Cli, Command, GenerateArgs, PreviewArgs, ServeArgs, UsageError, VerifyArgs};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();

    let outcome = match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Preview(a) => run_preview(a),
        Command::Verify(a) => run_verify(a),
        Command::Bench(a) => bench::run(a),
        Command::Serve(a) => run_serve(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => {
                eprintln!("error: {u}");
                ExitCode::from(2)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn timestamp(cfg: &GeneratorConfig) -> Option<String> {
    cfg.timestamp
        .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

/// Cancels generation on the first Ctrl-C.
fn cancel_on_interrupt() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc_handler(move || f.store(true, Ordering::Relaxed)) {
        log::debug!("no interrupt handler: {e}");
    }
    flag
}

fn ctrlc_handler(f: impl Fn() + Send + 'static) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread().enable_io().build()?;
    std::thread::Builder::new().name("interrupt".into()).spawn(move || {
        rt.block_on(async {
            if tokio::signal::ctrl_c().await.is_ok() {
                f();
            }
        })
    })?;
    Ok(())
}

fn progress_printer(quiet: bool) -> impl FnMut(&ProgressEvent) + Send {
    let tty = std::io::stderr().is_terminal();
    move |e: &ProgressEvent| {
        if quiet {
            return;
        }
        let line = format!(
            "{}/{} samples  {:.1}/s  {} skipped segments  {:.1} MiB buffered",
            e.produced,
            e.total,
            e.rate,
            e.skips,
            e.memory_buffered as f64 / (1 << 20) as f64
        );
        let mut err = std::io::stderr().lock();
        if tty {
            let _ = write!(err, "\r{line}\x1b[K");
            if e.produced == e.total {
                let _ = writeln!(err);
            }
        } else {
            let _ = writeln!(err, "{line}");
        }
    }
}

fn run_generate(a: GenerateArgs) -> Result<ExitCode> {
    let cfg = a.config.resolve()?;
    let paths = InputPaths::default();
    let opts = GenerateOptions {
        progress: Some(Box::new(progress_printer(a.quiet))),
        cancel: Some(cancel_on_interrupt()),
        timestamp: timestamp(&cfg),
        ..Default::default()
    };
    let manifest = generate(&cfg, &paths, &a.output, opts)
        .with_context(|| format!("generating into {}", a.output.display()))?;
    let s = &manifest.statistics;
    eprintln!(
        "wrote {} samples ({} train, {} val, {} clean) to {}",
        manifest.counts.total,
        manifest.counts.train,
        manifest.counts.val,
        manifest.counts.clean,
        a.output.display()
    );
    if s.skipped_unfit > 0 || s.missing_glyphs > 0 || s.jpeg_failures > 0 {
        eprintln!(
            "skipped {} segments that did not fit, {} missing glyphs, {} JPEG fallbacks",
            s.skipped_unfit, s.missing_glyphs, s.jpeg_failures
        );
    }
    if a.json {
        let summary = json!({
            "output": a.output,
            "seed": manifest.seed,
            "counts": manifest.counts,
            "statistics": manifest.statistics,
            "fonts": manifest.fonts,
            "transforms": manifest.transforms,
        });
        println!("{}", serde_json::to_string_pretty(&summary)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn run_preview(a: PreviewArgs) -> Result<ExitCode> {
    let cfg = a.config.resolve()?;
    let records = preview(&cfg, &InputPaths::default(), a.samples)?;
    write_preview(&a.output, &records, cfg.format)?;
    eprintln!("wrote {} preview samples to {}", records.len(), a.output.display());
    if a.json {
        let list: Vec<_> = records
            .iter()
            .map(|r| {
                json!({
                    "index": r.index,
                    "file": r.file_name(),
                    "label": r.label,
                    "font": r.font_used,
                    "size": r.size_used,
                    "background": r.background_used,
                    "recipe": r.recipe_summary,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&list)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn write_preview(
    dir: &Path,
    records: &[glyphgen_core::SampleRecord],
    format: glyphgen_core::OutputFormat,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in records {
        std::fs::write(dir.join(filename_for(r.index)), &r.image_png)?;
    }
    let names: Vec<String> = records.iter().map(|r| r.file_name()).collect();
    let labels = encode_labels(names.iter().map(String::as_str).zip(records.iter().map(|r| r.label.as_str())), format)?;
    std::fs::write(dir.join(format!("preview.{}", format.extension())), labels)?;
    Ok(())
}

fn run_verify(a: VerifyArgs) -> Result<ExitCode> {
    let report = verify(&a.dataset);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    for f in &report.failures {
        eprintln!("FAIL {f}");
    }
    eprintln!(
        "{}: {} images, {} label records, {} failures ({})",
        report.location,
        report.images,
        report.labels,
        report.failures.len(),
        report.layout
    );
    Ok(if report.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_serve(a: ServeArgs) -> Result<ExitCode> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(glyphgen_service::serve(glyphgen_service::loopback(a.port), a.base_dir))?;
    Ok(ExitCode::SUCCESS)
}
