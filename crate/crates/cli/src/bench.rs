use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use glyphgen_core::config::InputPaths;
use glyphgen_core::{generate, GenerateOptions};

use crate::args::BenchArgs;

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub samples: u64,
    pub seconds: f64,
    pub rate: f64,
    pub output_bytes: u64,
}

pub fn run(a: BenchArgs) -> Result<ExitCode> {
    let base = a.config.resolve()?;
    let workers = if base.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        base.workers
    };
    let scratch = tempfile::tempdir()?;
    let mut rows = Vec::new();
    for &n in &a.sizes {
        let mut cfg = base.clone();
        cfg.count = n;
        let root = a.keep.as_deref().unwrap_or(scratch.path());
        let out = root.join(format!("bench-{n}"));
        if out.exists() {
            std::fs::remove_dir_all(&out).with_context(|| format!("clearing {}", out.display()))?;
        }
        eprintln!("generating {n} samples with {workers} worker(s)...");
        let start = Instant::now();
        generate(&cfg, &InputPaths::default(), &out, GenerateOptions::default())?;
        let seconds = start.elapsed().as_secs_f64();
        rows.push(BenchRow {
            samples: n,
            seconds,
            rate: n as f64 / seconds.max(1e-9),
            output_bytes: dir_size(&out)?,
        });
        if a.keep.is_none() {
            std::fs::remove_dir_all(&out)?;
        }
    }
    eprint!("{}", table(&rows, workers));
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn table(rows: &[BenchRow], workers: usize) -> String {
    let mut s = format!(
        "{:>12}  {:>10}  {:>18}  {:>12}\n",
        "Dataset Size", "Time", "Rate (samples/sec)", "Output Size"
    );
    for r in rows {
        s += &format!(
            "{:>12}  {:>10}  {:>18.1}  {:>12}\n",
            r.samples,
            duration(r.seconds),
            r.rate,
            bytes(r.output_bytes)
        );
    }
    s += &format!("workers: {workers}\n");
    s
}

fn duration(secs: f64) -> String {
    if secs < 60.0 {
        format!("{secs:.1} s")
    } else {
        format!("{:.1} min", secs / 60.0)
    }
}

fn bytes(n: u64) -> String {
    const UNITS: [&str; 4] = ["B", "KB", "MB", "GB"];
    let mut v = n as f64;
    let mut u = 0;
    while v >= 1000.0 && u < UNITS.len() - 1 {
        v /= 1000.0;
        u += 1;
    }
    if u == 0 {
        format!("{n} B")
    } else {
        format!("{v:.1} {}", UNITS[u])
    }
}

fn dir_size(path: &Path) -> std::io::Result<u64> {
    let mut total = 0;
    for entry in std::fs::read_dir(path)? {
        let entry = entry?;
        let meta = entry.metadata()?;
        total += if meta.is_dir() { dir_size(&entry.path())? } else { meta.len() };
    }
    Ok(total)
}
