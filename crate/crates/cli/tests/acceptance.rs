//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass substrings as arguments to run a subset.

use std::collections::BTreeMap;
use std::io::Read;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_bigint::BigUint;
use sha2::{Digest, Sha256};

use glyphgen_core::augment::{
    brightness, contrast, gaussian_blur, gaussian_kernel, gaussian_noise, jpeg_degrade, jpeg_encode, motion_blur,
    plan_recipe, resolution_degrade, rotate, salt_pepper, skew,
};
use glyphgen_core::config::InputPaths;
use glyphgen_core::engine::Generator;
use glyphgen_core::packaging::{
    decode_labels, open_sink, split_point, DatasetSink, FailureKind, PackagingError, SinkLayout,
};
use glyphgen_core::textprep::{segment, Corpus};
use glyphgen_core::{
    generate, verify, AugmentationConfig, DatasetManifest, FontSpec, GenerateOptions, GeneratorConfig, Lcg,
    OutputFormat, RasterImage, Rgb, SampleRecord, SegmentationConfig, SegmentationMode, StorageMode, TransformKind,
};

type Check = fn() -> Result<String, String>;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 11] = [
        ("determinism", determinism),
        ("font_distribution", font_distribution),
        ("clean_augmented_split", clean_augmented_split),
        ("transforms_per_augmented_sample", transforms_per_augmented_sample),
        ("prng_conformance", prng_conformance),
        ("transform_oracles", transform_oracles),
        ("label_round_trip", label_round_trip),
        ("archive_integrity", archive_integrity),
        ("segmentation_oracle", segmentation_oracle),
        ("memory_bound", memory_bound),
        ("throughput_report", throughput_report),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn testdata() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../testdata")
}

fn font(name: &str) -> String {
    testdata().join("fonts").join(name).display().to_string()
}

fn base_config(count: u64) -> GeneratorConfig {
    GeneratorConfig {
        corpus: Some(testdata().join("corpus/kashmiri.txt").display().to_string()),
        fonts: vec![
            FontSpec::path(font("DejaVuSans.ttf"), Some(40.0)),
            FontSpec::path(font("DejaVuSans-Bold.ttf"), Some(35.0)),
            FontSpec::path(font("DejaVuSansMono.ttf"), Some(25.0)),
        ],
        count,
        seed: 42,
        ..Default::default()
    }
}

fn run_generate(cfg: &GeneratorConfig, out: &Path, workers: Option<usize>) -> Result<DatasetManifest, String> {
    let opts = GenerateOptions {
        workers,
        ..Default::default()
    };
    generate(cfg, &InputPaths::default(), out, opts).map_err(|e| e.to_string())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Relative path → SHA-256 of every file under `dir`, and of every entry of
/// every archive found there.
fn file_digests(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            let bytes = std::fs::read(&p).unwrap();
            if rel.ends_with(".zip") {
                let mut z = zip::ZipArchive::new(std::io::Cursor::new(&bytes)).unwrap();
                for i in 0..z.len() {
                    let mut f = z.by_index(i).unwrap();
                    let name = f.name().unwrap().to_string();
                    let mut buf = Vec::new();
                    f.read_to_end(&mut buf).unwrap();
                    out.insert(format!("{rel}!{name}"), sha256_hex(&buf));
                }
            }
            out.insert(rel, sha256_hex(&bytes));
        }
    }
    out
}

fn zip_entry(archive: &Path, name: &str) -> Vec<u8> {
    let mut z = zip::ZipArchive::new(std::fs::File::open(archive).unwrap()).unwrap();
    let mut f = z.by_name(name).unwrap();
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).unwrap();
    buf
}

fn determinism() -> Result<String, String> {
    let cfg = GeneratorConfig {
        segmentation: SegmentationConfig {
            mode: SegmentationMode::Word,
            ..Default::default()
        },
        ..base_config(5000)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (i, workers) in [1, 1, 4, 4].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        run_generate(&cfg, &out, Some(workers))?;
        runs.push((workers, file_digests(&out)));
    }
    let (_, reference) = &runs[0];
    for (workers, digests) in &runs[1..] {
        ensure(digests == reference, || {
            let differing: Vec<_> = reference
                .iter()
                .filter(|(k, v)| digests.get(*k) != Some(*v))
                .map(|(k, _)| k.clone())
                .take(5)
                .collect();
            format!("run with {workers} worker(s) differs in {differing:?}")
        })?;
    }
    Ok(format!(
        "4 runs (workers 1,1,4,4) x 5000 samples: {} files and archive entries identical",
        reference.len()
    ))
}

fn font_distribution() -> Result<String, String> {
    let n = 20_000u64;
    let cfg = GeneratorConfig {
        storage: StorageMode::Files,
        ..base_config(n)
    };
    let dir = tempfile::tempdir().unwrap();
    let m = run_generate(&cfg, dir.path(), None)?;
    let expected = [40.0, 35.0, 25.0];
    let mut shares = Vec::new();
    for (spec, want) in cfg.fonts.iter().zip(expected) {
        let count = m
            .fonts
            .iter()
            .find(|u| u.name == spec.label() || spec.label().ends_with(&u.name))
            .map_or(0, |u| u.count);
        let share = 100.0 * count as f64 / n as f64;
        ensure((share - want).abs() <= 1.5, || {
            format!("{} share {share:.2}% vs configured {want}%", spec.label())
        })?;
        shares.push(format!("{share:.2}"));
    }
    Ok(format!("N={n}, shares {} vs 40/35/25 (tolerance 1.5 points)", shares.join("/")))
}

fn clean_augmented_split() -> Result<String, String> {
    let n = 10_000u64;
    let cfg = GeneratorConfig {
        storage: StorageMode::Files,
        ..base_config(n)
    };
    let dir = tempfile::tempdir().unwrap();
    let m = run_generate(&cfg, dir.path(), None)?;
    ensure(m.counts.clean + m.counts.augmented == n, || format!("counts {:?}", m.counts))?;
    let clean = 100.0 * m.counts.clean as f64 / n as f64;
    ensure((clean - 30.0).abs() <= 1.5, || format!("clean fraction {clean:.2}%"))?;
    Ok(format!("N={n}, p_aug=0.7: clean {clean:.2}% (target 30 +/- 1.5)"))
}

fn transforms_per_augmented_sample() -> Result<String, String> {
    let cfg = AugmentationConfig::default();
    ensure(cfg.enabled_kinds().len() == 10 && cfg.max_transforms == 4, || "defaults changed".into())?;
    let mut augmented = 0u64;
    let mut applied = 0u64;
    let mut per_kind: BTreeMap<TransformKind, u64> = BTreeMap::new();
    for i in 0..100_000u64 {
        let mut rng = Lcg::for_sample(42, i);
        let recipe = plan_recipe(&cfg, &mut rng).map_err(|e| e.to_string())?;
        if recipe.is_clean() {
            continue;
        }
        augmented += 1;
        applied += recipe.transforms.len() as u64;
        for t in &recipe.transforms {
            *per_kind.entry(t.kind()).or_default() += 1;
        }
    }
    let mean = applied as f64 / augmented as f64;
    ensure((mean - 2.5).abs() <= 0.05, || format!("mean {mean:.4} transforms per augmented sample"))?;
    let mut lo = f64::MAX;
    let mut hi = f64::MIN;
    for kind in TransformKind::ALL {
        let rate = 100.0 * *per_kind.get(&kind).unwrap_or(&0) as f64 / augmented as f64;
        ensure((rate - 25.0).abs() <= 1.0, || format!("{} applied to {rate:.2}% of augmented samples", kind.name()))?;
        lo = lo.min(rate);
        hi = hi.max(rate);
    }
    Ok(format!(
        "1e5 recipes, {augmented} augmented: mean {mean:.4} (2.5 +/- 0.05), per-transform rates {lo:.2}%..{hi:.2}% (25 +/- 1)"
    ))
}

fn prng_conformance() -> Result<String, String> {
    let a = BigUint::from(1_103_515_245u64);
    let c = BigUint::from(12_345u64);
    let m = BigUint::from(1u64) << 31;
    for seed in [0u64, 1, 42] {
        let mut x = BigUint::from(seed) % &m;
        let mut lcg = Lcg::new(seed);
        for n in 0..10_000 {
            x = (&a * &x + &c) % &m;
            let got = lcg.step();
            ensure(BigUint::from(got) == x, || format!("seed {seed}, step {n}: {got} vs oracle {x}"))?;
        }
    }
    let mut lcg = Lcg::new(42);
    let mean = (0..1_000_000).map(|_| lcg.next_f64()).sum::<f64>() / 1e6;
    ensure((mean - 0.5).abs() <= 0.003, || format!("uniform mean {mean}"))?;
    let mut lcg = Lcg::new(42);
    let draws: Vec<f64> = (0..100_000).map(|_| lcg.gaussian()).collect();
    let gm = draws.iter().sum::<f64>() / draws.len() as f64;
    let gs = (draws.iter().map(|z| (z - gm).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
    ensure(gm.abs() < 0.02 && (gs - 1.0).abs() < 0.02, || format!("gaussian mean {gm}, std {gs}"))?;
    Ok(format!(
        "3 seeds x 1e4 states match big-integer oracle; uniform mean {mean:.5}; gaussian mean {gm:.4}, std {gs:.4}"
    ))
}

fn pattern(w: u32, h: u32, seed: u64) -> RasterImage {
    let mut rng = Lcg::new(seed);
    let bytes = (0..w * h * 3).map(|_| (rng.step() >> 23) as u8).collect();
    RasterImage::from_raw(w, h, bytes).unwrap()
}

fn max_diff(a: &RasterImage, b: &RasterImage) -> u8 {
    a.as_bytes().iter().zip(b.as_bytes()).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

fn psnr(a: &RasterImage, b: &RasterImage) -> f64 {
    let mse = a
        .as_bytes()
        .iter()
        .zip(b.as_bytes())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.as_bytes().len() as f64;
    10.0 * (255.0f64 * 255.0 / mse).log10()
}

fn text_render() -> RasterImage {
    let mut cfg = base_config(10);
    cfg.augmentation.probability = 0.0;
    let g = Generator::new(&cfg, &InputPaths::default()).unwrap();
    let rec = g.preview(1).unwrap().remove(0);
    RasterImage::decode(&rec.image_png).unwrap()
}

fn transform_oracles() -> Result<String, String> {
    let img = pattern(64, 32, 7);
    let gray = RasterImage::filled(64, 32, Rgb([128, 128, 128]));
    let tint = Rgb([200, 150, 90]);
    let flat = RasterImage::filled(48, 24, tint);
    let mut cases = 0;
    let mut check = |cond: bool, what: &str| -> Result<(), String> {
        cases += 1;
        ensure(cond, || what.to_string())
    };

    // rotation
    check(rotate(&img, 0.0, Rgb::WHITE) == img, "rotate 0 is identity")?;
    for deg in [-33.0, 7.5, 45.0] {
        check(rotate(&flat, deg, tint) == flat, "rotate keeps a constant field")?;
    }
    let sq = pattern(33, 33, 3);
    let r = rotate(&sq, 90.0, Rgb::WHITE);
    let perm = (0..33).all(|y| (0..33).all(|x| r.pixel(x, y) == sq.pixel(y, 32 - x)));
    check(perm, "rotate 90 equals the index permutation (x,y) <- (y, N-1-x)")?;

    // skew
    check(skew(&img, 0.0, 0.0, Rgb::WHITE) == img, "skew 0 is identity")?;
    check(skew(&flat, 0.3, -0.1, tint) == flat, "skew keeps a constant field")?;
    let tall = pattern(40, 31, 11);
    let sk = skew(&tall, 0.2, 0.0, Rgb::WHITE);
    check(
        (0..40).all(|x| sk.pixel(x, 15) == tall.pixel(x, 15)),
        "skew leaves the center row unshifted",
    )?;
    let cy = 15.0;
    let mut ok = true;
    for y in 0..31u32 {
        let shift = 0.2 * (f64::from(y) - cy);
        for x in 0..40u32 {
            let sx = f64::from(x) - shift;
            let x0 = sx.floor();
            if x0 < 0.0 || x0 + 1.0 > 39.0 {
                continue;
            }
            let t = sx - x0;
            let a = tall.pixel(x0 as u32, y).0;
            let b = tall.pixel(x0 as u32 + 1, y).0;
            for ch in 0..3 {
                let want = f64::from(a[ch]) * (1.0 - t) + f64::from(b[ch]) * t;
                ok &= (f64::from(sk.pixel(x, y).0[ch]) - want).abs() <= 1.0;
            }
        }
    }
    check(ok, "skew displacement grows linearly with distance from the center row")?;

    // gaussian blur
    for sigma in [0.5, 1.0, 1.7, 2.0] {
        let s: f64 = gaussian_kernel(sigma).iter().sum();
        check((s - 1.0).abs() <= 1e-6, "gaussian kernel sums to 1")?;
    }
    check(max_diff(&gaussian_blur(&gray, 1.3), &gray) <= 1, "blur keeps a constant field")?;
    let mut dot = RasterImage::filled(21, 21, Rgb::BLACK);
    dot.set_pixel(10, 10, Rgb::WHITE);
    let norm: f64 = (-3..=3).map(|i: i32| (-(f64::from(i * i)) / 2.0).exp()).sum();
    let want = (255.0 / (norm * norm)).round() as u8;
    check(
        gaussian_blur(&dot, 1.0).pixel(10, 10).0[0] == want,
        "blurred impulse center equals the direct kernel value",
    )?;

    // motion blur
    check(motion_blur(&img, 1, 0.7) == img, "motion k=1 is identity")?;
    check(max_diff(&motion_blur(&gray, 7, 1.1), &gray) <= 1, "motion blur keeps a constant field")?;
    let mb = motion_blur(&img, 5, 0.0);
    let mut ok = true;
    for y in 0..32i64 {
        for x in 0..64i64 {
            for ch in 0..3 {
                let sum: f64 = (-2..=2)
                    .map(|d| f64::from(img.pixel((x + d).clamp(0, 63) as u32, y as u32).0[ch]))
                    .sum();
                ok &= (f64::from(mb.pixel(x as u32, y as u32).0[ch]) - sum / 5.0).abs() <= 0.5 + 1e-9;
            }
        }
    }
    check(ok, "motion blur at angle 0, k=5 equals a horizontal 5-tap box blur")?;

    // gaussian noise
    let mut rng = Lcg::new(42);
    check(gaussian_noise(&img, 0.0, &mut rng) == img, "noise sigma 0 is identity")?;
    let mid = RasterImage::filled(256, 64, Rgb([128, 128, 128]));
    let noisy = gaussian_noise(&mid, 25.0, &mut Lcg::new(42));
    let vals: Vec<f64> = noisy.as_bytes().iter().step_by(3).map(|&v| f64::from(v)).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    check((mean - 128.0).abs() <= 0.5, &format!("noise mean {mean:.3} within 128 +/- 0.5"))?;
    check((std - 25.0).abs() <= 1.0, &format!("noise std {std:.3} within 25 +/- 1"))?;
    let black = RasterImage::filled(64, 32, Rgb::BLACK);
    let nb = gaussian_noise(&black, 25.0, &mut Lcg::new(1));
    check(
        nb.as_bytes().contains(&0) && nb.as_bytes().iter().any(|&v| v > 0),
        "noise on black clips at 0",
    )?;

    // salt and pepper
    check(salt_pepper(&img, 0.0, &mut Lcg::new(1)) == img, "salt-pepper p=0 is identity")?;
    let full = salt_pepper(&gray, 1.0, &mut Lcg::new(2));
    check(
        full.as_bytes().chunks(3).all(|p| p == [0, 0, 0] || p == [255, 255, 255]),
        "salt-pepper p=1 leaves only black and white",
    )?;
    let sp_src = RasterImage::filled(256, 64, Rgb([128, 128, 128]));
    let sp = salt_pepper(&sp_src, 0.05, &mut Lcg::new(42));
    let hit = sp.as_bytes().chunks(3).filter(|p| p[0] != 128).count();
    check((729..=909).contains(&hit), &format!("salt-pepper count {hit} within 819 +/- 90"))?;

    // jpeg
    let text = text_render();
    let q100 = jpeg_degrade(&text, 100).map_err(|e| e.to_string())?;
    let p = psnr(&text, &q100);
    check(p > 35.0, &format!("jpeg q=100 PSNR {p:.1} dB > 35"))?;
    let s30 = jpeg_encode(&text, 30).unwrap().len();
    let s90 = jpeg_encode(&text, 90).unwrap().len();
    check(s30 < s90, &format!("jpeg size q30 {s30} < q90 {s90}"))?;
    for q in [1u8, 30, 55, 70, 100] {
        let d = jpeg_degrade(&img, q).unwrap();
        check((d.width(), d.height()) == (64, 32), "jpeg preserves dimensions")?;
    }

    // resolution
    check(resolution_degrade(&img, 1.0) == img, "resolution r=1 is identity")?;
    for r in [0.3, 0.5, 0.7] {
        check(max_diff(&resolution_degrade(&gray, r), &gray) <= 1, "resolution keeps a constant field")?;
    }
    let mut line = RasterImage::filled(32, 8, Rgb::WHITE);
    for y in 0..8 {
        line.set_pixel(15, y, Rgb::BLACK);
    }
    let rd = resolution_degrade(&line, 0.5);
    let partial = (0..32).filter(|&x| (1..255).contains(&rd.pixel(x, 4).0[0])).count();
    check(partial >= 2, &format!("downscaled line spreads over {partial} partial columns"))?;

    // brightness
    check(brightness(&img, 0.0) == img, "brightness 0 is identity")?;
    let b = brightness(&RasterImage::filled(2, 2, Rgb([100, 255, 0])), 0.15);
    check(b.pixel(0, 0) == Rgb([115, 255, 0]), "brightness 100 -> 115, 255 stays 255")?;

    // contrast
    let ramp = RasterImage::from_raw(256, 1, (0..=255u8).flat_map(|v| [v, v, v]).collect()).unwrap();
    check(contrast(&ramp, 1.0) == ramp, "contrast 1 is identity for all 256 levels")?;
    for g in [0.7, 1.3, 2.0] {
        let c = contrast(&ramp, g);
        check(c.pixel(0, 0) == Rgb::BLACK && c.pixel(255, 0) == Rgb::WHITE, "contrast fixes 0 and 255")?;
    }
    check(contrast(&ramp, 2.0).pixel(128, 0).0[0] == 64, "contrast(128, 2) = 64")?;

    Ok(format!("{cases} identity and oracle cases across ten transforms"))
}

/// Wraps a sink and records every label it is given.
struct Recording {
    inner: Box<dyn DatasetSink>,
    labels: Vec<(String, String)>,
}

impl DatasetSink for Recording {
    fn write_sample(&mut self, record: &SampleRecord) -> Result<(), PackagingError> {
        self.labels.push((record.file_name(), record.label.clone()));
        self.inner.write_sample(record)
    }
    fn buffered_bytes(&self) -> u64 {
        self.inner.buffered_bytes()
    }
    fn can_drain(&self) -> bool {
        self.inner.can_drain()
    }
    fn drain(&mut self) -> Result<(), PackagingError> {
        self.inner.drain()
    }
    fn finish(&mut self, manifest: &mut DatasetManifest) -> Result<Vec<PathBuf>, PackagingError> {
        self.inner.finish(manifest)
    }
    fn abort(&mut self, reason: &str) {
        self.inner.abort(reason)
    }
}

const DIACRITIC_CORPUS: &str = "\u{0633}\u{0628}\u{0654}\u{0642} \u{062F}\u{0655}\u{0644}\u{06CC}\u{0644} \
\u{0646}\u{0656}\u{0638}\u{0631} \u{06A9}\u{0657}\u{062A}\u{0627}\u{0628} \u{0632}\u{064E}\u{0628}\u{0627}\u{0646} \
\u{06AF}\u{064E}\u{0631}\u{0655} \u{0628}\u{0672}\u{0698} \u{0634}\u{064F}\u{0631}\u{06CD}\n\
\u{0631}\u{0654}\u{0633} \u{0645}\u{0656}\u{0646} \u{0644}\u{0657}\u{06A9} \u{0648}\u{0655}\u{0646}";

fn label_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    for format in OutputFormat::ALL {
        let cfg = GeneratorConfig {
            corpus: None,
            corpus_text: Some(DIACRITIC_CORPUS.into()),
            format,
            ..base_config(1000)
        };
        let out = dir.path().join(format.to_string());
        let g = Generator::new(&cfg, &InputPaths::default()).map_err(|e| e.to_string())?;
        let layout = SinkLayout {
            format,
            train_count: split_point(cfg.count, cfg.split).unwrap(),
        };
        let inner = open_sink(cfg.storage, &out, layout, cfg.batch_size).map_err(|e| e.to_string())?;
        let mut sink = Recording {
            inner,
            labels: Vec::new(),
        };
        g.run(&mut sink, GenerateOptions::default()).map_err(|e| e.to_string())?;

        let archive = out.join("dataset.zip");
        let mut decoded = Vec::new();
        for file in [format.train_file(), format.val_file()] {
            let bytes = zip_entry(&archive, &file);
            decoded.extend(decode_labels(&bytes, format).map_err(|e| e.to_string())?);
        }
        ensure(decoded.len() == 1000, || format!("{format}: {} records decoded", decoded.len()))?;
        for (entry, (name, label)) in decoded.iter().zip(&sink.labels) {
            ensure(&entry.image == name && &entry.text == label, || {
                format!("{format}: decoded ({}, {:?}) vs written ({name}, {label:?})", entry.image, entry.text)
            })?;
        }
        for mark in '\u{0654}'..='\u{0657}' {
            ensure(sink.labels.iter().any(|(_, l)| l.contains(mark)), || {
                format!("{format}: no label carries U+{:04X}", mark as u32)
            })?;
        }
        if format == OutputFormat::Crnn {
            let bytes = zip_entry(&archive, &format.train_file());
            let text = String::from_utf8(bytes).unwrap();
            let line = text.trim_start_matches('\u{FEFF}').split('\n').nth(1).unwrap_or_default();
            let want = format!("image_000001.png\t{}", sink.labels[1].1);
            ensure(line == want, || format!("crnn line 1 is {line:?}, expected {want:?}"))?;
        }
        details.push(format.to_string());
    }
    Ok(format!(
        "1000 labels with U+0654..U+0657 round-trip exactly in {}; CRNN row for index 1 matches",
        details.join(", ")
    ))
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap().flatten() {
        let p = e.path();
        let dest = to.join(e.file_name());
        if p.is_dir() {
            copy_dir(&p, &dest);
        } else {
            std::fs::copy(&p, &dest).unwrap();
        }
    }
}

fn archive_integrity() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("fresh");
    let mut details = Vec::new();
    for storage in [StorageMode::Zip, StorageMode::Chunked, StorageMode::Files] {
        let cfg = GeneratorConfig {
            storage,
            batch_size: 100,
            ..base_config(300)
        };
        let out = fresh.join(storage.to_string());
        run_generate(&cfg, &out, None)?;
        let report = verify(&out);
        ensure(report.is_ok() && report.images == 300, || {
            format!("fresh {storage} dataset: {} images, failures {:?}", report.images, report.failures)
        })?;
        details.push(format!("{storage} clean"));
    }
    let files = fresh.join("files");

    let truncated = dir.path().join("truncated");
    copy_dir(&files, &truncated);
    let png = truncated.join("images/image_000017.png");
    let bytes = std::fs::read(&png).unwrap();
    std::fs::write(&png, &bytes[..bytes.len() / 3]).unwrap();
    let report = verify(&truncated);
    ensure(
        report.failures.len() == 1 && report.failures[0].file.ends_with("image_000017.png"),
        || format!("truncated PNG: {:?}", report.failures),
    )?;
    details.push(format!("truncated PNG -> {:?}", report.failures[0].kind));

    let deleted = dir.path().join("deleted");
    copy_dir(&files, &deleted);
    let labels = deleted.join(OutputFormat::Crnn.train_file());
    let text = std::fs::read_to_string(&labels).unwrap();
    let mut lines: Vec<&str> = text.split_inclusive('\n').collect();
    lines.remove(5);
    std::fs::write(&labels, lines.concat()).unwrap();
    let report = verify(&deleted);
    ensure(
        report.failures.len() == 1 && report.failures[0].kind == FailureKind::CountMismatch,
        || format!("deleted label line: {:?}", report.failures),
    )?;
    details.push(format!("deleted label line -> {}", report.failures[0].detail));
    Ok(details.join("; "))
}

const ARABIC: &[char] = &[
    '\u{0627}', '\u{0628}', '\u{062A}', '\u{062F}', '\u{0631}', '\u{0633}', '\u{0644}', '\u{0645}', '\u{0646}',
    '\u{06A9}', '\u{06CC}', '\u{06C1}',
];
const LATIN: &[char] = &['a', 'b', 'k', 'x', 'Z', '7', '-', '\''];
const MARKS: &[char] = &['\u{064E}', '\u{064F}', '\u{0650}', '\u{0654}', '\u{0655}', '\u{0656}', '\u{0657}', '\u{0301}'];
const SEPARATORS: &[&str] = &[
    " ", " ", " ", "  ", "\t", "\n", "\r\n", "\r", "\u{060C}", "\u{061B}", ".", "!", "?", "\u{061F}", "\u{06D4}", ":",
    ";", ",", ". ", "\u{06D4} ", " \n ",
];

fn pick<T: Copy>(rng: &mut Lcg, items: &[T]) -> T {
    items[rng.int_range(0, items.len() as i64 - 1).unwrap() as usize]
}

fn random_corpus(rng: &mut Lcg) -> String {
    let mut s = String::new();
    let tokens = rng.int_range(1, 60).unwrap();
    for _ in 0..tokens {
        let letters = rng.int_range(1, 7).unwrap();
        let latin = rng.bernoulli(0.3).unwrap();
        for _ in 0..letters {
            s.push(pick(rng, if latin { LATIN } else { ARABIC }));
            if rng.bernoulli(0.2).unwrap() {
                s.push(pick(rng, MARKS));
            }
        }
        s.push_str(pick(rng, SEPARATORS));
    }
    s
}

fn ref_trim_collapse(piece: &str) -> Option<String> {
    let chars: Vec<char> = piece.chars().collect();
    let start = chars.iter().position(|c| !c.is_whitespace())?;
    let end = chars.iter().rposition(|c| !c.is_whitespace())?;
    let mut out = String::new();
    let mut i = start;
    while i <= end {
        if chars[i].is_whitespace() {
            let mut j = i;
            while chars[j].is_whitespace() {
                j += 1;
            }
            let run: String = chars[i..j].iter().collect();
            if run.chars().all(|c| c == ' ') {
                out.push_str(&run);
            } else {
                out.push(' ');
            }
            i = j;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    Some(out)
}

fn ref_words(text: &str) -> Vec<String> {
    let delims = [
        '\u{060C}', '\u{061B}', '.', '!', '?', '\u{061F}', '\u{06D4}', ':', ';', ',',
    ];
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() || delims.contains(&c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn ref_pieces(text: &str, is_break: impl Fn(char) -> bool) -> Vec<String> {
    let mut pieces = vec![String::new()];
    for c in text.chars() {
        if is_break(c) {
            pieces.push(String::new());
        } else {
            pieces.last_mut().unwrap().push(c);
        }
    }
    pieces.iter().filter_map(|p| ref_trim_collapse(p)).collect()
}

fn ref_lines(text: &str) -> Vec<String> {
    let mut unified = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            unified.push('\n');
        } else {
            unified.push(c);
        }
    }
    ref_pieces(&unified, |c| c == '\n')
}

fn ref_ngrams(words: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in 2..=4 {
        if words.len() < n {
            continue;
        }
        for i in 0..=words.len() - n {
            let w = words[i..i + n].join(" ");
            if !out.contains(&w) {
                out.push(w);
            }
        }
    }
    out
}

fn is_mark(c: char) -> bool {
    MARKS.contains(&c) || ('\u{064B}'..='\u{065F}').contains(&c) || ('\u{0300}'..='\u{036F}').contains(&c)
}

fn segmentation_oracle() -> Result<String, String> {
    let mut rng = Lcg::new(2024);
    let mut compared = 0usize;
    for n in 0..100 {
        let text = random_corpus(&mut rng);
        let corpus = Corpus::new("random", text.clone());
        let words = ref_words(&text);
        let expected = [
            (SegmentationMode::Word, words.clone()),
            (SegmentationMode::Ngram, ref_ngrams(&words)),
            (
                SegmentationMode::Sentence,
                ref_pieces(&text, |c| ['.', '?', '!', '\u{061F}', '\u{06D4}'].contains(&c)),
            ),
            (SegmentationMode::Line, ref_lines(&text)),
        ];
        for (mode, want) in expected {
            let cfg = SegmentationConfig {
                mode,
                ..Default::default()
            };
            let got = segment(&corpus, &cfg).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("corpus {n} {mode:?}: {got:?} vs reference {want:?} for {text:?}"))?;
            compared += got.len();
        }
    }

    let cfg = SegmentationConfig {
        mode: SegmentationMode::Char,
        ..Default::default()
    };
    let mut rng = Lcg::new(99);
    let mut clusters = 0usize;
    for n in 0..100_000 {
        let mut s = String::new();
        for _ in 0..rng.int_range(1, 6).unwrap() {
            let script = if rng.bernoulli(0.8).unwrap() { ARABIC } else { LATIN };
            s.push(pick(&mut rng, script));
            for _ in 0..rng.int_range(0, 3).unwrap() {
                s.push(pick(&mut rng, MARKS));
            }
            if rng.bernoulli(0.2).unwrap() {
                s.push(' ');
            }
        }
        let segs = segment(&Corpus::new("fuzz", s.clone()), &cfg).map_err(|e| e.to_string())?;
        let split = segs.iter().find(|g| g.chars().next().is_some_and(is_mark));
        ensure(split.is_none(), || format!("string {n} {s:?}: cluster {split:?} starts with a mark"))?;
        let rejoined: String = segs.concat();
        let stripped: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        ensure(rejoined == stripped, || format!("string {n} {s:?}: clusters do not rejoin"))?;
        clusters += segs.len();
    }
    Ok(format!(
        "100 random corpora x 4 modes match the reference ({compared} segments); 1e5 fuzz strings, {clusters} clusters, no mark split from its base"
    ))
}

#[cfg(target_os = "linux")]
fn run_with_peak_rss(cmd: &mut Command) -> Result<(i32, u64), String> {
    let child = cmd.spawn().map_err(|e| e.to_string())?;
    let pid = child.id() as libc::pid_t;
    let mut status = 0;
    // SAFETY: rusage is plain data and the pid belongs to our own child.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let r = unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
    if r != pid {
        return Err(format!("wait4 failed: {}", std::io::Error::last_os_error()));
    }
    let code = if libc::WIFEXITED(status) { libc::WEXITSTATUS(status) } else { -1 };
    Ok((code, usage.ru_maxrss as u64 * 1024))
}

fn cli_base_args(count: u64) -> Vec<String> {
    let cfg = base_config(count);
    let mut args = vec!["--corpus".to_string(), cfg.corpus.clone().unwrap()];
    for f in &cfg.fonts {
        args.push("--font".into());
        args.push(format!("{}:{}", f.path.as_ref().unwrap(), f.percentage.unwrap()));
    }
    args.extend(["--count".into(), count.to_string(), "--seed".into(), "42".into()]);
    args
}

#[cfg(target_os = "linux")]
fn memory_bound() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glyphgen"));
    cmd.arg("generate")
        .args(cli_base_args(50_000))
        .args(["--storage", "files", "--width", "256", "--height", "64", "-q", "-o"])
        .arg(&out)
        .stderr(std::process::Stdio::null());
    let (code, peak) = run_with_peak_rss(&mut cmd)?;
    ensure(code == 0, || format!("generate exited with {code}"))?;
    let images = std::fs::read_dir(out.join("images")).map_err(|e| e.to_string())?.count();
    ensure(images == 50_000, || format!("{images} images written"))?;
    let mib = peak as f64 / (1 << 20) as f64;
    ensure(mib < 512.0, || format!("peak RSS {mib:.1} MiB"))?;
    Ok(format!("files mode, 50000 samples at 256x64: peak RSS {mib:.1} MiB (< 512)"))
}

#[cfg(not(target_os = "linux"))]
fn memory_bound() -> Result<String, String> {
    Err("peak RSS measurement is implemented for Linux only".into())
}

fn throughput_report() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_glyphgen"))
        .arg("bench")
        .args(cli_base_args(1000))
        .args(["--sizes", "1000,10000,50000", "--storage", "chunked", "--workers", "1", "--json"])
        .arg("--keep")
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(output.status.success(), || String::from_utf8_lossy(&output.stderr).into_owned())?;
    let table = String::from_utf8_lossy(&output.stderr);
    let table: String = table.lines().filter(|l| !l.starts_with("generating") && !l.starts_with('[')).collect::<Vec<_>>().join("\n");
    for line in table.lines() {
        println!("    {line}");
    }
    let rows: serde_json::Value = serde_json::from_slice(&output.stdout).map_err(|e| e.to_string())?;
    let rows = rows.as_array().ok_or("bench JSON is not a list")?;
    let sizes: Vec<u64> = rows.iter().filter_map(|r| r["samples"].as_u64()).collect();
    ensure(sizes == [1000, 10_000, 50_000], || format!("bench sizes {sizes:?}"))?;
    let rates: Vec<String> = rows.iter().map(|r| format!("{:.0}", r["rate"].as_f64().unwrap_or(0.0))).collect();
    let slowest = rows.iter().filter_map(|r| r["rate"].as_f64()).fold(f64::MAX, f64::min);
    Ok(format!(
        "single-worker samples/sec for 1k/10k/50k: {} (soft target >= 40, report only: {})",
        rates.join("/"),
        if slowest >= 40.0 { "met" } else { "not met" }
    ))
}
