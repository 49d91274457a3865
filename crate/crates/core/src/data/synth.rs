//! Synthetic screen-content generator and corpus writer.
//!
//! Generated images mix the elements that set screen content apart from
//! camera imagery: flat color panels, sharp rectangular edges, dense
//! glyph-like strokes and thin table grids. They are a desk-scale
//! stand-in for real screenshot datasets.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};

use super::distort::{apply_distortion, SyntheticDistortion};
use super::image::SciImage;
use super::manifest::{DatasetManifest, ImageRecord, ScorePolarity, PRISTINE_LABEL};

/// Deterministic pseudo screen-content image with values in [0, 1].
pub fn synthesize_sci(width: usize, height: usize, seed: u64) -> Result<SciImage> {
    if width < 64 || height < 64 {
        return Err(Error::Size(format!(
            "synthetic image must be at least 64x64, got {width}x{height}"
        )));
    }
    let mut rng = rng_for(seed, streams::SYNTH, 0);
    let mut img = SciImage::new(width, height);

    // light desktop background
    let bg = pastel(&mut rng);
    img.fill_rect(0, 0, width, height, bg);

    // panel layout: 2-4 columns x 2-3 rows with jittered boundaries
    let cols = rng.gen_range(2..=4usize);
    let rows = rng.gen_range(2..=3usize);
    let xs = cut_points(&mut rng, width, cols);
    let ys = cut_points(&mut rng, height, rows);

    for r in 0..rows {
        for c in 0..cols {
            let (x0, x1) = (xs[c], xs[c + 1]);
            let (y0, y1) = (ys[r], ys[r + 1]);
            draw_panel(&mut img, &mut rng, x0, y0, x1, y1);
        }
    }

    // thin separator lines between panels
    let line = dark(&mut rng);
    for &x in &xs[1..cols] {
        img.fill_rect(x, 0, x + 1, height, line);
    }
    for &y in &ys[1..rows] {
        img.fill_rect(0, y, width, y + 1, line);
    }
    Ok(img)
}

fn cut_points(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Vec<usize> {
    let mut pts = vec![0];
    for i in 1..n {
        let base = i * len / n;
        let jitter = len / (6 * n).max(1);
        let lo = base.saturating_sub(jitter).max(1);
        let hi = (base + jitter).min(len - 1);
        pts.push(rng.gen_range(lo..=hi));
    }
    pts.push(len);
    pts
}

// Color bands are kept tight so different seeds produce images with
// similar global statistics (screen content is statistically regular;
// layout and hue vary, luminance structure does not).

fn pastel(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [
        0.82 + 0.14 * rng.gen::<f32>(),
        0.82 + 0.14 * rng.gen::<f32>(),
        0.82 + 0.14 * rng.gen::<f32>(),
    ]
}

fn saturated(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let mut c = [
        0.35 + 0.25 * rng.gen::<f32>(),
        0.35 + 0.25 * rng.gen::<f32>(),
        0.35 + 0.25 * rng.gen::<f32>(),
    ];
    let hot = rng.gen_range(0..3);
    c[hot] = 0.55 + 0.25 * rng.gen::<f32>();
    c
}

fn dark(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let v = 0.06 + 0.04 * rng.gen::<f32>();
    [v, v, v + 0.02 * rng.gen::<f32>()]
}

fn draw_panel(img: &mut SciImage, rng: &mut ChaCha8Rng, x0: usize, y0: usize, x1: usize, y1: usize) {
    if x1 <= x0 + 8 || y1 <= y0 + 8 {
        return;
    }
    let fill = if rng.gen_bool(0.15) {
        saturated(rng)
    } else {
        pastel(rng)
    };
    img.fill_rect(x0, y0, x1, y1, fill);

    // optional widget layer under the text
    match rng.gen_range(0..3u8) {
        0 => draw_bars(img, rng, x0 + 4, y0 + 4, x1 - 4, y1 - 4),
        1 => draw_table(img, rng, x0 + 3, y0 + 3, x1 - 3, y1 - 3),
        _ => {}
    }
    // dense glyph strokes everywhere: documents are the canonical
    // screen content, and the near-uniform stroke texture is what gives
    // screen content its tight patch statistics
    draw_text_block(img, rng, x0 + 4, y0 + 4, x1 - 4, y1 - 4);

    // sharp-edged button rectangle
    if rng.gen_bool(0.6) && x1 > x0 + 24 && y1 > y0 + 16 {
        let bw = rng.gen_range(12..(x1 - x0 - 8).min(40));
        let bh = rng.gen_range(6..(y1 - y0 - 6).min(14));
        let bx = rng.gen_range(x0 + 2..x1 - bw - 2);
        let by = rng.gen_range(y0 + 2..y1 - bh - 2);
        let border = dark(rng);
        let inner = saturated(rng);
        img.fill_rect(bx, by, bx + bw, by + bh, border);
        img.fill_rect(bx + 1, by + 1, bx + bw - 1, by + bh - 1, inner);
    }
}

/// Rows of short high-contrast strokes imitating rendered text.
fn draw_text_block(img: &mut SciImage, rng: &mut ChaCha8Rng, x0: usize, y0: usize, x1: usize, y1: usize) {
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let ink = dark(rng);
    let line_height = 6;
    let mut y = y0;
    while y + 2 < y1 {
        let mut x = x0;
        while x + 2 < x1 {
            let glyph_w = rng.gen_range(2..6usize).min(x1 - x - 1);
            if rng.gen_bool(0.8) {
                img.fill_rect(x, y, x + glyph_w, y + 2, ink);
            }
            x += glyph_w + rng.gen_range(1..3usize);
        }
        y += line_height;
    }
}

/// Vertical bars of distinct flat colors, chart-like.
fn draw_bars(img: &mut SciImage, rng: &mut ChaCha8Rng, x0: usize, y0: usize, x1: usize, y1: usize) {
    if x1 <= x0 + 4 || y1 <= y0 + 4 {
        return;
    }
    let n = rng.gen_range(3..7usize);
    let bw = (x1 - x0) / n;
    if bw == 0 {
        return;
    }
    for i in 0..n {
        let h = rng.gen_range(1..((y1 - y0) / 2).max(2));
        let color = saturated(rng);
        img.fill_rect(x0 + i * bw, y1 - h, x0 + i * bw + bw.saturating_sub(1), y1, color);
    }
}

/// Thin-line grid with alternating cell fills.
fn draw_table(img: &mut SciImage, rng: &mut ChaCha8Rng, x0: usize, y0: usize, x1: usize, y1: usize) {
    if x1 <= x0 + 8 || y1 <= y0 + 8 {
        return;
    }
    let line = dark(rng);
    let cell_w = rng.gen_range(8..16usize);
    let cell_h = rng.gen_range(6..12usize);
    let shade = pastel(rng);
    let mut row = 0usize;
    let mut y = y0;
    while y < y1 {
        if row % 2 == 1 {
            img.fill_rect(x0, y, x1, (y + cell_h).min(y1), shade);
        }
        img.fill_rect(x0, y, x1, y + 1, line);
        y += cell_h;
        row += 1;
    }
    let mut x = x0;
    while x < x1 {
        img.fill_rect(x, y0, x + 1, y1, line);
        x += cell_w;
    }
}

/// Specification of a synthetic corpus.
#[derive(Clone, Debug)]
pub struct SynthCorpusSpec {
    pub name: String,
    pub references: usize,
    pub types: Vec<SyntheticDistortion>,
    pub levels: u32,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            references: 8,
            types: vec![
                SyntheticDistortion::GaussianNoise,
                SyntheticDistortion::GaussianBlur,
                SyntheticDistortion::ContrastChange,
            ],
            levels: 3,
            width: 256,
            height: 256,
            seed: 0,
        }
    }
}

/// Rank-consistent DMOS-like target for a synthetic distortion: level
/// `l` of `levels` maps to `100 l / levels` plus a small type-dependent
/// offset, clamped to [0, 100].
pub fn synthetic_score(kind: SyntheticDistortion, level: u32, levels: u32) -> f64 {
    let offset = match kind {
        SyntheticDistortion::GaussianNoise => 0.0,
        SyntheticDistortion::GaussianBlur => 3.0,
        SyntheticDistortion::MotionBlur => -3.0,
        SyntheticDistortion::ContrastChange => 5.0,
        SyntheticDistortion::BlockCoding => -5.0,
    };
    (100.0 * level as f64 / levels as f64 + offset).clamp(0.0, 100.0)
}

/// Writes reference and distorted PNGs plus `manifest.csv` into
/// `out_dir`; returns the manifest (base_dir set to `out_dir`).
pub fn write_synthetic_corpus(spec: &SynthCorpusSpec, out_dir: &Path) -> Result<DatasetManifest> {
    if spec.levels < 1 || spec.levels > super::distort::MAX_LEVEL {
        return Err(Error::Config(format!(
            "levels {} outside 1..={}",
            spec.levels,
            super::distort::MAX_LEVEL
        )));
    }
    if spec.types.is_empty() {
        return Err(Error::Config("no distortion types requested".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut records = Vec::new();
    for r in 0..spec.references {
        let ref_id = format!("ref_{r:02}");
        let image = synthesize_sci(spec.width, spec.height, crate::rng::mix_seed(spec.seed, streams::SYNTH, r as u64))?;
        let ref_name = format!("{ref_id}.png");
        image.save_png(&out_dir.join(&ref_name))?;
        records.push(ImageRecord {
            image_path: ref_name,
            reference_id: ref_id.clone(),
            distortion_type: PRISTINE_LABEL.into(),
            distortion_level: 0,
            score: None,
        });
        for &kind in &spec.types {
            for level in 1..=spec.levels {
                let dseed = crate::rng::mix_seed(
                    spec.seed,
                    streams::DISTORT,
                    ((r as u64) << 16) | ((kind as u64) << 8) | level as u64,
                );
                let distorted = apply_distortion(&image, kind, level, dseed)?;
                let name = format!("{ref_id}_{}_l{level}.png", kind.label());
                distorted.save_png(&out_dir.join(&name))?;
                records.push(ImageRecord {
                    image_path: name,
                    reference_id: ref_id.clone(),
                    distortion_type: kind.label().into(),
                    distortion_level: level,
                    score: Some(synthetic_score(kind, level, spec.levels)),
                });
            }
        }
    }
    let mut manifest = DatasetManifest::new(&spec.name, ScorePolarity::ImpairmentDmos, records);
    manifest.base_dir = out_dir.to_path_buf();
    manifest.validate()?;
    super::manifest::save_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seed_deterministic() {
        let a = synthesize_sci(256, 256, 7).unwrap();
        let b = synthesize_sci(256, 256, 7).unwrap();
        let c = synthesize_sci(256, 256, 8).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn values_in_unit_range() {
        let img = synthesize_sci(128, 96, 3).unwrap();
        assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn undersized_request_errors() {
        assert!(matches!(synthesize_sci(63, 64, 0), Err(Error::Size(_))));
    }

    #[test]
    fn histogram_has_multiple_modes() {
        // flat bright regions and dark strokes must both be populated
        let img = synthesize_sci(256, 256, 21).unwrap();
        let mut hist = [0usize; 16];
        for &v in &img.data {
            hist[((v * 15.999).floor() as usize).min(15)] += 1;
        }
        let total = img.data.len();
        let dark: usize = hist[..4].iter().sum();
        let bright: usize = hist[10..].iter().sum();
        assert!(dark * 100 > total, "dark mode missing: {hist:?}");
        assert!(bright * 100 > total * 20, "bright mode missing: {hist:?}");
    }

    #[test]
    fn corpus_writer_emits_expected_record_count() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthCorpusSpec {
            references: 2,
            width: 96,
            height: 96,
            ..Default::default()
        };
        let manifest = write_synthetic_corpus(&spec, dir.path()).unwrap();
        // 2 pristine + 2 refs x 3 types x 3 levels
        assert_eq!(manifest.records.len(), 2 + 2 * 3 * 3);
        assert!(dir.path().join("manifest.csv").exists());
        let loaded = super::super::manifest::load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.records, manifest.records);
        for r in &loaded.records {
            assert!(loaded.resolve_path(r).exists(), "{} missing", r.image_path);
        }
    }

    #[test]
    fn synthetic_scores_are_rank_consistent_per_type() {
        for kind in SyntheticDistortion::all() {
            let mut last = -1.0;
            for level in 1..=3 {
                let s = synthetic_score(kind, level, 3);
                assert!(s > last);
                last = s;
            }
        }
    }
}
