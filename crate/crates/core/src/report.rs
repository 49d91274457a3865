//! Feature-statistics reports: per-image distribution summaries of the
//! distortion-aware features and pristine-vs-distorted histograms of
//! their means, stds and summed KL deviations.

use serde::{Deserialize, Serialize};

use crate::data::{extract_patches, DatasetManifest, SciImage};
use crate::error::{Error, Result};
use crate::eval::SkippedRow;
use crate::model::{disentangle, multiscale_features, pooled_quality_feature, ModelConfig, ModelParams};
use crate::parallel;
use crate::stats::distribution_stats;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges, evenly spaced over the data range.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Evenly binned histogram with deterministic, data-derived edges.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    assert!(bins > 0);
    if values.is_empty() {
        return Histogram {
            edges: vec![0.0, 1.0],
            counts: vec![0],
        };
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if min == max { (min, min + 1.0) } else { (min, max) };
    let width = (max - min) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| min + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let raw = ((v - min) / width).floor() as usize;
        counts[raw.min(bins - 1)] += 1;
    }
    Histogram { edges, counts }
}

/// One image's distortion-feature distribution summary.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ImageStatsRow {
    pub image: String,
    pub reference_id: String,
    pub distortion_type: String,
    pub distortion_level: u32,
    pub patches: usize,
    /// Mean over dimensions of the per-dimension means.
    pub mu_mean: f64,
    /// Mean over dimensions of the per-dimension stds.
    pub sigma_mean: f64,
    /// Sum over dimensions of the KL deviation.
    pub phi_sum: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PopulationHistograms {
    /// Per-dimension means, pooled over images.
    pub mu: Histogram,
    /// Per-dimension stds, pooled over images.
    pub sigma: Histogram,
    /// Per-image summed KL deviations.
    pub phi_sum: Histogram,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StatsReport {
    pub dataset: String,
    pub bins: usize,
    pub pristine: PopulationHistograms,
    pub distorted: PopulationHistograms,
    pub rows: Vec<ImageStatsRow>,
    pub skipped: Vec<SkippedRow>,
}

struct ImageStats {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    phi_sum: f64,
    patches: usize,
}

fn image_stats(
    image: &SciImage,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ImageStats> {
    let patches = extract_patches(image, config.patch_size)?;
    let maps = multiscale_features(&patches, params, config)?;
    let quality = pooled_quality_feature(&maps, params, config)?;
    let features = disentangle(&quality, params, config)?;
    let stats = distribution_stats(&features.distortion)?;
    Ok(ImageStats {
        mu: stats.mu.iter().map(|&v| v as f64).collect(),
        sigma: stats.sigma.iter().map(|&v| v as f64).collect(),
        phi_sum: stats.phi.iter().map(|&v| v as f64).sum(),
        patches: stats.n,
    })
}

/// Runs the feature-statistics pipeline over every record (pristine and
/// distorted) of the manifest. Higher summed KL deviation indicates a
/// stronger departure from the learned pristine statistics.
pub fn stats_report(
    params: &ModelParams,
    config: &ModelConfig,
    manifest: &DatasetManifest,
    bins: usize,
) -> Result<StatsReport> {
    if bins == 0 {
        return Err(Error::Config("need at least one histogram bin".into()));
    }
    let records: Vec<_> = manifest.records.iter().collect();
    let outcomes: Vec<std::result::Result<(usize, ImageStats), (usize, String)>> =
        parallel::map_collect(records.len(), |i| {
            let rec = records[i];
            let image = SciImage::load(&manifest.resolve_path(rec))
                .map_err(|e| (i, format!("unreadable image: {e}")))?;
            let s = image_stats(&image, params, config).map_err(|e| (i, e.to_string()))?;
            Ok((i, s))
        });

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut mu_p = Vec::new();
    let mut mu_d = Vec::new();
    let mut sg_p = Vec::new();
    let mut sg_d = Vec::new();
    let mut phi_p = Vec::new();
    let mut phi_d = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((i, s)) => {
                let rec = records[i];
                if rec.is_pristine() {
                    mu_p.extend_from_slice(&s.mu);
                    sg_p.extend_from_slice(&s.sigma);
                    phi_p.push(s.phi_sum);
                } else {
                    mu_d.extend_from_slice(&s.mu);
                    sg_d.extend_from_slice(&s.sigma);
                    phi_d.push(s.phi_sum);
                }
                rows.push(ImageStatsRow {
                    image: rec.image_path.clone(),
                    reference_id: rec.reference_id.clone(),
                    distortion_type: rec.distortion_type.clone(),
                    distortion_level: rec.distortion_level,
                    patches: s.patches,
                    mu_mean: s.mu.iter().sum::<f64>() / s.mu.len() as f64,
                    sigma_mean: s.sigma.iter().sum::<f64>() / s.sigma.len() as f64,
                    phi_sum: s.phi_sum,
                });
            }
            Err((i, reason)) => skipped.push(SkippedRow {
                image: records[i].image_path.clone(),
                reason,
            }),
        }
    }

    Ok(StatsReport {
        dataset: manifest.name.clone(),
        bins,
        pristine: PopulationHistograms {
            mu: histogram(&mu_p, bins),
            sigma: histogram(&sg_p, bins),
            phi_sum: histogram(&phi_p, bins),
        },
        distorted: PopulationHistograms {
            mu: histogram(&mu_d, bins),
            sigma: histogram(&sg_d, bins),
            phi_sum: histogram(&phi_d, bins),
        },
        rows,
        skipped,
    })
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}
