//! Evaluation: rank/linear correlation and error metrics, and the
//! manifest-level evaluation runner with per-distortion-type breakdowns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, SciImage};
use crate::error::{Error, Result};
use crate::model::{predict_quality, ModelConfig, ModelParams};
use crate::parallel;

/// Average ranks (1-based) with ties sharing the mean of their rank run.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedMetric(
            "zero variance in correlation input".into(),
        ));
    }
    // single sqrt keeps perfectly correlated inputs at exactly +/-1
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn check_lengths(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "length mismatch: {} predictions vs {} ground truths",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedMetric(
            "need at least 2 samples for correlation".into(),
        ));
    }
    Ok(())
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_lengths(pred, gt)?;
    pearson_raw(&average_ranks(pred), &average_ranks(gt))
}

/// Pearson linear correlation on raw values (no nonlinear mapping).
pub fn plcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_lengths(pred, gt)?;
    pearson_raw(pred, gt)
}

/// Root mean square error.
pub fn rmse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "length mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("empty input".into()));
    }
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| (p - g) * (p - g))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Overall metric triple.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub srcc: f64,
    pub plcc: f64,
    pub rmse: f64,
}

/// Per-distortion-type metrics; correlations are absent when the group
/// is too small or degenerate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TypeMetrics {
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    pub rmse: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictionRow {
    pub image: String,
    pub distortion_type: String,
    pub distortion_level: u32,
    pub predicted: f64,
    pub ground_truth: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SkippedRow {
    pub image: String,
    pub reason: String,
}

/// Evaluation results over one manifest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    /// Label of the run, e.g. `synth-test` or `corpusA->corpusB`.
    pub dataset: String,
    pub overall: Metrics,
    pub per_type: BTreeMap<String, TypeMetrics>,
    pub predictions: Vec<PredictionRow>,
    pub skipped: Vec<SkippedRow>,
}

impl EvalReport {
    /// CSV table `image,distortion_type,distortion_level,predicted,ground_truth`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,distortion_type,distortion_level,predicted,ground_truth\n");
        for r in &self.predictions {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.image, r.distortion_type, r.distortion_level, r.predicted, r.ground_truth
            ));
        }
        out
    }
}

/// Scores every distorted record of `manifest` with the model and
/// aggregates metrics; unreadable images are recorded and excluded.
/// `group_by_type` adds the per-type breakdown.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    manifest: &DatasetManifest,
    group_by_type: bool,
    label: &str,
) -> Result<EvalReport> {
    let records: Vec<_> = manifest.distorted_records().collect();
    let outcomes: Vec<std::result::Result<(usize, f64), (usize, String)>> =
        parallel::map_collect(records.len(), |i| {
            let rec = records[i];
            let image = SciImage::load(&manifest.resolve_path(rec))
                .map_err(|e| (i, format!("unreadable image: {e}")))?;
            let q = predict_quality(&image, params, config).map_err(|e| (i, e.to_string()))?;
            Ok((i, q as f64))
        });

    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((i, q)) => {
                let rec = records[i];
                predictions.push(PredictionRow {
                    image: rec.image_path.clone(),
                    distortion_type: rec.distortion_type.clone(),
                    distortion_level: rec.distortion_level,
                    predicted: q,
                    ground_truth: rec.score.ok_or_else(|| {
                        Error::Integrity(format!("{} lacks a score", rec.image_path))
                    })?,
                });
            }
            Err((i, reason)) => skipped.push(SkippedRow {
                image: records[i].image_path.clone(),
                reason,
            }),
        }
    }

    let pred: Vec<f64> = predictions.iter().map(|r| r.predicted).collect();
    let gt: Vec<f64> = predictions.iter().map(|r| r.ground_truth).collect();
    let overall = Metrics {
        srcc: srcc(&pred, &gt)?,
        plcc: plcc(&pred, &gt)?,
        rmse: rmse(&pred, &gt)?,
    };

    let mut per_type = BTreeMap::new();
    if group_by_type {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in predictions.iter().enumerate() {
            groups.entry(&r.distortion_type).or_default().push(i);
        }
        for (ty, idx) in groups {
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let g: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
            per_type.insert(
                ty.to_string(),
                TypeMetrics {
                    srcc: srcc(&p, &g).ok(),
                    plcc: plcc(&p, &g).ok(),
                    rmse: rmse(&p, &g)?,
                    count: idx.len(),
                },
            );
        }
    }

    Ok(EvalReport {
        dataset: label.to_string(),
        overall,
        per_type,
        predictions,
        skipped,
    })
}
