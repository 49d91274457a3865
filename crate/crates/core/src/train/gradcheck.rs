//! Finite-difference verification of the full objective's analytic
//! gradient on a tiny model, at 64-bit precision.
//!
//! The probe (parameters and batch) is re-drawn while any non-smooth op
//! sits too close to its switching surface (ReLU inputs, max-pool
//! runner-up gaps, |pred - gt| arguments, group stds), since central
//! differences straddle such kinks. Probe parameters use random biases:
//! zero biases would park dead paths exactly on the ReLU kink.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::TripletBatch;
use crate::error::{Error, Result};
use crate::losses::HyperParams;
use crate::model::forward::bind_param_tensors;
use crate::model::{ModelConfig, ModelParams};
use crate::rng::{mix_seed, rng_for, streams};
use crate::stats::sample_gaussian_reference;
use crate::tensor::Tensor;

use super::objective::build_objective;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub triplets: usize,
    pub patches_per_image: usize,
    pub hyper: HyperParams,
    /// Number of randomly sampled scalar parameters to verify.
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Probe redraw budget when a kink margin is violated.
    pub max_redraws: usize,
    /// Minimum distance of any non-smooth op to its switching surface.
    pub kink_threshold: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                stage_channels: [4, 4, 4, 4, 4],
                convs_per_stage: [1, 1, 1, 1, 1],
                feature_dim: 16,
                num_classes: 3,
                patch_size: 32,
            },
            triplets: 2,
            patches_per_image: 4,
            hyper: HyperParams::default(),
            samples: 200,
            tolerance: 1e-4,
            seed: 0,
            max_redraws: 20,
            // guards against probes sitting (essentially) on a switching
            // surface; sub-threshold crossings contribute below the
            // finite-difference noise floor
            kink_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub element: usize,
    pub analytic: f64,
    pub finite_diff: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Relative errors use `max(|analytic|, |fd|, noise_floor)` as the
    /// denominator; the floor is `tolerance * max(1, max |analytic|)`
    /// and absorbs central-difference roundoff on near-zero gradients.
    pub noise_floor: f64,
    /// Probe redraws spent on kink avoidance.
    pub redraws: usize,
    /// Final probe's smallest distance to a non-smooth switching surface.
    pub kink_margin: f64,
}

fn random_batch(cfg: &GradCheckConfig, seed: u64) -> TripletBatch {
    let mut rng = rng_for(seed, streams::GRAD_CHECK, 1);
    let s = cfg.model.patch_size;
    let rows = cfg.triplets * cfg.patches_per_image;
    let mut make = |_: usize| -> Tensor<f32> {
        let data = (0..rows * 3 * s * s).map(|_| rng.gen::<f32>()).collect();
        Tensor::from_vec(&[rows, 3, s, s], data)
    };
    let distorted_patches = make(0);
    let reference_patches = make(1);
    let auxiliary_patches = make(2);
    let distortion_labels = (0..cfg.triplets)
        .map(|_| rng.gen_range(0..cfg.model.num_classes))
        .collect();
    // O(1) score scale keeps the loss magnitude small, which keeps
    // finite-difference roundoff below the tolerance
    let scores = (0..cfg.triplets).map(|_| rng.gen::<f32>() * 2.0).collect();
    TripletBatch {
        distorted_patches,
        reference_patches,
        auxiliary_patches,
        distortion_labels,
        scores,
        group_index: (0..rows).map(|i| i / cfg.patches_per_image).collect(),
        triplets: cfg.triplets,
        patches_per_image: cfg.patches_per_image,
    }
}

fn objective_value(
    entries: &[(String, Tensor<f64>)],
    cfg: &GradCheckConfig,
    batch: &TripletBatch,
    gauss: &Tensor<f64>,
    bandwidths: &[f64],
) -> f64 {
    let mut graph = Graph::<f64>::new();
    let bound = bind_param_tensors(&mut graph, entries, false);
    let obj = build_objective(
        &mut graph,
        &bound,
        &cfg.model,
        batch,
        &cfg.hyper,
        gauss,
        Some(bandwidths),
    );
    graph.value(obj.total).item()
}

/// Compares the analytic gradient of the full objective against central
/// finite differences (`h = 1e-5` relative with an absolute floor) on up
/// to `samples` randomly chosen parameters.
pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.model.validate()?;
    let rows = cfg.triplets * cfg.patches_per_image;

    // probe redraw loop: find a draw clear of non-smooth switching surfaces
    let mut chosen = None;
    let mut redraws = 0;
    for attempt in 0..cfg.max_redraws {
        let probe_seed = mix_seed(cfg.seed, streams::GRAD_CHECK, attempt as u64);
        let params = ModelParams::init_probe(&cfg.model, probe_seed)?;
        let batch = random_batch(cfg, probe_seed);
        let gauss =
            sample_gaussian_reference::<f64>(rows, cfg.model.feature_dim, probe_seed).samples;
        let entries: Vec<(String, Tensor<f64>)> = params
            .entries()
            .iter()
            .map(|(n, t)| (n.clone(), t.cast::<f64>()))
            .collect();
        let mut graph = Graph::<f64>::new();
        let bound = bind_param_tensors(&mut graph, &entries, true);
        let obj = build_objective(
            &mut graph,
            &bound,
            &cfg.model,
            &batch,
            &cfg.hyper,
            &gauss,
            None,
        );
        let margin = graph.kink_margin();
        if margin >= cfg.kink_threshold {
            let grads = graph.backward(obj.total);
            let analytic: Vec<Tensor<f64>> = bound
                .ordered_ids()
                .iter()
                .zip(&entries)
                .map(|(&id, (_, t))| {
                    grads
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(t.shape()))
                })
                .collect();
            chosen = Some((entries, batch, gauss, obj.bandwidths.clone(), analytic, margin));
            break;
        }
        redraws += 1;
    }
    let Some((entries, batch, gauss, bandwidths, analytic, kink_margin)) = chosen else {
        return Err(Error::Numeric(format!(
            "no probe cleared the kink margin {} after {} redraws",
            cfg.kink_threshold, cfg.max_redraws
        )));
    };

    // sample scalar coordinates without replacement
    let total: usize = entries.iter().map(|(_, t)| t.len()).sum();
    let n_check = cfg.samples.min(total);
    let mut coords: Vec<usize> = (0..total).collect();
    let mut rng = rng_for(cfg.seed, streams::GRAD_CHECK, 0xFD);
    for i in 0..n_check {
        let j = rng.gen_range(i..total);
        coords.swap(i, j);
    }
    coords.truncate(n_check);

    let locate = |flat: usize| -> (usize, usize) {
        let mut offset = flat;
        for (e, (_, t)) in entries.iter().enumerate() {
            if offset < t.len() {
                return (e, offset);
            }
            offset -= t.len();
        }
        unreachable!("coordinate out of range")
    };

    let mut report_entries = Vec::with_capacity(n_check);
    for &flat in &coords {
        let (e, i) = locate(flat);
        let theta = entries[e].1.data()[i];
        let h = 1e-5 * theta.abs().max(1.0);
        let mut plus = entries.clone();
        plus[e].1.data_mut()[i] = theta + h;
        let mut minus = entries.clone();
        minus[e].1.data_mut()[i] = theta - h;
        let fp = objective_value(&plus, cfg, &batch, &gauss, &bandwidths);
        let fm = objective_value(&minus, cfg, &batch, &gauss, &bandwidths);
        let fd = (fp - fm) / (2.0 * h);
        report_entries.push(GradCheckEntry {
            name: entries[e].0.clone(),
            element: i,
            analytic: analytic[e].data()[i],
            finite_diff: fd,
            rel_error: 0.0, // filled once the gradient scale is known
        });
    }

    let gscale = report_entries
        .iter()
        .map(|e| e.analytic.abs())
        .fold(0.0f64, f64::max);
    let noise_floor = cfg.tolerance * gscale.max(1.0);
    let mut max_rel_error = 0.0f64;
    for e in &mut report_entries {
        let denom = e.analytic.abs().max(e.finite_diff.abs()).max(noise_floor);
        e.rel_error = (e.analytic - e.finite_diff).abs() / denom;
        max_rel_error = max_rel_error.max(e.rel_error);
    }

    Ok(GradCheckReport {
        entries: report_entries,
        max_rel_error,
        tolerance: cfg.tolerance,
        passed: max_rel_error < cfg.tolerance,
        noise_floor,
        redraws,
        kink_margin,
    })
}
