//! The optimization loop: triplet-batch sampling, the combined
//! objective, Adam with decoupled weight decay, checkpoint selection by
//! validation SRCC and early stopping.

pub mod checkpoint;
pub mod gradcheck;
pub mod objective;
pub mod optimizer;
pub mod presets;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use optimizer::AdamW;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{sample_triplet_batch, DatasetManifest, ImageStore, ScorePolarity};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{HyperParams, LossBundle};
use crate::model::forward::bind_params;
use crate::model::{predict_quality, ModelConfig, ModelParams};
use crate::rng::{mix_seed, streams};
use crate::stats::sample_gaussian_reference;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Triplets per batch (the batch holds 3x this many images).
    pub batch_triplets: usize,
    /// Patch draws per image per batch.
    pub patches_per_image: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Validation cadence in epochs.
    pub eval_every: usize,
    /// Stop after this many evaluations without a new best SRCC.
    pub early_stop_patience: usize,
    pub hyper: HyperParams,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            batch_triplets: 32,
            patches_per_image: 16,
            max_epochs: 200,
            seed: 0,
            eval_every: 1,
            early_stop_patience: 20,
            hyper: HyperParams::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_triplets == 0 || self.patches_per_image == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.patches_per_image < 2 {
            return Err(Error::Config(
                "need at least 2 patches per image for feature statistics".into(),
            ));
        }
        if self.max_epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryRecord {
    Step {
        step: u64,
        epoch: usize,
        #[serde(flatten)]
        bundle: LossBundle,
    },
    Eval {
        epoch: usize,
        /// Absent when the metric is undefined (constant predictions,
        /// typical right after initialization).
        srcc: Option<f64>,
        plcc: Option<f64>,
        rmse: f64,
        is_best: bool,
    },
}

/// Per-step loss bundles and periodic validation metrics.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
    pub best_epoch: Option<usize>,
    pub best_srcc: Option<f64>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn step_bundles(&self) -> impl Iterator<Item = (&u64, &usize, &LossBundle)> {
        self.records.iter().filter_map(|r| match r {
            HistoryRecord::Step { step, epoch, bundle } => Some((step, epoch, bundle)),
            _ => None,
        })
    }

    pub fn eval_records(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, HistoryRecord::Eval { .. }))
    }

    /// Mean training MAE of the given epoch.
    pub fn epoch_mean_mae(&self, epoch: usize) -> Option<f64> {
        let maes: Vec<f64> = self
            .step_bundles()
            .filter(|(_, e, _)| **e == epoch)
            .map(|(_, _, b)| b.mae)
            .collect();
        if maes.is_empty() {
            None
        } else {
            Some(maes.iter().sum::<f64>() / maes.len() as f64)
        }
    }

    /// JSON-lines serialization, one record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Final and best parameters with the training history.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub best_params: ModelParams,
    pub history: TrainHistory,
}

fn check_manifests(train: &DatasetManifest, val: &DatasetManifest) -> Result<()> {
    train.validate()?;
    val.validate()?;
    for m in [train, val] {
        if m.score_polarity != ScorePolarity::ImpairmentDmos {
            return Err(Error::Config(format!(
                "manifest {} is not normalized (run score normalization first)",
                m.name
            )));
        }
    }
    let train_refs = train.reference_ids();
    let val_refs = val.reference_ids();
    if train_refs.intersection(&val_refs).next().is_some() {
        return Err(Error::Config(
            "train and validation manifests share reference ids".into(),
        ));
    }
    let mut val_scores: Vec<f64> = val.distorted_records().filter_map(|r| r.score).collect();
    val_scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    val_scores.dedup();
    if val_scores.len() < 2 {
        return Err(Error::DegenerateRange(
            "validation manifest needs at least 2 distinct scores".into(),
        ));
    }
    Ok(())
}

/// Validation metrics of the current parameters. Correlations are
/// `None` when undefined (constant predictions early in training).
fn validation_metrics(
    params: &ModelParams,
    config: &ModelConfig,
    manifest: &DatasetManifest,
    store: &mut ImageStore,
) -> Result<(Option<f64>, Option<f64>, f64)> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for rec in manifest.distorted_records() {
        let img = store.get(&manifest.resolve_path(rec))?;
        pred.push(predict_quality(&img, params, config)? as f64);
        gt.push(rec.score.ok_or_else(|| {
            Error::Integrity(format!("{} lacks a score", rec.image_path))
        })?);
    }
    Ok((
        eval::srcc(&pred, &gt).ok(),
        eval::plcc(&pred, &gt).ok(),
        eval::rmse(&pred, &gt)?,
    ))
}

/// Trains from scratch; deterministic given `config.seed`. Selects the
/// checkpoint with the best validation SRCC and stops early after
/// `early_stop_patience` non-improving evaluations.
pub fn train(
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_manifests(train_manifest, val_manifest)?;
    let vocab = train_manifest.distortion_vocabulary();
    if vocab.len() != config.model.num_classes {
        return Err(Error::Config(format!(
            "model.num_classes = {} but the training manifest has {} distortion types",
            config.model.num_classes,
            vocab.len()
        )));
    }

    let n_distorted = train_manifest.distorted_records().count();
    if n_distorted == 0 {
        return Err(Error::Config("training manifest has no distorted records".into()));
    }
    let steps_per_epoch = n_distorted.div_ceil(config.batch_triplets);

    let mut params = ModelParams::init(&config.model, config.seed)?;
    let mut best_params = params.clone();
    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut history = TrainHistory::default();
    let mut store = ImageStore::new();
    let mut global_step: u64 = 0;
    let mut best_srcc = f64::NEG_INFINITY;
    let mut evals_since_best = 0usize;
    let d = config.model.feature_dim;
    let rows = config.batch_triplets * config.patches_per_image;

    'epochs: for epoch in 1..=config.max_epochs {
        for _ in 0..steps_per_epoch {
            global_step += 1;
            let batch = sample_triplet_batch(
                train_manifest,
                config.batch_triplets,
                config.patches_per_image,
                config.model.patch_size,
                mix_seed(config.seed, streams::BATCH, global_step),
                &mut store,
            )?;
            let gauss = sample_gaussian_reference::<f32>(
                rows,
                d,
                mix_seed(config.seed, streams::GAUSS_REF, global_step),
            );

            let mut graph = Graph::<f32>::new();
            let bound = bind_params(&mut graph, &params, true);
            let obj = objective::build_objective(
                &mut graph,
                &bound,
                &config.model,
                &batch,
                &config.hyper,
                &gauss.samples,
                None,
            );
            let bundle =
                objective::bundle_from_graph(&graph, &obj, &config.hyper).map_err(|e| {
                    Error::Numeric(format!("step {global_step} (epoch {epoch}): {e}"))
                })?;
            debug_assert!(bundle.identity_holds(), "loss identity broke at step {global_step}");

            let grads = graph.backward(obj.total);
            let grad_refs: Vec<Option<&Tensor<f32>>> = bound
                .ordered_ids()
                .iter()
                .map(|&id| grads.get(id))
                .collect();
            optimizer.step(&mut params, &grad_refs);

            history.records.push(HistoryRecord::Step {
                step: global_step,
                epoch,
                bundle,
            });
        }

        if epoch % config.eval_every == 0 {
            let (srcc, plcc, rmse) =
                validation_metrics(&params, &config.model, val_manifest, &mut store)?;
            let is_best = srcc.is_some_and(|s| s > best_srcc);
            if is_best {
                let s = srcc.unwrap();
                best_srcc = s;
                best_params = params.clone();
                history.best_epoch = Some(epoch);
                history.best_srcc = Some(s);
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
            }
            history.records.push(HistoryRecord::Eval {
                epoch,
                srcc,
                plcc,
                rmse,
                is_best,
            });
            if evals_since_best >= config.early_stop_patience {
                history.stopped_early = true;
                break 'epochs;
            }
        }
    }

    if history.best_epoch.is_none() {
        // no evaluation ran; fall back to the final parameters
        best_params = params.clone();
    }
    Ok(TrainOutcome {
        params,
        best_params,
        history,
    })
}

/// Asserts that running a validation pass does not mutate parameters;
/// used by tests and kept here so the check matches the real pass.
pub fn validation_is_pure(
    params: &ModelParams,
    config: &ModelConfig,
    manifest: &DatasetManifest,
) -> Result<bool> {
    let before = params.clone();
    let mut store = ImageStore::new();
    let _ = validation_metrics(params, config, manifest, &mut store)?;
    Ok(before == *params)
}
