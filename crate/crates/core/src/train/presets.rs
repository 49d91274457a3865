//! Committed benchmark presets.
//!
//! The smoke benchmark is the repository's seeded end-to-end check: a
//! small synthetic corpus and a down-sized model that trains on one CPU
//! in minutes. Numbers here are part of the repo's regression contract;
//! change them only together with the acceptance suite.

use crate::data::{SynthCorpusSpec, SyntheticDistortion};
use crate::losses::HyperParams;
use crate::model::ModelConfig;

use super::TrainConfig;

/// Corpus: 8 pristine screen-content images, 3 distortion types at 3
/// levels each (72 distorted images), 256x256.
pub fn smoke_corpus_spec() -> SynthCorpusSpec {
    SynthCorpusSpec {
        name: "smoke".into(),
        references: 8,
        types: vec![
            SyntheticDistortion::GaussianBlur,
            SyntheticDistortion::MotionBlur,
            SyntheticDistortion::ContrastChange,
        ],
        levels: 3,
        width: 256,
        height: 256,
        seed: 20,
    }
}

/// Split seed for the 60/20/20 content split of the smoke corpus.
pub const SMOKE_SPLIT_SEED: u64 = 1;

/// Training setup: 30 epochs, 8 triplets per batch, 16 patches per
/// image. The model is a narrow variant of the default architecture and
/// the learning rate is raised accordingly; everything else keeps the
/// protocol defaults.
pub fn smoke_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-3,
        weight_decay: 1e-4,
        batch_triplets: 8,
        patches_per_image: 16,
        max_epochs: 30,
        seed: 7,
        eval_every: 1,
        early_stop_patience: 30,
        hyper: HyperParams::default(),
        model: ModelConfig {
            stage_channels: [8, 12, 16, 24, 24],
            convs_per_stage: [1, 1, 1, 1, 1],
            feature_dim: 32,
            num_classes: 3,
            patch_size: 32,
        },
    }
}
