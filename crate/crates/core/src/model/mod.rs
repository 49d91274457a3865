//! The learnable model: a five-stage convolutional feature generator
//! with mean/std spatial pooling, two disentanglement heads (semantic
//! and distortion), a channel attention generator, a quality regressor
//! and a distortion classifier.
//!
//! # Parameter namespace
//!
//! Checkpoints address parameters by these stable names:
//!
//! ```text
//! gen.stage{t}.conv{i}.weight|bias   t in 1..=5, i in 1..=convs_per_stage[t]
//! fuse.conv1.weight|bias             1x1 conv, concat channels -> feature_dim
//! fuse.conv2.weight|bias             1x1 conv, feature_dim -> feature_dim
//! head.semantic.fc1|fc2.weight|bias
//! head.distortion.fc1|fc2.weight|bias
//! attn.fc1|fc2.weight|bias
//! reg.fc.weight|bias
//! cls.fc.weight|bias
//! ```
//!
//! Conv weights are `[c_out, c_in, k, k]`; fully connected weights are
//! `[d_in, d_out]` with a `[d_out]` bias.

pub mod forward;

pub use forward::{
    attention_weights, classify_distortion, disentangle, multiscale_features,
    pooled_quality_feature, predict_quality, DisentangledFeatures,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};
use crate::tensor::Tensor;

/// Feature dimensions studied for the pooled quality feature; 512 is the
/// default. Other values are accepted (small ones are useful for tests).
pub const CANONICAL_FEATURE_DIMS: [usize; 4] = [256, 512, 1792, 2048];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ModelConfig {
    /// Output channels of each generator stage.
    pub stage_channels: [usize; 5],
    /// Convolutions per stage (3x3, stride 1, ReLU each), one 2x max-pool
    /// at the end of every stage.
    pub convs_per_stage: [usize; 5],
    /// Dimension of the pooled quality feature and both head outputs.
    pub feature_dim: usize,
    /// Distortion classes of the classifier head.
    pub num_classes: usize,
    /// Square patch side; must be divisible by 32 so five pools land on
    /// an integer size.
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_channels: [32, 64, 128, 256, 256],
            convs_per_stage: [2, 2, 2, 2, 2],
            feature_dim: 512,
            num_classes: 5,
            patch_size: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("stage channels must be positive".into()));
        }
        if self.convs_per_stage.iter().any(|&c| c == 0) {
            return Err(Error::Config("need at least one conv per stage".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 distortion classes".into()));
        }
        if self.patch_size == 0 || self.patch_size % 32 != 0 {
            return Err(Error::Config(format!(
                "patch_size {} must be a positive multiple of 32",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Channels after concatenating mean- and std-pooled maps of all
    /// five stages.
    pub fn concat_channels(&self) -> usize {
        2 * self.stage_channels.iter().sum::<usize>()
    }
}

enum ParamKind {
    ConvWeight { c_out: usize, c_in: usize, k: usize },
    FcWeight { d_in: usize, d_out: usize },
    Bias { len: usize, fan_in: usize },
}

struct ParamSpec {
    name: String,
    kind: ParamKind,
}

fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let push_conv = |name: String, c_out: usize, c_in: usize, k: usize, specs: &mut Vec<ParamSpec>| {
        specs.push(ParamSpec {
            name: format!("{name}.weight"),
            kind: ParamKind::ConvWeight { c_out, c_in, k },
        });
        specs.push(ParamSpec {
            name: format!("{name}.bias"),
            kind: ParamKind::Bias {
                len: c_out,
                fan_in: c_in * k * k,
            },
        });
    };
    let mut c_in = 3;
    for (t, (&c_out, &convs)) in config
        .stage_channels
        .iter()
        .zip(&config.convs_per_stage)
        .enumerate()
    {
        for i in 0..convs {
            let cin_i = if i == 0 { c_in } else { c_out };
            push_conv(
                format!("gen.stage{}.conv{}", t + 1, i + 1),
                c_out,
                cin_i,
                3,
                &mut specs,
            );
        }
        c_in = c_out;
    }
    let d = config.feature_dim;
    push_conv("fuse.conv1".into(), d, config.concat_channels(), 1, &mut specs);
    push_conv("fuse.conv2".into(), d, d, 1, &mut specs);

    let push_fc = |name: &str, d_in: usize, d_out: usize, specs: &mut Vec<ParamSpec>| {
        specs.push(ParamSpec {
            name: format!("{name}.weight"),
            kind: ParamKind::FcWeight { d_in, d_out },
        });
        specs.push(ParamSpec {
            name: format!("{name}.bias"),
            kind: ParamKind::Bias {
                len: d_out,
                fan_in: d_in,
            },
        });
    };
    push_fc("head.semantic.fc1", d, d, &mut specs);
    push_fc("head.semantic.fc2", d, d, &mut specs);
    push_fc("head.distortion.fc1", d, d, &mut specs);
    push_fc("head.distortion.fc2", d, d, &mut specs);
    push_fc("attn.fc1", d, d, &mut specs);
    push_fc("attn.fc2", d, d, &mut specs);
    push_fc("reg.fc", d, 1, &mut specs);
    push_fc("cls.fc", d, config.num_classes, &mut specs);
    specs
}

/// Named parameter tensors in a stable, documented order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor<f32>)>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_inner(config, seed, false)
    }

    /// Fan-in scaled uniform weights *and* biases. Zero biases put every
    /// pre-activation of a dead path exactly on the ReLU kink, which the
    /// finite-difference check must avoid; training never uses this.
    pub fn init_probe(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_inner(config, seed, true)
    }

    fn init_inner(config: &ModelConfig, seed: u64, random_bias: bool) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(config);
        let mut entries = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let mut rng = rng_for(seed, streams::PARAM_INIT, i as u64);
            let tensor = match spec.kind {
                ParamKind::ConvWeight { c_out, c_in, k } => {
                    let bound = (1.0 / (c_in * k * k) as f64).sqrt();
                    uniform(&mut rng, &[c_out, c_in, k, k], bound)
                }
                ParamKind::FcWeight { d_in, d_out } => {
                    if !random_bias && spec.name == "reg.fc.weight" {
                        // the quality regressor ends in a ReLU; zero
                        // weights with a positive bias keep its output
                        // alive at initialization regardless of the
                        // (non-negative) gated input scale
                        Tensor::zeros(&[d_in, d_out])
                    } else {
                        let bound = (1.0 / d_in as f64).sqrt();
                        uniform(&mut rng, &[d_in, d_out], bound)
                    }
                }
                ParamKind::Bias { len, fan_in } => {
                    if random_bias {
                        let bound = (1.0 / fan_in as f64).sqrt();
                        uniform(&mut rng, &[len], bound)
                    } else if spec.name == "reg.fc.bias" {
                        Tensor::full(&[len], 1.0)
                    } else {
                        Tensor::zeros(&[len])
                    }
                }
            };
            entries.push((spec.name.clone(), tensor));
        }
        Ok(Self { entries })
    }

    pub fn from_entries(entries: Vec<(String, Tensor<f32>)>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str) -> &Tensor<f32> {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .1
    }

    pub fn entries(&self) -> &[(String, Tensor<f32>)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(String, Tensor<f32>)] {
        &mut self.entries
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Shape-compatibility check against a config's parameter specs.
    pub fn matches_config(&self, config: &ModelConfig) -> bool {
        let specs = param_specs(config);
        specs.len() == self.entries.len()
            && specs.iter().zip(&self.entries).all(|(s, (n, t))| {
                let shape_ok = match s.kind {
                    ParamKind::ConvWeight { c_out, c_in, k } => {
                        t.shape() == [c_out, c_in, k, k]
                    }
                    ParamKind::FcWeight { d_in, d_out } => t.shape() == [d_in, d_out],
                    ParamKind::Bias { len, .. } => t.shape() == [len],
                };
                s.name == *n && shape_ok
            })
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<f32> {
    let data = (0..shape.iter().product())
        .map(|_| ((rng.gen::<f64>() * 2.0 - 1.0) * bound) as f32)
        .collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            stage_channels: [4, 4, 4, 4, 4],
            convs_per_stage: [1, 1, 1, 1, 1],
            feature_dim: 16,
            num_classes: 3,
            patch_size: 32,
        }
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let cfg = tiny_config();
        let a = ModelParams::init(&cfg, 3).unwrap();
        let b = ModelParams::init(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.get("gen.stage1.conv1.bias").data().iter().all(|&v| v == 0.0));
        assert!(a.get("cls.fc.bias").data().iter().all(|&v| v == 0.0));
        let c = ModelParams::init(&cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn namespace_matches_config() {
        let cfg = tiny_config();
        let p = ModelParams::init(&cfg, 0).unwrap();
        assert!(p.matches_config(&cfg));
        assert_eq!(p.get("cls.fc.weight").shape(), &[16, 3]);
        assert_eq!(p.get("fuse.conv1.weight").shape(), &[16, 2 * 20, 1, 1]);
        assert_eq!(p.get("reg.fc.weight").shape(), &[16, 1]);
        let other = ModelConfig {
            feature_dim: 32,
            ..tiny_config()
        };
        assert!(!p.matches_config(&other));
    }

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
        assert_eq!(ModelConfig::default().concat_channels(), 2 * (32 + 64 + 128 + 256 + 256));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = tiny_config();
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.patch_size = 48;
        assert!(cfg.validate().is_err());
    }
}
