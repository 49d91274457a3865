//! Forward passes: graph builders shared by training and inference, and
//! the value-level operations built on them.

use std::collections::HashMap;

use crate::autodiff::{Graph, NodeId};
use crate::data::{extract_patches, SciImage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{ModelConfig, ModelParams};

/// Spatial size of the adaptive pooling grid.
pub const POOL_GRID: usize = 3;

/// Parameter tensors bound into a graph as nodes.
pub struct BoundParams<T: Scalar> {
    ids: HashMap<String, NodeId>,
    /// Node ids in `ModelParams::entries()` order, for aligning
    /// gradients with the optimizer state.
    ordered: Vec<NodeId>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> BoundParams<T> {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn ordered_ids(&self) -> &[NodeId] {
        &self.ordered
    }
}

/// Binds pre-converted parameter tensors into the graph; `trainable`
/// controls whether gradients flow to them.
pub fn bind_param_tensors<T: Scalar>(
    graph: &mut Graph<T>,
    entries: &[(String, Tensor<T>)],
    trainable: bool,
) -> BoundParams<T> {
    let mut ids = HashMap::new();
    let mut ordered = Vec::with_capacity(entries.len());
    for (name, tensor) in entries {
        let id = if trainable {
            graph.leaf(tensor.clone())
        } else {
            graph.constant(tensor.clone())
        };
        ids.insert(name.clone(), id);
        ordered.push(id);
    }
    BoundParams {
        ids,
        ordered,
        _marker: std::marker::PhantomData,
    }
}

/// Binds every parameter into the graph; `trainable` controls whether
/// gradients flow to them.
pub fn bind_params<T: Scalar>(
    graph: &mut Graph<T>,
    params: &ModelParams,
    trainable: bool,
) -> BoundParams<T> {
    let entries: Vec<(String, Tensor<T>)> = params
        .entries()
        .iter()
        .map(|(n, t)| (n.clone(), t.cast::<T>()))
        .collect();
    bind_param_tensors(graph, &entries, trainable)
}

/// The five stage maps of the multi-scale generator. Each stage applies
/// its 3x3 convolutions with ReLU and one 2x max-pool, so stage `t`
/// halves the spatial size of stage `t-1`.
pub fn stage_maps<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    config: &ModelConfig,
    patches: NodeId,
) -> Vec<NodeId> {
    let mut x = patches;
    let mut maps = Vec::with_capacity(5);
    for (t, &convs) in config.convs_per_stage.iter().enumerate() {
        for i in 0..convs {
            let w = params.id(&format!("gen.stage{}.conv{}.weight", t + 1, i + 1));
            let b = params.id(&format!("gen.stage{}.conv{}.bias", t + 1, i + 1));
            x = graph.conv2d(x, w, b);
            x = graph.relu(x);
        }
        x = graph.maxpool2(x);
        maps.push(x);
    }
    maps
}

/// Pools each stage map to a 3x3 grid by adaptive mean and std pooling,
/// concatenates along channels, fuses with two 1x1 convolutions (ReLU
/// between) and averages the grid away: `[p, feature_dim]`.
pub fn quality_feature_from_maps<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    maps: &[NodeId],
) -> NodeId {
    let mut pooled = Vec::with_capacity(2 * maps.len());
    for &m in maps {
        pooled.push(graph.adaptive_mean_pool(m, POOL_GRID));
        pooled.push(graph.adaptive_std_pool(m, POOL_GRID));
    }
    let cat = graph.concat_channels(&pooled);
    let f = graph.conv2d(cat, params.id("fuse.conv1.weight"), params.id("fuse.conv1.bias"));
    let f = graph.relu(f);
    let f = graph.conv2d(f, params.id("fuse.conv2.weight"), params.id("fuse.conv2.bias"));
    graph.global_avg_pool(f)
}

fn head<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    prefix: &str,
    x: NodeId,
) -> NodeId {
    let h = graph.affine(
        x,
        params.id(&format!("{prefix}.fc1.weight")),
        params.id(&format!("{prefix}.fc1.bias")),
    );
    let h = graph.relu(h);
    let h = graph.affine(
        h,
        params.id(&format!("{prefix}.fc2.weight")),
        params.id(&format!("{prefix}.fc2.bias")),
    );
    graph.relu(h)
}

/// Independent semantic and distortion heads (two fully connected layers
/// with ReLU after each; no shared parameters).
pub fn disentangle_nodes<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    quality: NodeId,
) -> (NodeId, NodeId) {
    let semantic = head(graph, params, "head.semantic", quality);
    let distortion = head(graph, params, "head.distortion", quality);
    (semantic, distortion)
}

/// Channel attention from a per-image semantic feature: fc + ReLU, fc +
/// sigmoid, componentwise in (0, 1).
pub fn attention_nodes<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    semantic: NodeId,
) -> NodeId {
    let h = graph.affine(semantic, params.id("attn.fc1.weight"), params.id("attn.fc1.bias"));
    let h = graph.relu(h);
    let h = graph.affine(h, params.id("attn.fc2.weight"), params.id("attn.fc2.bias"));
    graph.sigmoid(h)
}

/// Quality regressor: one fully connected layer to a scalar, then ReLU.
/// Input is `[b, feature_dim]`, output `[b]`.
pub fn regressor_nodes<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    x: NodeId,
) -> NodeId {
    let rows = graph.value(x).shape()[0];
    let q = graph.affine(x, params.id("reg.fc.weight"), params.id("reg.fc.bias"));
    let q = graph.reshape(q, &[rows]);
    graph.relu(q)
}

/// Distortion classifier: a single affine layer over per-patch
/// distortion features; softmax lives in the loss.
pub fn classifier_nodes<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    distortion: NodeId,
) -> NodeId {
    graph.affine(distortion, params.id("cls.fc.weight"), params.id("cls.fc.bias"))
}

fn check_patches(patches: &Tensor<f32>, config: &ModelConfig) -> Result<()> {
    let s = config.patch_size;
    match patches.shape() {
        [_, 3, h, w] if *h == s && *w == s => {}
        other => {
            return Err(Error::Shape(format!(
                "expected patches [p, 3, {s}, {s}], got {other:?}"
            )))
        }
    }
    if !patches.all_finite() {
        return Err(Error::Numeric("non-finite patch values".into()));
    }
    Ok(())
}

/// Per-patch semantic and distortion features.
#[derive(Clone, Debug)]
pub struct DisentangledFeatures {
    pub semantic: Tensor<f32>,
    pub distortion: Tensor<f32>,
}

/// The five stage maps for a patch batch `[p, 3, s, s]`.
pub fn multiscale_features(
    patches: &Tensor<f32>,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<Tensor<f32>>> {
    check_patches(patches, config)?;
    let mut graph = Graph::<f32>::new();
    let bound = bind_params(&mut graph, params, false);
    let input = graph.constant(patches.clone());
    let maps = stage_maps(&mut graph, &bound, config, input);
    Ok(maps.into_iter().map(|id| graph.value(id).clone()).collect())
}

/// Pooled quality feature `[p, feature_dim]` from precomputed stage maps.
pub fn pooled_quality_feature(
    maps: &[Tensor<f32>],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Tensor<f32>> {
    if maps.len() != 5 {
        return Err(Error::Shape(format!("expected 5 stage maps, got {}", maps.len())));
    }
    let mut graph = Graph::<f32>::new();
    let bound = bind_params(&mut graph, params, false);
    let ids: Vec<NodeId> = maps.iter().map(|m| graph.constant(m.clone())).collect();
    let q = quality_feature_from_maps(&mut graph, &bound, &ids);
    let _ = config;
    Ok(graph.value(q).clone())
}

/// Splits a quality feature into semantic and distortion features.
pub fn disentangle(
    quality: &Tensor<f32>,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<DisentangledFeatures> {
    if quality.shape().len() != 2 || quality.shape()[1] != config.feature_dim {
        return Err(Error::Shape(format!(
            "expected [p, {}], got {:?}",
            config.feature_dim,
            quality.shape()
        )));
    }
    let mut graph = Graph::<f32>::new();
    let bound = bind_params(&mut graph, params, false);
    let q = graph.constant(quality.clone());
    let (sem, dis) = disentangle_nodes(&mut graph, &bound, q);
    Ok(DisentangledFeatures {
        semantic: graph.value(sem).clone(),
        distortion: graph.value(dis).clone(),
    })
}

/// Attention weights in (0, 1) for a per-image semantic feature `[d]`.
pub fn attention_weights(semantic: &Tensor<f32>, params: &ModelParams) -> Result<Tensor<f32>> {
    let d = params.get("attn.fc1.weight").shape()[0];
    if semantic.len() != d {
        return Err(Error::Shape(format!(
            "expected a {d}-vector, got {:?}",
            semantic.shape()
        )));
    }
    let mut graph = Graph::<f32>::new();
    let bound = bind_params(&mut graph, params, false);
    let s = graph.constant(semantic.clone().reshaped(&[1, d]));
    let a = attention_nodes(&mut graph, &bound, s);
    Ok(graph.value(a).clone().reshaped(&[d]))
}

/// Per-patch distortion-class logits `[p, num_classes]`.
pub fn classify_distortion(
    distortion: &Tensor<f32>,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Tensor<f32>> {
    if distortion.shape().len() != 2 || distortion.shape()[1] != config.feature_dim {
        return Err(Error::Shape(format!(
            "expected [p, {}], got {:?}",
            config.feature_dim,
            distortion.shape()
        )));
    }
    let mut graph = Graph::<f32>::new();
    let bound = bind_params(&mut graph, params, false);
    let x = graph.constant(distortion.clone());
    let logits = classifier_nodes(&mut graph, &bound, x);
    Ok(graph.value(logits).clone())
}

/// Builds the full single-image quality pipeline on a graph and returns
/// the scalar prediction node. `patches` must already be a node holding
/// `[p, 3, s, s]`.
pub fn predict_quality_nodes<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    config: &ModelConfig,
    patches: NodeId,
) -> NodeId {
    let maps = stage_maps(graph, params, config, patches);
    let quality = quality_feature_from_maps(graph, params, &maps);
    let (semantic, distortion) = disentangle_nodes(graph, params, quality);
    let mu = graph.group_mean(distortion, 1);
    let sigma = graph.group_std(distortion, 1);
    let phi = graph.kl_std_normal(mu, sigma);
    let sem_mean = graph.group_mean(semantic, 1);
    let attn = attention_nodes(graph, params, sem_mean);
    let gated = graph.mul(attn, phi);
    regressor_nodes(graph, params, gated)
}

/// Predicted quality of a whole image: every non-overlapping patch is
/// scored through the feature statistics pipeline. Non-negative; higher
/// means worse quality (DMOS-like).
pub fn predict_quality(
    image: &SciImage,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<f32> {
    let patches = extract_patches(image, config.patch_size)?;
    check_patches(&patches, config)?;
    let mut graph = Graph::<f32>::new();
    let bound = bind_params(&mut graph, params, false);
    let input = graph.constant(patches);
    let q = predict_quality_nodes(&mut graph, &bound, config, input);
    Ok(graph.value(q).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_sci;
    use crate::rng::{rng_for, streams};
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            stage_channels: [4, 4, 4, 4, 4],
            convs_per_stage: [1, 1, 1, 1, 1],
            feature_dim: 16,
            num_classes: 3,
            patch_size: 32,
        }
    }

    fn noise_patches(p: usize, seed: u64) -> Tensor<f32> {
        let mut rng = rng_for(seed, streams::GRAD_CHECK, 50);
        let data = (0..p * 3 * 32 * 32).map(|_| rng.gen::<f32>()).collect();
        Tensor::from_vec(&[p, 3, 32, 32], data)
    }

    #[test]
    fn stage_maps_have_halving_spatial_sizes() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let maps = multiscale_features(&noise_patches(4, 1), &params, &cfg).unwrap();
        let sizes: Vec<usize> = maps.iter().map(|m| m.shape()[2]).collect();
        assert_eq!(sizes, vec![16, 8, 4, 2, 1]);
        for m in &maps {
            assert_eq!(m.shape()[0], 4);
            assert_eq!(m.shape()[1], 4);
        }
    }

    #[test]
    fn forward_is_pure() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 2).unwrap();
        let patches = noise_patches(2, 9);
        let a = multiscale_features(&patches, &params, &cfg).unwrap();
        let b = multiscale_features(&patches, &params, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn quality_feature_has_feature_dim_columns() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 3).unwrap();
        let maps = multiscale_features(&noise_patches(3, 2), &params, &cfg).unwrap();
        let q = pooled_quality_feature(&maps, &params, &cfg).unwrap();
        assert_eq!(q.shape(), &[3, 16]);
    }

    #[test]
    fn default_dims_produce_512_feature() {
        // one patch through the default-width model
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, 0).unwrap();
        let maps = multiscale_features(&noise_patches(1, 3), &params, &cfg).unwrap();
        let q = pooled_quality_feature(&maps, &params, &cfg).unwrap();
        assert_eq!(q.shape(), &[1, 512]);
        let feats = disentangle(&q, &params, &cfg).unwrap();
        assert_eq!(feats.semantic.shape(), &[1, 512]);
        assert_eq!(feats.distortion.shape(), &[1, 512]);
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let mut patches = noise_patches(1, 4);
        patches.data_mut()[0] = f32::NAN;
        assert!(matches!(
            multiscale_features(&patches, &params, &cfg),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn heads_share_no_parameters() {
        let cfg = tiny_config();
        let mut params = ModelParams::init(&cfg, 5).unwrap();
        let q = {
            let maps = multiscale_features(&noise_patches(2, 5), &params, &cfg).unwrap();
            pooled_quality_feature(&maps, &params, &cfg).unwrap()
        };
        let before = disentangle(&q, &params, &cfg).unwrap();
        // perturb the semantic head only
        for (name, t) in params.entries_mut() {
            if name == "head.semantic.fc1.weight" {
                t.data_mut()[0] += 0.5;
            }
        }
        let after = disentangle(&q, &params, &cfg).unwrap();
        assert_eq!(before.distortion.data(), after.distortion.data());
        assert_ne!(before.semantic.data(), after.semantic.data());
    }

    #[test]
    fn attention_is_strictly_inside_unit_interval() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 6).unwrap();
        let mut rng = rng_for(1, streams::GRAD_CHECK, 51);
        for trial in 0..5u64 {
            let v: Vec<f32> = (0..16).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect();
            let a = attention_weights(&Tensor::from_vec(&[16], v), &params).unwrap();
            assert_eq!(a.shape(), &[16]);
            assert!(
                a.data().iter().all(|&x| x > 0.0 && x < 1.0),
                "trial {trial}: attention left (0,1)"
            );
        }
    }

    #[test]
    fn attention_zero_input_is_sigmoid_of_bias() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 7).unwrap();
        let a = attention_weights(&Tensor::zeros(&[16]), &params).unwrap();
        // zero biases at init: sigmoid(0) = 0.5 on every channel
        assert!(a.data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn attention_distinguishes_inputs() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 8).unwrap();
        let mut rng = rng_for(2, streams::GRAD_CHECK, 52);
        let u: Vec<f32> = (0..16).map(|_| rng.gen::<f32>()).collect();
        let v: Vec<f32> = (0..16).map(|_| rng.gen::<f32>()).collect();
        let au = attention_weights(&Tensor::from_vec(&[16], u), &params).unwrap();
        let av = attention_weights(&Tensor::from_vec(&[16], v), &params).unwrap();
        assert_ne!(au.data(), av.data());
    }

    #[test]
    fn classifier_logits_shape_and_zero_input() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 9).unwrap();
        let logits = classify_distortion(&Tensor::zeros(&[4, 16]), &params, &cfg).unwrap();
        assert_eq!(logits.shape(), &[4, 3]);
        // zero input, zero bias: logits are the bias row
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert!(logits.all_finite());
    }

    #[test]
    fn predict_quality_nonnegative_and_deterministic() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 10).unwrap();
        let img = synthesize_sci(96, 96, 3).unwrap();
        let a = predict_quality(&img, &params, &cfg).unwrap();
        let b = predict_quality(&img, &params, &cfg).unwrap();
        assert!(a >= 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn predict_quality_rejects_undersized_images() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 11).unwrap();
        let img = SciImage::new(20, 20);
        assert!(matches!(
            predict_quality(&img, &params, &cfg),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn predict_quality_matches_manual_composition() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 12).unwrap();
        let img = synthesize_sci(96, 96, 4).unwrap();
        let direct = predict_quality(&img, &params, &cfg).unwrap();

        // compose the exported sub-operations on the same patch set
        let patches = extract_patches(&img, cfg.patch_size).unwrap();
        let maps = multiscale_features(&patches, &params, &cfg).unwrap();
        let quality = pooled_quality_feature(&maps, &params, &cfg).unwrap();
        let feats = disentangle(&quality, &params, &cfg).unwrap();
        let p = feats.distortion.shape()[0];
        let (mu, sigma) =
            crate::stats::group_mean_std(feats.distortion.data(), 1, p, cfg.feature_dim);
        let phi = crate::stats::kl_to_standard_normal(&mu, &sigma);
        let (sem_mean, _) =
            crate::stats::group_mean_std(feats.semantic.data(), 1, p, cfg.feature_dim);
        let attn = attention_weights(
            &Tensor::from_vec(&[cfg.feature_dim], sem_mean),
            &params,
        )
        .unwrap();
        let gated: Vec<f32> = attn.data().iter().zip(&phi).map(|(&a, &p)| a * p).collect();
        let w = params.get("reg.fc.weight");
        let b = params.get("reg.fc.bias");
        let mut acc = b.data()[0];
        for (i, &g) in gated.iter().enumerate() {
            if g != 0.0 {
                acc += g * w.data()[i];
            }
        }
        let manual = acc.max(0.0);
        assert_eq!(direct, manual);
    }
}
