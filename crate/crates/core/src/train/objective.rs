//! Assembly of the full training objective over one triplet batch.
//!
//! One forward pass runs all three patch roles (distorted, reference,
//! auxiliary) through the shared feature generator and heads; the loss
//! terms then read slices of the disentangled features:
//!
//! * triplet margin on per-image mean semantic features,
//! * MMD between normalized distorted-image distortion features and a
//!   standard-normal reference draw,
//! * cross-entropy of the distortion classifier on distorted patches,
//! * MAE of the attention-gated KL-deviation regression,
//! * squared-norm regularizers pushing reference and auxiliary feature
//!   statistics towards the standard normal (batch means).

use crate::autodiff::{Graph, NodeId};
use crate::data::TripletBatch;
use crate::error::Result;
use crate::losses::{total_loss, HyperParams, LossBundle, LossComponents};
use crate::model::forward::{
    attention_nodes, classifier_nodes, disentangle_nodes, quality_feature_from_maps,
    regressor_nodes, stage_maps, BoundParams,
};
use crate::model::ModelConfig;
use crate::scalar::Scalar;
use crate::stats;
use crate::tensor::Tensor;

/// Node ids of the objective's components and total.
pub struct ObjectiveGraph<T> {
    pub mae: NodeId,
    pub trip: NodeId,
    pub mmd: NodeId,
    pub cls: NodeId,
    pub reg_rd: NodeId,
    pub reg_ad: NodeId,
    pub reg_diff: NodeId,
    pub total: NodeId,
    /// Bandwidths actually used by the MMD node.
    pub bandwidths: Vec<T>,
}

/// Builds the objective on `graph`. `gauss_ref` is the standard-normal
/// reference sample (same shape as the pooled normalized features).
/// `fixed_bandwidths` freezes the MMD kernel bandwidths (the gradient
/// check needs the same data-independent loss at perturbed parameters);
/// when `None` the median heuristic runs on the current batch.
pub fn build_objective<T: Scalar>(
    graph: &mut Graph<T>,
    params: &BoundParams<T>,
    config: &ModelConfig,
    batch: &TripletBatch,
    hyper: &HyperParams,
    gauss_ref: &Tensor<T>,
    fixed_bandwidths: Option<&[T]>,
) -> ObjectiveGraph<T> {
    let b = batch.triplets;
    let n = batch.patches_per_image;
    let rows = b * n;

    // single forward over [3 b n] patches: distorted, reference, auxiliary
    let mut all = Vec::with_capacity(3 * batch.distorted_patches.len());
    all.extend_from_slice(batch.distorted_patches.data());
    all.extend_from_slice(batch.reference_patches.data());
    all.extend_from_slice(batch.auxiliary_patches.data());
    let shape = batch.distorted_patches.shape();
    let patches = Tensor::from_vec(&[3 * rows, shape[1], shape[2], shape[3]], all)
        .cast::<T>();
    let input = graph.constant(patches);

    let maps = stage_maps(graph, params, config, input);
    let quality = quality_feature_from_maps(graph, params, &maps);
    let (semantic, distortion) = disentangle_nodes(graph, params, quality);

    let sem_d = graph.slice_rows(semantic, 0, rows);
    let sem_r = graph.slice_rows(semantic, rows, rows);
    let sem_a = graph.slice_rows(semantic, 2 * rows, rows);
    let dis_d = graph.slice_rows(distortion, 0, rows);
    let dis_r = graph.slice_rows(distortion, rows, rows);
    let dis_a = graph.slice_rows(distortion, 2 * rows, rows);

    // triplet on per-image mean semantic features
    let sem_d_img = graph.group_mean(sem_d, b);
    let sem_r_img = graph.group_mean(sem_r, b);
    let sem_a_img = graph.group_mean(sem_a, b);
    let pos_diff = graph.sub(sem_r_img, sem_d_img);
    let neg_diff = graph.sub(sem_r_img, sem_a_img);
    let pos = graph.row_sum_sq(pos_diff);
    let neg = graph.row_sum_sq(neg_diff);
    let gap = graph.sub(pos, neg);
    let shifted = graph.add_scalar(gap, T::from_f64c(hyper.alpha));
    let hinge = graph.relu(shifted);
    let trip = graph.mean_all(hinge);

    // distorted-image statistics feed both the MMD and the regression
    let mu_d = graph.group_mean(dis_d, b);
    let sigma_d = graph.group_std(dis_d, b);
    let phi_d = graph.kl_std_normal(mu_d, sigma_d);
    let normalized = graph.normalize_rows(dis_d, mu_d, sigma_d);
    let bandwidths: Vec<T> = match fixed_bandwidths {
        Some(bw) => bw.to_vec(),
        None => stats::median_heuristic_bandwidths(graph.value(normalized), gauss_ref),
    };
    let gref = graph.constant(gauss_ref.clone());
    let mmd = graph.mmd_gaussian(normalized, gref, &bandwidths);

    // distortion classification on distorted patches only
    let logits = classifier_nodes(graph, params, dis_d);
    let labels: Vec<usize> = batch
        .distortion_labels
        .iter()
        .flat_map(|&l| std::iter::repeat(l).take(n))
        .collect();
    let cls = graph.softmax_cross_entropy(logits, &labels);

    // quality regression: attention from mean semantics, gated KL deviation
    let attn = attention_nodes(graph, params, sem_d_img);
    let gated = graph.mul(attn, phi_d);
    let pred = regressor_nodes(graph, params, gated);
    let scores: Vec<T> = batch.scores.iter().map(|&s| T::from_f64c(s as f64)).collect();
    let mae = graph.mean_abs_error(pred, &scores);

    // statistics regularizers on the pristine roles, batch means
    let mu_r = graph.group_mean(dis_r, b);
    let sigma_r = graph.group_std(dis_r, b);
    let phi_r = graph.kl_std_normal(mu_r, sigma_r);
    let mu_a = graph.group_mean(dis_a, b);
    let sigma_a = graph.group_std(dis_a, b);
    let phi_a = graph.kl_std_normal(mu_a, sigma_a);
    let rd_rows = graph.row_sum_sq(phi_r);
    let reg_rd = graph.mean_all(rd_rows);
    let ad_rows = graph.row_sum_sq(phi_a);
    let reg_ad = graph.mean_all(ad_rows);
    let phi_diff = graph.sub(phi_r, phi_a);
    let diff_rows = graph.row_sum_sq(phi_diff);
    let reg_diff = graph.mean_all(diff_rows);

    let one = T::one();
    let total = graph.weighted_sum(&[
        (mae, one),
        (trip, T::from_f64c(hyper.lambda1)),
        (mmd, T::from_f64c(hyper.lambda2)),
        (cls, T::from_f64c(hyper.lambda3)),
        (reg_rd, one),
        (reg_ad, one),
        (reg_diff, one),
    ]);

    ObjectiveGraph {
        mae,
        trip,
        mmd,
        cls,
        reg_rd,
        reg_ad,
        reg_diff,
        total,
        bandwidths,
    }
}

/// Extracts the loss bundle from a built objective; checks finiteness
/// and (in debug builds) the exact identity against the graph total.
pub fn bundle_from_graph<T: Scalar>(
    graph: &Graph<T>,
    obj: &ObjectiveGraph<T>,
    hyper: &HyperParams,
) -> Result<LossBundle> {
    let components = LossComponents {
        mae: graph.value(obj.mae).item(),
        trip: graph.value(obj.trip).item(),
        mmd: graph.value(obj.mmd).item(),
        cls: graph.value(obj.cls).item(),
        reg_rd: graph.value(obj.reg_rd).item(),
        reg_ad: graph.value(obj.reg_ad).item(),
        reg_diff: graph.value(obj.reg_diff).item(),
    };
    let bundle = total_loss(&components, hyper)?;
    debug_assert_eq!(
        bundle.total,
        graph.value(obj.total).item().to_f64c(),
        "graph total and canonical fold disagree"
    );
    Ok(bundle)
}
