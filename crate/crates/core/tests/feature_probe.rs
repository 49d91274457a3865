//! Diagnostic (ignored): does the pooled quality feature respond to
//! distortion at the raw-trunk level? Prints per-image cross-patch
//! statistics of F-qua for pristine vs distorted versions of one image.
//! Run: cargo test --test feature_probe -- --ignored --nocapture

use sciqa_core::data::{apply_distortion, extract_patches, synthesize_sci, SyntheticDistortion};
use sciqa_core::model::{multiscale_features, pooled_quality_feature, ModelConfig, ModelParams};
use sciqa_core::stats::group_mean_std;
use sciqa_core::train::presets::smoke_train_config;

fn qua_stats(img: &sciqa_core::data::SciImage, params: &ModelParams, cfg: &ModelConfig) -> (Vec<f32>, Vec<f32>) {
    let patches = extract_patches(img, cfg.patch_size).unwrap();
    let maps = multiscale_features(&patches, params, cfg).unwrap();
    let q = pooled_quality_feature(&maps, params, cfg).unwrap();
    let p = q.shape()[0];
    group_mean_std(q.data(), 1, p, cfg.feature_dim)
}

#[test]
#[ignore = "diagnostic"]
fn trunk_response() {
    let cfg = smoke_train_config().model;
    let params = ModelParams::init(&cfg, 7).unwrap();
    let img = synthesize_sci(256, 256, sciqa_core::rng::mix_seed(20, sciqa_core::rng::streams::SYNTH, 0)).unwrap();
    let (mu_p, sg_p) = qua_stats(&img, &params, &cfg);

    for kind in [
        SyntheticDistortion::GaussianNoise,
        SyntheticDistortion::GaussianBlur,
        SyntheticDistortion::BlockCoding,
        SyntheticDistortion::MotionBlur,
        SyntheticDistortion::ContrastChange,
    ] {
        for level in [1, 3] {
            let d = apply_distortion(&img, kind, level, 99).unwrap();
            let (mu_d, sg_d) = qua_stats(&d, &params, &cfg);
            // response in units of the pristine cross-patch std
            let mut shift = 0.0f64;
            let mut ratio = 0.0f64;
            let mut max_shift = 0.0f64;
            for j in 0..cfg.feature_dim {
                let s = (sg_p[j].max(1e-6)) as f64;
                let z = ((mu_d[j] - mu_p[j]).abs() as f64) / s;
                shift += z;
                max_shift = max_shift.max(z);
                ratio += ((sg_d[j].max(1e-6) as f64) / s).ln().abs();
            }
            shift /= cfg.feature_dim as f64;
            ratio /= cfg.feature_dim as f64;
            eprintln!(
                "{kind:?} l{level}: mean |z-shift| {shift:7.3} (max {max_shift:7.3}), mean |ln sigma ratio| {ratio:6.3}"
            );
        }
    }
}
