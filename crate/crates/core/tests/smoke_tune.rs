//! Manual tuning harness for the smoke benchmark; ignored by default.
//! Run: cargo test --test smoke_tune -- --ignored --nocapture

use sciqa_core::data::{normalize_scores, split_by_reference, write_synthetic_corpus, SciImage};
use sciqa_core::eval::srcc;
use sciqa_core::model::predict_quality;
use sciqa_core::report::median;
use sciqa_core::train::presets::{smoke_corpus_spec, smoke_train_config, SMOKE_SPLIT_SEED};
use sciqa_core::train::{train, HistoryRecord};

#[test]
#[ignore = "tuning harness, run manually"]
fn trajectory() {
    let lr: f64 = std::env::var("SMOKE_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(0.0);
    let seed: u64 = std::env::var("SMOKE_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    let epochs: usize = std::env::var("SMOKE_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(0);

    let dir = tempfile::tempdir().unwrap();
    let corpus = write_synthetic_corpus(&smoke_corpus_spec(), dir.path()).unwrap();
    let normalized = normalize_scores(&corpus).unwrap();
    let (train_m, val_m, test_m) =
        split_by_reference(&normalized, (0.6, 0.2, 0.2), SMOKE_SPLIT_SEED).unwrap();
    let mut cfg = smoke_train_config();
    if lr > 0.0 {
        cfg.learning_rate = lr;
    }
    if seed > 0 {
        cfg.seed = seed;
    }
    if epochs > 0 {
        cfg.max_epochs = epochs;
    }
    eprintln!("lr={} seed={} epochs={}", cfg.learning_rate, cfg.seed, cfg.max_epochs);
    let t0 = std::time::Instant::now();
    let outcome = train(&train_m, &val_m, &cfg).unwrap();
    eprintln!("train took {:.0}s", t0.elapsed().as_secs_f64());

    for epoch in 1..=cfg.max_epochs {
        let mae = outcome.history.epoch_mean_mae(epoch).unwrap_or(f64::NAN);
        let val = outcome.history.records.iter().find_map(|r| match r {
            HistoryRecord::Eval { epoch: e, srcc, .. } if *e == epoch => Some(*srcc),
            _ => None,
        });
        eprintln!("epoch {epoch:2}: mae {mae:7.2}  val_srcc {val:?}");
    }

    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for rec in test_m.distorted_records() {
        let img = SciImage::load(&test_m.resolve_path(rec)).unwrap();
        pred.push(predict_quality(&img, &outcome.best_params, &cfg.model).unwrap() as f64);
        gt.push(rec.score.unwrap());
    }
    eprintln!("test srcc(best) = {:?}", srcc(&pred, &gt));

    let report =
        sciqa_core::report::stats_report(&outcome.best_params, &cfg.model, &test_m, 20).unwrap();
    let pri: Vec<f64> = report.rows.iter().filter(|r| r.distortion_level == 0).map(|r| r.phi_sum).collect();
    let sev: Vec<f64> = report.rows.iter().filter(|r| r.distortion_level == 3).map(|r| r.phi_sum).collect();
    eprintln!("phi medians: pristine {:.2} vs level-3 {:.2}", median(&pri), median(&sev));

    // final-params predictions on a slice of the train set
    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    for rec in train_m.distorted_records().take(27) {
        let img = SciImage::load(&train_m.resolve_path(rec)).unwrap();
        let q = predict_quality(&img, &outcome.params, &cfg.model).unwrap() as f64;
        rows.push((rec.image_path.clone(), q, rec.score.unwrap()));
    }
    for (name, q, g) in &rows {
        eprintln!("train {name}: pred {q:7.2} gt {g:7.2}");
    }
    let p: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let g: Vec<f64> = rows.iter().map(|r| r.2).collect();
    eprintln!("train-slice srcc(final) = {:?}", srcc(&p, &g));

    // capability probe: what would the optimal linear readout of the
    // learned gated features achieve on the train set?
    use sciqa_core::data::extract_patches;
    use sciqa_core::model::{attention_weights, disentangle, multiscale_features, pooled_quality_feature};
    use sciqa_core::stats::{distribution_stats, group_mean_std};
    use sciqa_core::tensor::Tensor;
    let d = cfg.model.feature_dim;
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for rec in train_m.distorted_records() {
        let img = SciImage::load(&train_m.resolve_path(rec)).unwrap();
        let patches = extract_patches(&img, cfg.model.patch_size).unwrap();
        let maps = multiscale_features(&patches, &outcome.params, &cfg.model).unwrap();
        let q = pooled_quality_feature(&maps, &outcome.params, &cfg.model).unwrap();
        let f = disentangle(&q, &outcome.params, &cfg.model).unwrap();
        let st = distribution_stats(&f.distortion).unwrap();
        let np = f.semantic.shape()[0];
        let (sm, _) = group_mean_std(f.semantic.data(), 1, np, d);
        let a = attention_weights(&Tensor::from_vec(&[d], sm), &outcome.params).unwrap();
        let mut x: Vec<f64> = a
            .data()
            .iter()
            .zip(&st.phi)
            .map(|(&av, &pv)| (av * pv) as f64)
            .collect();
        x.push(1.0);
        xs.push(x);
        ys.push(rec.score.unwrap());
    }
    // ridge-regularized normal equations
    let k = d + 1;
    let mut ata = vec![0.0f64; k * k];
    let mut aty = vec![0.0f64; k];
    for (x, &y) in xs.iter().zip(&ys) {
        for i in 0..k {
            aty[i] += x[i] * y;
            for j in 0..k {
                ata[i * k + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..k {
        ata[i * k + i] += 1e-6;
    }
    // gaussian elimination
    let mut m = ata;
    let mut b = aty;
    for col in 0..k {
        let piv = (col..k).max_by(|&a1, &a2| m[a1 * k + col].abs().partial_cmp(&m[a2 * k + col].abs()).unwrap()).unwrap();
        m.swap(piv * k + col, col * k + col);
        for j in 0..k { m.swap(piv * k + j, col * k + j); }
        b.swap(piv, col);
        let pv = m[col * k + col];
        for r in 0..k {
            if r != col && m[r * k + col] != 0.0 {
                let f = m[r * k + col] / pv;
                for j in 0..k { m[r * k + j] -= f * m[col * k + j]; }
                b[r] -= f * b[col];
            }
        }
    }
    let w: Vec<f64> = (0..k).map(|i| b[i] / m[i * k + i]).collect();
    let mut mae_opt = 0.0;
    let mut fitted = Vec::new();
    for (x, &y) in xs.iter().zip(&ys) {
        let pred: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        mae_opt += (pred - y).abs();
        fitted.push(pred);
    }
    mae_opt /= ys.len() as f64;
    eprintln!("optimal-linear-readout train MAE = {mae_opt:.2}, srcc = {:?}", srcc(&fitted, &ys));
}
