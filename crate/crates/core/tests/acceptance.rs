//! Acceptance suite: every release criterion as one test, each printing
//! a `PASS criterion-N` line with its measured numbers.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines. Criterion 9 (real-dataset benchmark) only runs
//! when a dataset manifest is supplied; see its doc comment.

mod common;

use std::time::Instant;

use sciqa_core::data::{
    load_manifest, normalize_scores, split_by_reference, write_synthetic_corpus,
};
use sciqa_core::eval::{plcc, rmse, srcc};
use sciqa_core::losses::{
    classification_loss, kl_regularizers, mae_loss, total_loss, triplet_loss, HyperParams,
    LossComponents,
};
use sciqa_core::model::predict_quality;
use sciqa_core::report::median;
use sciqa_core::rng::{rng_for, streams};
use sciqa_core::stats::{
    kl_to_standard_normal, median_heuristic_bandwidths, mmd_gaussian, normalize_distribution,
    patch_stats, sample_gaussian_reference,
};
use sciqa_core::tensor::Tensor;
use sciqa_core::train::presets::{smoke_corpus_spec, smoke_train_config, SMOKE_SPLIT_SEED};
use sciqa_core::train::{gradient_check, load_checkpoint, save_checkpoint, train, GradCheckConfig};

use rand::Rng;

/// Criterion 1: the closed-form KL deviation matches numerical
/// integration to a relative error below 1e-6 over a 25x16 grid of
/// (mu, sigma), in under 10 seconds.
#[test]
fn criterion_1_kl_closed_form_matches_quadrature() {
    let start = Instant::now();
    let mus: Vec<f64> = (0..25).map(|i| -2.0 + 4.0 * i as f64 / 24.0).collect();
    let sigmas: Vec<f64> = (0..16).map(|i| 0.25 + 3.75 * i as f64 / 15.0).collect();
    let mut max_rel = 0.0f64;
    for &mu in &mus {
        for &sigma in &sigmas {
            let closed = kl_to_standard_normal(&[mu], &[sigma])[0];
            let numeric = common::kl_numeric(mu, sigma);
            // the 1e-9 floor absorbs quadrature noise at the exact
            // minimum (0, 1) where both sides are ~0
            let rel = (closed - numeric).abs() / closed.abs().max(numeric.abs()).max(1e-9);
            max_rel = max_rel.max(rel);
        }
    }
    let elapsed = start.elapsed();
    assert!(max_rel < 1e-6, "max relative error {max_rel}");
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    // anchor values by direct substitution
    assert_eq!(kl_to_standard_normal(&[0.0f64], &[1.0])[0], 0.0);
    assert!((kl_to_standard_normal(&[1.0f64], &[1.0])[0] - 0.5).abs() < 1e-12);
    println!(
        "PASS criterion-1 kl-oracle: max_rel={max_rel:.2e} over 400 grid points in {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Criterion 2: the MMD estimator is exactly zero on identical sample
/// lists and orders mean shifts (0 < 1 < 3) for at least 19 of 20
/// seeds at n = 500, in under 30 seconds.
#[test]
fn criterion_2_mmd_zero_and_mean_shift_ordering() {
    let start = Instant::now();
    let g = sample_gaussian_reference::<f64>(200, 3, 999);
    let bw = median_heuristic_bandwidths(&g.samples, &g.samples);
    assert_eq!(mmd_gaussian(&g.samples, &g.samples, &bw).unwrap(), 0.0);

    let mut ordered = 0;
    for seed in 0..20u64 {
        let x = sample_gaussian_reference::<f64>(500, 1, 10_000 + seed).samples;
        let y0 = sample_gaussian_reference::<f64>(500, 1, 20_000 + seed).samples;
        let mut y1 = sample_gaussian_reference::<f64>(500, 1, 30_000 + seed).samples;
        y1.data_mut().iter_mut().for_each(|v| *v += 1.0);
        let mut y3 = sample_gaussian_reference::<f64>(500, 1, 40_000 + seed).samples;
        y3.data_mut().iter_mut().for_each(|v| *v += 3.0);
        let d0 = mmd_gaussian(&x, &y0, &median_heuristic_bandwidths(&x, &y0)).unwrap();
        let d1 = mmd_gaussian(&x, &y1, &median_heuristic_bandwidths(&x, &y1)).unwrap();
        let d3 = mmd_gaussian(&x, &y3, &median_heuristic_bandwidths(&x, &y3)).unwrap();
        if d0 < d1 && d1 < d3 {
            ordered += 1;
        }
    }
    let elapsed = start.elapsed();
    assert!(ordered >= 19, "ordering held for only {ordered}/20 seeds");
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "PASS criterion-2 mmd: identical-sets=0 exactly, ordering {ordered}/20 seeds in {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Criterion 3: the analytic gradient of the full objective matches
/// central finite differences at 64-bit precision on a tiny model, max
/// relative error below 1e-4 over 200 sampled parameters, in under 2
/// minutes.
#[test]
fn criterion_3_gradient_fidelity() {
    let start = Instant::now();
    let report = gradient_check(&GradCheckConfig::default()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(report.entries.len(), 200);
    assert!(
        report.passed,
        "max rel error {} over tolerance {} (noise floor {})",
        report.max_rel_error, report.tolerance, report.noise_floor
    );
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!(
        "PASS criterion-3 gradients: max_rel={:.2e} over {} params (floor {:.2e}, {} redraws) in {:.1}s",
        report.max_rel_error,
        report.entries.len(),
        report.noise_floor,
        report.redraws,
        elapsed.as_secs_f64()
    );
}

/// Criterion 4: distribution normalization standardizes random 16-patch
/// groups (per-dimension |mean| < 1e-6, sample std within 1e-3 of 1)
/// whenever all sigmas exceed 0.1, over 1000 groups.
#[test]
fn criterion_4_normalization_invariant() {
    let mut rng = rng_for(77, streams::GRAD_CHECK, 0);
    let mut checked = 0;
    let mut worst_mean = 0.0f64;
    let mut worst_std_dev = 0.0f64;
    for _ in 0..1000 {
        let d = 4;
        let scale = 0.5 + 2.0 * rng.gen::<f64>();
        let offset = 4.0 * (rng.gen::<f64>() - 0.5);
        let data: Vec<f64> = (0..16 * d)
            .map(|_| offset + scale * (rng.gen::<f64>() - 0.5))
            .collect();
        let group = Tensor::from_vec(&[16, d], data);
        let (mu, sigma) = patch_stats(&group).unwrap();
        if sigma.iter().any(|&s| s <= 0.1) {
            continue;
        }
        checked += 1;
        let normalized = normalize_distribution(&group, &mu, &sigma);
        let (nmu, nsigma) = patch_stats(&normalized).unwrap();
        for j in 0..d {
            worst_mean = worst_mean.max(nmu[j].abs());
            worst_std_dev = worst_std_dev.max((nsigma[j] - 1.0).abs());
            assert!(nmu[j].abs() < 1e-6, "column mean {}", nmu[j]);
            assert!(
                (0.999..=1.001).contains(&nsigma[j]),
                "column std {}",
                nsigma[j]
            );
        }
    }
    assert!(checked >= 990, "only {checked} groups had spread columns");
    println!(
        "PASS criterion-4 normalization: {checked} groups, worst |mean|={worst_mean:.2e}, worst |std-1|={worst_std_dev:.2e}"
    );
}

/// Criterion 5: srcc/plcc/rmse agree with direct-definition oracles to
/// 1e-9 on 100 random 50-vectors, including tie cases for SRCC.
#[test]
fn criterion_5_metric_oracles() {
    let mut rng = rng_for(88, streams::GRAD_CHECK, 1);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let quantize = trial % 2 == 0; // every other trial forces ties
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..50)
                .map(|_| {
                    let v = rng.gen::<f64>() * 10.0 - 5.0;
                    if quantize {
                        (v * 2.0).round() / 2.0
                    } else {
                        v
                    }
                })
                .collect()
        };
        let pred = gen(&mut rng);
        let gt = gen(&mut rng);
        let ds = (srcc(&pred, &gt).unwrap() - common::srcc_oracle(&pred, &gt)).abs();
        let dp = (plcc(&pred, &gt).unwrap() - common::plcc_oracle(&pred, &gt)).abs();
        let dr = (rmse(&pred, &gt).unwrap() - common::rmse_oracle(&pred, &gt)).abs();
        worst = worst.max(ds).max(dp).max(dr);
        assert!(ds < 1e-9, "srcc disagreement {ds}");
        assert!(dp < 1e-9, "plcc disagreement {dp}");
        assert!(dr < 1e-9, "rmse disagreement {dr}");
    }
    println!("PASS criterion-5 metrics: worst oracle disagreement {worst:.2e} over 100 vectors");
}

/// Criterion 6: the loss-bundle identity holds exactly on every step of
/// a real (short) training run, and the pinned hand examples reproduce.
#[test]
fn criterion_6_loss_algebra() {
    // pinned triplet hinge examples
    let r = Tensor::from_vec(&[1, 2], vec![0.0f64, 0.0]);
    let d0 = Tensor::from_vec(&[1, 2], vec![0.0f64, 0.0]);
    let a2 = Tensor::from_vec(&[1, 2], vec![1.0f64, 1.0]);
    assert_eq!(triplet_loss(&r, &d0, &a2, 1.0).unwrap(), 0.0);
    let r1 = Tensor::from_vec(&[1, 1], vec![0.0f64]);
    let d1 = Tensor::from_vec(&[1, 1], vec![1.0f64]);
    let a1 = Tensor::from_vec(&[1, 1], vec![-1.0f64]);
    assert_eq!(triplet_loss(&r1, &d1, &a1, 1.0).unwrap(), 1.0);
    let dh = Tensor::from_vec(&[1, 2], vec![0.5f64, 0.5]);
    assert_eq!(triplet_loss(&r, &dh, &a2, 1.0).unwrap(), 0.0);

    // uniform-logit cross entropy = ln K
    let logits = Tensor::from_vec(&[4, 7], vec![0.0f64; 28]);
    let ce = classification_loss(&logits, &[0, 1, 2, 3]).unwrap();
    assert!((ce - 7.0f64.ln()).abs() < 1e-9);

    // weighted-total example with the protocol lambdas
    let bundle = total_loss(
        &LossComponents {
            mae: 1.0f64,
            trip: 2.0,
            mmd: 10.0,
            cls: 3.0,
            reg_rd: 0.0,
            reg_ad: 0.0,
            reg_diff: 0.0,
        },
        &HyperParams::default(),
    )
    .unwrap();
    assert!((bundle.total - 6.05).abs() < 1e-12);

    // regularizer hand values
    assert_eq!(
        kl_regularizers(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(),
        (1.0, 1.0, 2.0)
    );
    assert_eq!(mae_loss(&[0.0f64, 4.0], &[2.0, 0.0]).unwrap(), 3.0);

    // identity on every step of a short real run
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_corpus(
        &sciqa_core::data::SynthCorpusSpec {
            references: 5,
            width: 96,
            height: 96,
            ..Default::default()
        },
        dir.path(),
    )
    .unwrap();
    let normalized = normalize_scores(&manifest).unwrap();
    let (train_m, val_m, _) = split_by_reference(&normalized, (0.6, 0.2, 0.2), 3).unwrap();
    let mut cfg = smoke_train_config();
    cfg.max_epochs = 2;
    cfg.batch_triplets = 4;
    cfg.model.num_classes = train_m.distortion_vocabulary().len();
    let outcome = train(&train_m, &val_m, &cfg).unwrap();
    let mut steps = 0;
    for (_, _, bundle) in outcome.history.step_bundles() {
        assert!(bundle.identity_holds(), "identity failed: {bundle:?}");
        assert!(bundle.all_finite());
        steps += 1;
    }
    assert!(steps > 0);
    println!("PASS criterion-6 loss-algebra: hand values exact, identity on {steps}/{steps} steps");
}

fn smoke_artifacts() -> (tempfile::TempDir, sciqa_core::train::TrainOutcome, sciqa_core::data::DatasetManifest, sciqa_core::train::TrainConfig) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_synthetic_corpus(&smoke_corpus_spec(), dir.path()).unwrap();
    let normalized = normalize_scores(&corpus).unwrap();
    let (train_m, val_m, test_m) =
        split_by_reference(&normalized, (0.6, 0.2, 0.2), SMOKE_SPLIT_SEED).unwrap();
    let cfg = smoke_train_config();
    let outcome = train(&train_m, &val_m, &cfg).unwrap();
    (dir, outcome, test_m, cfg)
}

/// Criterion 7: the committed smoke benchmark (8 references x 3 types x
/// 3 levels, 60/20/20 content split, 30 epochs, 8 triplets x 16 patches)
/// halves the training MAE, reaches held-out SRCC >= 0.5 and orders the
/// summed KL deviation of pristine below max-level distorted images,
/// within 20 minutes.
#[test]
fn criterion_7_smoke_benchmark() {
    let start = Instant::now();
    let (_dir, outcome, test_m, cfg) = smoke_artifacts();

    let first_mae = outcome.history.epoch_mean_mae(1).unwrap();
    let last_mae = outcome.history.epoch_mean_mae(cfg.max_epochs).unwrap();
    assert!(
        last_mae < 0.5 * first_mae,
        "training MAE {last_mae:.2} not below half of epoch-1 MAE {first_mae:.2}"
    );

    // held-out ranking on the unseen content split
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for rec in test_m.distorted_records() {
        let img = sciqa_core::data::SciImage::load(&test_m.resolve_path(rec)).unwrap();
        pred.push(predict_quality(&img, &outcome.best_params, &cfg.model).unwrap() as f64);
        gt.push(rec.score.unwrap());
    }
    let test_srcc = srcc(&pred, &gt).unwrap();
    assert!(test_srcc >= 0.5, "held-out SRCC {test_srcc:.3} below 0.5");

    // statistics separation: pristine KL deviation below max-level
    let report = sciqa_core::report::stats_report(&outcome.best_params, &cfg.model, &test_m, 20)
        .unwrap();
    let pristine: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.distortion_level == 0)
        .map(|r| r.phi_sum)
        .collect();
    let severe: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.distortion_level == 3)
        .map(|r| r.phi_sum)
        .collect();
    assert!(!pristine.is_empty() && !severe.is_empty());
    let med_p = median(&pristine);
    let med_s = median(&severe);
    assert!(
        med_p < med_s,
        "median pristine phi {med_p:.3} not below max-level {med_s:.3}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1200.0, "took {elapsed:?}");
    println!(
        "PASS criterion-7 smoke: MAE {first_mae:.2}->{last_mae:.2}, test SRCC {test_srcc:.3}, phi medians {med_p:.2}<{med_s:.2} in {:.0}s",
        elapsed.as_secs_f64()
    );
}

/// Criterion 8: determinism and persistence. Identical seeds give
/// identical first-3-step loss bundles; checkpoints round-trip
/// bit-exactly; predictions are identical before and after the round
/// trip.
#[test]
fn criterion_8_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_synthetic_corpus(
        &sciqa_core::data::SynthCorpusSpec {
            references: 5,
            width: 96,
            height: 96,
            ..Default::default()
        },
        dir.path(),
    )
    .unwrap();
    let normalized = normalize_scores(&corpus).unwrap();
    let (train_m, val_m, _) = split_by_reference(&normalized, (0.6, 0.2, 0.2), 5).unwrap();
    let mut cfg = smoke_train_config();
    cfg.max_epochs = 1;
    cfg.batch_triplets = 4;
    cfg.model.num_classes = train_m.distortion_vocabulary().len();

    let a = train(&train_m, &val_m, &cfg).unwrap();
    let b = train(&train_m, &val_m, &cfg).unwrap();
    let steps_a: Vec<_> = a.history.step_bundles().take(3).collect();
    let steps_b: Vec<_> = b.history.step_bundles().take(3).collect();
    assert_eq!(steps_a.len(), 3);
    for ((_, _, ba), (_, _, bb)) in steps_a.iter().zip(&steps_b) {
        assert_eq!(ba, bb, "loss bundles diverged under identical seeds");
    }

    // checkpoint round trip
    let p1 = dir.path().join("model.ckpt");
    let p2 = dir.path().join("model2.ckpt");
    save_checkpoint(&a.best_params, &cfg.model, &p1).unwrap();
    let (loaded, loaded_cfg) = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, &loaded_cfg, &p2).unwrap();
    assert_eq!(
        std::fs::read(&p1).unwrap(),
        std::fs::read(&p2).unwrap(),
        "checkpoint round trip not byte-identical"
    );

    // prediction unchanged across persistence
    let img = sciqa_core::data::SciImage::load(
        &corpus.resolve_path(corpus.distorted_records().next().unwrap()),
    )
    .unwrap();
    let before = predict_quality(&img, &a.best_params, &cfg.model).unwrap();
    let after = predict_quality(&img, &loaded, &loaded_cfg).unwrap();
    assert_eq!(before, after);
    println!(
        "PASS criterion-8 determinism: 3/3 step bundles equal, checkpoint bit-exact, prediction {before} stable"
    );
}

/// Criterion 9 (optional, requires real data): full-protocol training on
/// a user-supplied dataset manifest. Point `SCIQA_DATASET_MANIFEST` at a
/// manifest CSV (e.g. a SIQAD layout) and run
/// `cargo test --release --test acceptance criterion_9 -- --ignored --nocapture`.
/// Documented as an extended benchmark, not gating.
#[test]
#[ignore = "needs a real dataset manifest and hours of CPU training"]
fn criterion_9_real_dataset_extended() {
    let Ok(path) = std::env::var("SCIQA_DATASET_MANIFEST") else {
        eprintln!("SKIP criterion-9: SCIQA_DATASET_MANIFEST not set");
        return;
    };
    let manifest = load_manifest(std::path::Path::new(&path)).unwrap();
    let normalized = normalize_scores(&manifest).unwrap();
    let (train_m, val_m, test_m) = split_by_reference(&normalized, (0.6, 0.2, 0.2), 1).unwrap();
    let mut cfg = sciqa_core::train::TrainConfig::default();
    cfg.model.num_classes = train_m.distortion_vocabulary().len();
    let outcome = train(&train_m, &val_m, &cfg).unwrap();
    let report = sciqa_core::eval::evaluate(
        &outcome.best_params,
        &cfg.model,
        &test_m,
        true,
        &format!("{}-test", manifest.name),
    )
    .unwrap();
    println!(
        "criterion-9 extended: SRCC {:.4} PLCC {:.4} RMSE {:.4} (reference full-scale SRCC target: within 0.10 of 0.8820)",
        report.overall.srcc, report.overall.plcc, report.overall.rmse
    );
    let _ = (plcc(&[0.0, 1.0], &[0.0, 1.0]), rmse(&[0.0], &[0.0]));
}
