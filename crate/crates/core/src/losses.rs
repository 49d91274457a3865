//! Training objectives: triplet margin loss on semantic features,
//! distortion-type cross-entropy, MAE quality regression, MMD alignment
//! and the KL regularizers on pristine-image feature statistics, plus
//! their weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Loss weights and the triplet margin.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct HyperParams {
    /// Triplet margin.
    pub alpha: f64,
    /// Weight of the triplet term.
    pub lambda1: f64,
    /// Weight of the MMD term.
    pub lambda2: f64,
    /// Weight of the classification term.
    pub lambda3: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda1: 1.0,
            lambda2: 5e-3,
            lambda3: 1.0,
        }
    }
}

/// Floating-point width that produced a [`LossBundle`]; the identity
/// check re-folds the total in the same width.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

/// All loss components of one training step.
///
/// Invariant: `total` equals the left-to-right fold
/// `mae + l1*trip + l2*mmd + l3*cls + reg_rd + reg_ad + reg_diff`
/// evaluated in the producing precision.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LossBundle {
    pub mae: f64,
    pub trip: f64,
    pub mmd: f64,
    pub cls: f64,
    pub reg_rd: f64,
    pub reg_ad: f64,
    pub reg_diff: f64,
    pub total: f64,
    pub lambdas: (f64, f64, f64),
    pub precision: Precision,
}

impl LossBundle {
    /// Re-evaluates the canonical fold in the producing precision.
    pub fn expected_total(&self) -> f64 {
        match self.precision {
            Precision::Single => {
                let fold = (((((self.mae as f32 + self.lambdas.0 as f32 * self.trip as f32)
                    + self.lambdas.1 as f32 * self.mmd as f32)
                    + self.lambdas.2 as f32 * self.cls as f32)
                    + self.reg_rd as f32)
                    + self.reg_ad as f32)
                    + self.reg_diff as f32;
                fold as f64
            }
            Precision::Double => {
                (((((self.mae + self.lambdas.0 * self.trip) + self.lambdas.1 * self.mmd)
                    + self.lambdas.2 * self.cls)
                    + self.reg_rd)
                    + self.reg_ad)
                    + self.reg_diff
            }
        }
    }

    /// Exact arithmetic identity between the stored total and the fold.
    pub fn identity_holds(&self) -> bool {
        self.total == self.expected_total()
    }

    pub fn all_finite(&self) -> bool {
        [
            self.mae,
            self.trip,
            self.mmd,
            self.cls,
            self.reg_rd,
            self.reg_ad,
            self.reg_diff,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Raw loss components prior to weighting, in the working precision.
#[derive(Clone, Copy, Debug)]
pub struct LossComponents<T> {
    pub mae: T,
    pub trip: T,
    pub mmd: T,
    pub cls: T,
    pub reg_rd: T,
    pub reg_ad: T,
    pub reg_diff: T,
}

impl<T: Scalar> LossComponents<T> {
    /// The canonical left-to-right fold; the single definition of the
    /// total used by both the training graph and [`total_loss`].
    pub fn fold_total(&self, hyper: &HyperParams) -> T {
        let l1 = T::from_f64c(hyper.lambda1);
        let l2 = T::from_f64c(hyper.lambda2);
        let l3 = T::from_f64c(hyper.lambda3);
        (((((self.mae + l1 * self.trip) + l2 * self.mmd) + l3 * self.cls) + self.reg_rd)
            + self.reg_ad)
            + self.reg_diff
    }
}

/// Mean hinge over the batch of
/// `|rs_i - ds_i|^2 - |rs_i - as_i|^2 + alpha`, on per-image semantic
/// features of the reference, distorted and auxiliary images.
pub fn triplet_loss<T: Scalar>(
    reference: &Tensor<T>,
    distorted: &Tensor<T>,
    auxiliary: &Tensor<T>,
    alpha: T,
) -> Result<T> {
    if reference.shape() != distorted.shape() || reference.shape() != auxiliary.shape() {
        return Err(Error::Shape(format!(
            "triplet_loss shapes differ: {:?} {:?} {:?}",
            reference.shape(),
            distorted.shape(),
            auxiliary.shape()
        )));
    }
    let &[b, d] = reference.shape() else {
        return Err(Error::Shape("triplet_loss expects [batch, dim]".into()));
    };
    let mut acc = T::zero();
    for i in 0..b {
        let mut pos = T::zero();
        let mut neg = T::zero();
        for j in 0..d {
            let r = reference.data()[i * d + j];
            let dp = r - distorted.data()[i * d + j];
            let dn = r - auxiliary.data()[i * d + j];
            pos += dp * dp;
            neg += dn * dn;
        }
        acc += (pos - neg + alpha).max(T::zero());
    }
    Ok(acc / T::from_usize_c(b))
}

/// Mean softmax cross-entropy, stabilized by max-logit subtraction.
pub fn classification_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let &[rows, k] = logits.shape() else {
        return Err(Error::Shape("classification_loss expects [rows, k]".into()));
    };
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            rows
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Config(format!("label {bad} out of range 0..{k}")));
    }
    let mut acc = T::zero();
    for r in 0..rows {
        let row = &logits.data()[r * k..(r + 1) * k];
        let m = row.iter().fold(row[0], |a, &b| a.max(b));
        let mut z = T::zero();
        for &v in row {
            z += (v - m).exp();
        }
        acc += z.ln() - (row[labels[r]] - m);
    }
    Ok(acc / T::from_usize_c(rows))
}

/// Mean absolute error between predictions and ground truth.
pub fn mae_loss<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "mae_loss length mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut acc = T::zero();
    for (&p, &g) in pred.iter().zip(gt) {
        acc += (p - g).abs();
    }
    Ok(acc / T::from_usize_c(pred.len()))
}

/// Squared norms of the pristine-image KL deviations and of their
/// difference: `(|phi_rd|^2, |phi_ad|^2, |phi_rd - phi_ad|^2)`.
pub fn kl_regularizers<T: Scalar>(phi_rd: &[T], phi_ad: &[T]) -> Result<(T, T, T)> {
    if phi_rd.len() != phi_ad.len() {
        return Err(Error::Shape(format!(
            "kl_regularizers length mismatch: {} vs {}",
            phi_rd.len(),
            phi_ad.len()
        )));
    }
    let mut rd = T::zero();
    let mut ad = T::zero();
    let mut diff = T::zero();
    for (&r, &a) in phi_rd.iter().zip(phi_ad) {
        rd += r * r;
        ad += a * a;
        let d = r - a;
        diff += d * d;
    }
    Ok((rd, ad, diff))
}

/// Combines components into a [`LossBundle`] using the canonical fold.
/// Errors on a non-finite component, naming it.
pub fn total_loss<T: Scalar>(
    components: &LossComponents<T>,
    hyper: &HyperParams,
) -> Result<LossBundle> {
    let named = [
        ("mae", components.mae),
        ("trip", components.trip),
        ("mmd", components.mmd),
        ("cls", components.cls),
        ("reg_rd", components.reg_rd),
        ("reg_ad", components.reg_ad),
        ("reg_diff", components.reg_diff),
    ];
    for (name, v) in named {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss component {name} is not finite")));
        }
    }
    let total = components.fold_total(hyper);
    let precision = if std::mem::size_of::<T>() == 4 {
        Precision::Single
    } else {
        Precision::Double
    };
    Ok(LossBundle {
        mae: components.mae.to_f64c(),
        trip: components.trip.to_f64c(),
        mmd: components.mmd.to_f64c(),
        cls: components.cls.to_f64c(),
        reg_rd: components.reg_rd.to_f64c(),
        reg_ad: components.reg_ad.to_f64c(),
        reg_diff: components.reg_diff.to_f64c(),
        total: total.to_f64c(),
        lambdas: (hyper.lambda1, hyper.lambda2, hyper.lambda3),
        precision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(b: usize, d: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[b, d], v.to_vec())
    }

    #[test]
    fn triplet_hinge_inactive_when_negative_gap() {
        // |r-d|^2 = 0, |r-a|^2 = 2, margin 1 -> 0 - 2 + 1 < 0
        let r = rows(1, 2, &[0.0, 0.0]);
        let d = rows(1, 2, &[0.0, 0.0]);
        let a = rows(1, 2, &[1.0, 1.0]);
        assert_eq!(triplet_loss(&r, &d, &a, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn triplet_equal_distances_keeps_margin() {
        // |r-d|^2 = |r-a|^2 = 1 -> loss = margin
        let r = rows(1, 1, &[0.0]);
        let d = rows(1, 1, &[1.0]);
        let a = rows(1, 1, &[-1.0]);
        assert_eq!(triplet_loss(&r, &d, &a, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn triplet_half_vs_two() {
        // 0.5 - 2 + 1 < 0 -> hinge clamps at zero
        let r = rows(1, 2, &[0.0, 0.0]);
        let d = rows(1, 2, &[0.5, 0.5]); // |r-d|^2 = 0.5
        let a = rows(1, 2, &[1.0, 1.0]); // |r-a|^2 = 2
        assert_eq!(triplet_loss(&r, &d, &a, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn triplet_shape_mismatch_errors() {
        let r = rows(1, 2, &[0.0, 0.0]);
        let d = rows(2, 1, &[0.0, 0.0]);
        assert!(triplet_loss(&r, &d, &r, 1.0).is_err());
    }

    #[test]
    fn triplet_invariant_under_common_rotation() {
        use rand::Rng;
        let mut rng = crate::rng::rng_for(17, crate::rng::streams::GRAD_CHECK, 0);
        let d = 6;
        let b = 4;
        let mut mats: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..b * d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let base: Vec<Tensor<f64>> = mats.iter().map(|m| rows(b, d, m)).collect();
        let before = triplet_loss(&base[0], &base[1], &base[2], 1.0).unwrap();
        // random Givens rotations preserve pairwise distances
        for _ in 0..20 {
            let i = rng.gen_range(0..d);
            let mut j = rng.gen_range(0..d);
            while j == i {
                j = rng.gen_range(0..d);
            }
            let theta: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
            let (s, c) = theta.sin_cos();
            for m in &mut mats {
                for r in 0..b {
                    let vi = m[r * d + i];
                    let vj = m[r * d + j];
                    m[r * d + i] = c * vi - s * vj;
                    m[r * d + j] = s * vi + c * vj;
                }
            }
        }
        let rot: Vec<Tensor<f64>> = mats.iter().map(|m| rows(b, d, m)).collect();
        let after = triplet_loss(&rot[0], &rot[1], &rot[2], 1.0).unwrap();
        assert!((before - after).abs() < 1e-9, "{before} vs {after}");
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let logits = Tensor::from_vec(&[3, 7], vec![0.25f64; 21]);
        let loss = classification_loss(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - 7.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_two_class_hand_value() {
        // logits (0, ln 3) with label 0: p0 = 1/4, loss = ln 4
        let logits = Tensor::from_vec(&[1, 2], vec![0.0f64, 3.0f64.ln()]);
        let loss = classification_loss(&logits, &[0]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_approaches_zero() {
        let logits = Tensor::from_vec(&[1, 3], vec![30.0f64, 0.0, 0.0]);
        let loss = classification_loss(&logits, &[0]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn cross_entropy_shift_invariance() {
        use rand::Rng;
        let mut rng = crate::rng::rng_for(23, crate::rng::streams::GRAD_CHECK, 1);
        let data: Vec<f64> = (0..5 * 4).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
        let labels = [1usize, 0, 3, 2, 1];
        let a = classification_loss(&Tensor::from_vec(&[5, 4], data.clone()), &labels).unwrap();
        let shifted: Vec<f64> = data.iter().map(|v| v + 123.456).collect();
        let b = classification_loss(&Tensor::from_vec(&[5, 4], shifted), &labels).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0f64, 0.0]);
        assert!(matches!(
            classification_loss(&logits, &[2]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mae_basic_values() {
        assert_eq!(mae_loss(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[10.0f64], &[25.0]).unwrap(), 15.0);
        assert_eq!(mae_loss(&[0.0f64, 4.0], &[2.0, 0.0]).unwrap(), 3.0);
        assert!(mae_loss(&[0.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn kl_regularizer_values() {
        assert_eq!(
            kl_regularizers(&[0.0f64, 0.0], &[0.0, 0.0]).unwrap(),
            (0.0, 0.0, 0.0)
        );
        let (rd, ad, diff) = kl_regularizers(&[0.5f64, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(diff, 0.0);
        assert_eq!(rd, ad);
        assert!(rd > 0.0);
        assert_eq!(
            kl_regularizers(&[1.0f64, 0.0], &[0.0, 1.0]).unwrap(),
            (1.0, 1.0, 2.0)
        );
    }

    #[test]
    fn total_loss_with_default_lambdas() {
        let c = LossComponents {
            mae: 1.0f64,
            trip: 2.0,
            mmd: 10.0,
            cls: 3.0,
            reg_rd: 0.0,
            reg_ad: 0.0,
            reg_diff: 0.0,
        };
        let bundle = total_loss(&c, &HyperParams::default()).unwrap();
        assert!((bundle.total - 6.05).abs() < 1e-12);
        assert!(bundle.identity_holds());
    }

    #[test]
    fn total_loss_zero_components() {
        let c = LossComponents {
            mae: 0.0f64,
            trip: 0.0,
            mmd: 0.0,
            cls: 0.0,
            reg_rd: 0.0,
            reg_ad: 0.0,
            reg_diff: 0.0,
        };
        let bundle = total_loss(&c, &HyperParams::default()).unwrap();
        assert_eq!(bundle.total, 0.0);
    }

    #[test]
    fn total_loss_names_nonfinite_component() {
        let c = LossComponents {
            mae: 1.0f64,
            trip: f64::NAN,
            mmd: 0.0,
            cls: 0.0,
            reg_rd: 0.0,
            reg_ad: 0.0,
            reg_diff: 0.0,
        };
        match total_loss(&c, &HyperParams::default()) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("trip")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn f32_identity_round_trips_through_f64_storage() {
        let c = LossComponents {
            mae: 0.1f32,
            trip: 0.2,
            mmd: 0.3,
            cls: 0.4,
            reg_rd: 0.5,
            reg_ad: 0.6,
            reg_diff: 0.7,
        };
        let bundle = total_loss(&c, &HyperParams::default()).unwrap();
        assert_eq!(bundle.precision, Precision::Single);
        assert!(bundle.identity_holds());
    }
}
