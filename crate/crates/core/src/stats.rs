//! Feature-distribution statistics.
//!
//! A patch group's distortion-aware features are summarized per dimension
//! by mean and sample std; their deviation from the standard normal is
//! the closed-form Gaussian KL divergence, and set-level alignment with a
//! reference normal sample is measured by a Gaussian-kernel MMD.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::{rng_for, streams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Divisor guard for distribution normalization.
pub const NORM_EPS: f64 = 1e-9;
/// Floor applied to sigma before the logarithm in the KL deviation.
pub const STD_CLAMP: f64 = 1e-9;

/// Per-dimension statistics of one image's patch group.
#[derive(Clone, Debug)]
pub struct DistributionStats<T> {
    /// Per-dimension mean over the group's patches.
    pub mu: Vec<T>,
    /// Per-dimension sample std (n-1 denominator).
    pub sigma: Vec<T>,
    /// Per-dimension KL divergence to the standard normal.
    pub phi: Vec<T>,
    /// Number of patches in the group.
    pub n: usize,
}

/// Rows drawn from the independent multivariate standard normal.
#[derive(Clone, Debug)]
pub struct GaussianReference<T> {
    pub samples: Tensor<T>,
    pub seed: u64,
}

/// Mean and sample std per column of a `[groups * group_size, dim]`
/// buffer, one `(mu, sigma)` row per group. `sigma` is zero when a group
/// has fewer than two rows.
///
/// This is the single summation kernel behind both the public
/// [`patch_stats`] operation and the autodiff group-statistics ops, so
/// the two routes agree bitwise.
pub fn group_mean_std<T: Scalar>(
    data: &[T],
    groups: usize,
    group_size: usize,
    dim: usize,
) -> (Vec<T>, Vec<T>) {
    assert_eq!(data.len(), groups * group_size * dim);
    let mut mu = vec![T::zero(); groups * dim];
    let mut sigma = vec![T::zero(); groups * dim];
    let n = T::from_usize_c(group_size);
    for g in 0..groups {
        let base = g * group_size * dim;
        let mrow = &mut mu[g * dim..(g + 1) * dim];
        for r in 0..group_size {
            let row = &data[base + r * dim..base + (r + 1) * dim];
            for (m, &v) in mrow.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mrow.iter_mut() {
            *m = *m / n;
        }
        if group_size >= 2 {
            let srow = &mut sigma[g * dim..(g + 1) * dim];
            let mrow = &mu[g * dim..(g + 1) * dim];
            for r in 0..group_size {
                let row = &data[base + r * dim..base + (r + 1) * dim];
                for ((s, &m), &v) in srow.iter_mut().zip(mrow).zip(row) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            let denom = T::from_usize_c(group_size - 1);
            for s in srow.iter_mut() {
                *s = (*s / denom).sqrt();
            }
        }
    }
    (mu, sigma)
}

/// Per-dimension mean and sample std of an `[n, dim]` feature block.
///
/// Errors when `n < 2` since the sample std is then undefined.
pub fn patch_stats<T: Scalar>(features: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
    let &[n, dim] = features.shape() else {
        return Err(Error::Shape(format!(
            "patch_stats expects [n, dim], got {:?}",
            features.shape()
        )));
    };
    if n < 2 {
        return Err(Error::SampleSize(format!(
            "need at least 2 patches for std, got {n}"
        )));
    }
    let (mu, sigma) = group_mean_std(features.data(), 1, n, dim);
    Ok((mu, sigma))
}

/// Standardizes each column: `(x - mu) / (sigma + eps)` with `eps = 1e-9`.
pub fn normalize_distribution<T: Scalar>(
    features: &Tensor<T>,
    mu: &[T],
    sigma: &[T],
) -> Tensor<T> {
    let &[n, dim] = features.shape() else {
        panic!("normalize_distribution expects [n, dim]");
    };
    assert_eq!(mu.len(), dim);
    assert_eq!(sigma.len(), dim);
    let eps = T::from_f64c(NORM_EPS);
    let mut out = vec![T::zero(); n * dim];
    for r in 0..n {
        for j in 0..dim {
            out[r * dim + j] = (features.data()[r * dim + j] - mu[j]) / (sigma[j] + eps);
        }
    }
    Tensor::from_vec(&[n, dim], out)
}

/// Per-dimension KL divergence from `N(mu, sigma^2)` to `N(0, 1)`:
/// `-1/2 (1 + log sigma^2 - sigma^2 - mu^2)`. Sigma is floored at 1e-9
/// before the logarithm; the result is non-negative, zero exactly at
/// `(mu, sigma) = (0, 1)`.
pub fn kl_to_standard_normal<T: Scalar>(mu: &[T], sigma: &[T]) -> Vec<T> {
    assert_eq!(mu.len(), sigma.len());
    let clamp = T::from_f64c(STD_CLAMP);
    let half = T::from_f64c(0.5);
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| {
            let s = if s < clamp { clamp } else { s };
            let s2 = s * s;
            -half * (T::one() + s2.ln() - s2 - m * m)
        })
        .collect()
}

/// Full statistics (mu, sigma, phi) of an `[n, dim]` feature block.
pub fn distribution_stats<T: Scalar>(features: &Tensor<T>) -> Result<DistributionStats<T>> {
    let (mu, sigma) = patch_stats(features)?;
    let phi = kl_to_standard_normal(&mu, &sigma);
    Ok(DistributionStats {
        mu,
        sigma,
        phi,
        n: features.shape()[0],
    })
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn kernel_value<T: Scalar>(d2: T, bandwidths: &[T]) -> T {
    let two = T::from_f64c(2.0);
    let mut acc = T::zero();
    for &w in bandwidths {
        acc += (-d2 / (two * w * w)).exp();
    }
    acc
}

fn kernel_sum_block<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, bandwidths: &[T]) -> T {
    let dim = a.shape()[1];
    let rows_a = a.shape()[0];
    let rows_b = b.shape()[0];
    parallel::sum_ordered(rows_a, |i| {
        let ra = &a.data()[i * dim..(i + 1) * dim];
        let mut acc = T::zero();
        for j in 0..rows_b {
            let rb = &b.data()[j * dim..(j + 1) * dim];
            acc += kernel_value(sq_dist(ra, rb), bandwidths);
        }
        acc
    })
}

/// Squared maximum mean discrepancy between the rows of `x` and `y`
/// under a sum of Gaussian kernels `exp(-|a-b|^2 / (2 w^2))`.
///
/// Biased V-statistic (diagonal terms included), clamped at zero against
/// rounding. Symmetric in its arguments and exactly zero on identical
/// sample lists.
pub fn mmd_gaussian<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, bandwidths: &[T]) -> Result<T> {
    let (&[m, dx], &[n, dy]) = (x.shape(), y.shape()) else {
        return Err(Error::Shape("mmd_gaussian expects [rows, dim] inputs".into()));
    };
    if m == 0 || n == 0 {
        return Err(Error::SampleSize("mmd_gaussian needs non-empty samples".into()));
    }
    if dx != dy {
        return Err(Error::Shape(format!("dim mismatch: {dx} vs {dy}")));
    }
    if bandwidths.is_empty() || bandwidths.iter().any(|w| *w <= T::zero()) {
        return Err(Error::Config("bandwidths must be positive".into()));
    }
    let sxx = kernel_sum_block(x, x, bandwidths) / T::from_usize_c(m * m);
    let syy = kernel_sum_block(y, y, bandwidths) / T::from_usize_c(n * n);
    let sxy = kernel_sum_block(x, y, bandwidths) / T::from_usize_c(m * n);
    let two = T::from_f64c(2.0);
    Ok(((sxx + syy) - two * sxy).max(T::zero()))
}

/// Median-heuristic bandwidth set `{m/2, m, 2m}` where `m` is the median
/// pairwise distance of the joint sample. Falls back to 1 when the
/// median is zero (all points identical).
pub fn median_heuristic_bandwidths<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Vec<T> {
    let dim = x.shape()[1];
    assert_eq!(dim, y.shape()[1]);
    let rows: Vec<&[T]> = x
        .data()
        .chunks(dim)
        .chain(y.data().chunks(dim))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            dists.push(sq_dist(rows[i], rows[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return vec![T::one(); 3];
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        (dists[mid - 1] + dists[mid]) / T::from_f64c(2.0)
    };
    let m = if median > T::zero() { median } else { T::one() };
    vec![m * T::from_f64c(0.5), m, m * T::from_f64c(2.0)]
}

/// Deterministic `[rows, dim]` draw from the standard normal.
pub fn sample_gaussian_reference<T: Scalar>(
    rows: usize,
    dim: usize,
    seed: u64,
) -> GaussianReference<T> {
    let mut rng = rng_for(seed, streams::GAUSS_REF, 0);
    let data: Vec<T> = (0..rows * dim)
        .map(|_| T::from_f64c(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    GaussianReference {
        samples: Tensor::from_vec(&[rows, dim], data),
        seed,
    }
}
