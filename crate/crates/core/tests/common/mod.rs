//! Independent oracles for the acceptance suite. These deliberately use
//! different algorithms from the library implementations (quadrature
//! instead of closed forms, counting ranks instead of sort-based ones).

/// KL(N(mu, sigma^2) || N(0, 1)) by composite Simpson quadrature of
/// p(x) ln(p(x) / q(x)).
pub fn kl_numeric(mu: f64, sigma: f64) -> f64 {
    let lo = (mu - 14.0 * sigma).min(-14.0);
    let hi = (mu + 14.0 * sigma).max(14.0);
    let n = 8000; // even
    let h = (hi - lo) / n as f64;
    let integrand = |x: f64| -> f64 {
        let zp = (x - mu) / sigma;
        let ln_p = -0.5 * zp * zp - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let ln_q = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let p = ln_p.exp();
        if p == 0.0 {
            0.0
        } else {
            p * (ln_p - ln_q)
        }
    };
    let mut acc = integrand(lo) + integrand(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(lo + h * i as f64);
    }
    acc * h / 3.0
}

/// Rank by counting: 1 + #{smaller} + #{equal others}/2.
fn counting_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let smaller = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

fn covariance_corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a - mx) * (b - my))
        .sum::<f64>()
        / n;
    let vx = x.iter().map(|&a| (a - mx) * (a - mx)).sum::<f64>() / n;
    let vy = y.iter().map(|&b| (b - my) * (b - my)).sum::<f64>() / n;
    cov / (vx.sqrt() * vy.sqrt())
}

/// Spearman correlation from counting ranks and the covariance formula.
pub fn srcc_oracle(pred: &[f64], gt: &[f64]) -> f64 {
    covariance_corr(&counting_ranks(pred), &counting_ranks(gt))
}

/// Pearson correlation straight from the covariance definition.
pub fn plcc_oracle(pred: &[f64], gt: &[f64]) -> f64 {
    covariance_corr(pred, gt)
}

/// Root mean square error, folded naively.
pub fn rmse_oracle(pred: &[f64], gt: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        acc += (p - g).powi(2);
    }
    (acc / pred.len() as f64).sqrt()
}
