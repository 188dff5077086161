//! Sample statistics used by the statistical checks.

use statrs::distribution::{ContinuousCDF, Normal};

/// Mean, unbiased variance and the CLT standard errors of both.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `mean`.
    pub mean_stderr: f64,
    /// Standard error of `variance`, from the sample fourth central moment.
    pub variance_stderr: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Moments {
        let n = xs.len();
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for x in xs {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m4 += d2 * d2;
        }
        let variance = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
        let (m2, m4) = (m2 / nf, m4 / nf);
        Moments {
            n,
            mean,
            variance,
            mean_stderr: (variance / nf).sqrt(),
            variance_stderr: ((m4 - m2 * m2).max(0.0) / nf).sqrt(),
        }
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test of `xs` against N(0, 1).
/// Returns the statistic `D` and its p-value (Stephens' small-sample correction).
pub fn ks_standard_normal(xs: &[f64]) -> (f64, f64) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in sorted.iter().enumerate() {
        let f = normal_cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = Moments::of(xs).mean;
    let my = Moments::of(ys).mean;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Sample covariance with the standard error of its estimate.
pub fn covariance(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = Moments::of(xs).mean;
    let my = Moments::of(ys).mean;
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let m = Moments::of(&prods);
    (m.mean * n / (n - 1.0), m.mean_stderr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ks_accepts_gaussian_and_rejects_uniform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_standard_normal(&xs).1 > 0.01);
        let us: Vec<f64> = (0..5000).map(|i| (i as f64 / 5000.0) * 2.0 - 1.0).collect();
        assert!(ks_standard_normal(&us).1 < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // classical critical values: P(K > 1.36) ≈ 0.05, P(K > 1.63) ≈ 0.01
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.628) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn moments_of_constant_sample() {
        let m = Moments::of(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.variance_stderr, 0.0);
    }
}
