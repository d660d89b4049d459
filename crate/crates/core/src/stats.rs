//! Streaming moments, batch means, autocorrelation times and small regressions.

use serde::{Deserialize, Serialize};

/// Welford accumulator for mean and variance; merges associatively.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Welford) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean for independent samples.
    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        for x in iter {
            w.push(x);
        }
        w
    }
}

/// Mean and standard error of the mean from `n_batches` contiguous batch means.
pub fn batch_means(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let nb = n_batches.max(2).min(xs.len().max(2));
    let size = xs.len() / nb;
    if size == 0 {
        let w: Welford = xs.iter().copied().collect();
        return (w.mean(), w.stderr());
    }
    let w: Welford = (0..nb).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    (w.mean(), w.stderr())
}

/// Integrated autocorrelation time `1 + 2 Σ ρ_k` with Sokal's self-consistent window `k < 5τ`.
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for k in 1..n / 2 {
        let c = (0..n - k).map(|i| (xs[i] - mean) * (xs[i + k] - mean)).sum::<f64>() / (n as f64 * var);
        tau += 2.0 * c;
        if (k as f64) >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Mean and autocorrelation-corrected standard error of a correlated series.
pub fn correlated_mean(xs: &[f64]) -> (f64, f64, f64) {
    let w: Welford = xs.iter().copied().collect();
    let tau = integrated_autocorr_time(xs);
    (w.mean(), (w.variance() * tau / xs.len() as f64).sqrt(), tau)
}

/// Least-squares line `y ≈ a + b x`; returns `(a, b, se_b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (a, b, se)
}

/// Two-sample z-score `|m₁ - m₂| / sqrt(se₁² + se₂²)`.
pub fn z_score(m1: f64, se1: f64, m2: f64, se2: f64) -> f64 {
    let s = (se1 * se1 + se2 * se2).sqrt();
    if s == 0.0 {
        if m1 == m2 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (m1 - m2).abs() / s
    }
}

/// Empirical quantile by linear interpolation of the sorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_direct() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let w: Welford = xs.iter().copied().collect();
        assert!((w.mean() - 6.2).abs() < 1e-12);
        assert!((w.variance() - 37.2).abs() < 1e-12);
        let mut a: Welford = xs[..2].iter().copied().collect();
        let b: Welford = xs[2..].iter().copied().collect();
        a.merge(&b);
        assert!((a.mean() - w.mean()).abs() < 1e-12 && (a.variance() - w.variance()).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v).collect();
        let (a, b, _) = linear_fit(&x, &y);
        assert!((a - 3.0).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
    }

    #[test]
    fn iat_of_ar1() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let phi: f64 = 0.8;
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + e;
                x
            })
            .collect();
        let tau = integrated_autocorr_time(&xs);
        let exact = (1.0 + phi) / (1.0 - phi);
        assert!((tau - exact).abs() < 0.1 * exact, "{tau}");
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
