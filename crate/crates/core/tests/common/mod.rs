//! Statistical helpers shared by the integration tests.
#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square p-value of observed counts against probabilities.
pub fn chi2_pvalue(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * total as f64;
        if e == 0.0 {
            assert_eq!(o, 0, "count in a zero-probability cell");
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    let df = (cells - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// Asymptotic Kolmogorov distribution tail with the Stephens correction.
fn kolmogorov_tail(d: f64, n: f64) -> f64 {
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut sum = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov p-value.
pub fn ks_pvalue(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    kolmogorov_tail(d, n)
}

/// Two-sample Kolmogorov-Smirnov p-value.
pub fn ks_two_sample_pvalue(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    let ne = (x.len() * y.len()) as f64 / (x.len() + y.len()) as f64;
    kolmogorov_tail(d, ne)
}

/// A positive density known only through its log kernel, normalized by
/// trapezoidal quadrature on a log-spaced grid.
pub struct Quadrature {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub m4: f64,
}

impl Quadrature {
    pub fn positive(log_kernel: impl Fn(f64) -> f64) -> Self {
        // locate the bulk in t = ln x
        let coarse: Vec<f64> = (-4000..=4000).map(|k| k as f64 * 0.02).collect();
        let lk = |t: f64| log_kernel(t.exp()) + t;
        let peak = coarse.iter().map(|&t| lk(t)).fold(f64::NEG_INFINITY, f64::max);
        let inside: Vec<f64> = coarse.iter().copied().filter(|&t| lk(t) > peak - 60.0).collect();
        let (lo, hi) = (inside[0] - 0.5, inside[inside.len() - 1] + 0.5);
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let ts: Vec<f64> = (0..=steps).map(|k| lo + k as f64 * h).collect();
        let w: Vec<f64> = ts.iter().map(|&t| (lk(t) - peak).exp()).collect();
        let mut cdf = vec![0.0; ts.len()];
        for k in 1..ts.len() {
            cdf[k] = cdf[k - 1] + 0.5 * h * (w[k] + w[k - 1]);
        }
        let z = cdf[ts.len() - 1];
        let xs: Vec<f64> = ts.iter().map(|t| t.exp()).collect();
        let moment = |f: &dyn Fn(f64) -> f64| -> f64 {
            let mut s = 0.0;
            for k in 1..ts.len() {
                s += 0.5 * h * (w[k] * f(xs[k]) + w[k - 1] * f(xs[k - 1]));
            }
            s / z
        };
        let mean = moment(&|x| x);
        let var = moment(&|x| (x - mean).powi(2));
        let m4 = moment(&|x| (x - mean).powi(4));
        Quadrature { xs, cdf: cdf.iter().map(|c| c / z).collect(), mean, var, m4 }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        let last = self.xs.len() - 1;
        if x >= self.xs[last] {
            return 1.0;
        }
        let k = self.xs.partition_point(|&v| v < x);
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let f = (x - x0) / (x1 - x0);
        self.cdf[k - 1] + f * (self.cdf[k] - self.cdf[k - 1])
    }

    /// Standard errors of the sample mean and sample variance for `n` draws.
    pub fn standard_errors(&self, n: usize) -> (f64, f64) {
        let n = n as f64;
        ((self.var / n).sqrt(), ((self.m4 - self.var * self.var) / n).sqrt())
    }
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}
