//! Small statistics helpers: moments, empirical CDFs and Kolmogorov–Smirnov distances.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Sample mean and unbiased (n − 1) standard deviation.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let m = samples.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let ss = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (m - 1) as f64).sqrt())
}

/// Empirical CDF over distinct sample values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    pub values: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl Ecdf {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let total = sorted.len() as f64;
        let mut values = Vec::new();
        let mut cumulative = Vec::new();
        for (i, x) in sorted.iter().enumerate() {
            if values.last() == Some(x) {
                *cumulative.last_mut().unwrap() = (i + 1) as f64 / total;
            } else {
                values.push(*x);
                cumulative.push((i + 1) as f64 / total);
            }
        }
        Ecdf { values, cumulative }
    }

    /// `F(x) = P(X ≤ x)`.
    pub fn eval(&self, x: f64) -> f64 {
        match self.values.partition_point(|v| *v <= x) {
            0 => 0.0,
            i => self.cumulative[i - 1],
        }
    }
}

/// Normal CDF; degenerate (σ = 0) normals are treated as a point mass.
pub fn normal_cdf(x: f64, mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    Normal::new(mean, std).map(|d| d.cdf(x)).unwrap_or(f64::NAN)
}

/// Two-sided KS distance between an empirical CDF and a normal law.
///
/// Both one-sided limits at every jump are checked, as for a continuous reference.
pub fn ks_ecdf_normal(ecdf: &Ecdf, mean: f64, std: f64) -> f64 {
    let mut d: f64 = 0.0;
    let mut below = 0.0;
    for (x, f) in ecdf.values.iter().zip(&ecdf.cumulative) {
        let g = normal_cdf(*x, mean, std);
        d = d.max((f - g).abs()).max((below - g).abs());
        below = *f;
    }
    d
}

/// KS distance between an integer-valued law (`pmf[m]` at `support[m]`) and a normal law,
/// evaluated with the continuity correction `F(m)` vs `Φ(m + ½)` at every lattice point.
pub fn ks_lattice_normal(support: &[usize], pmf: &[f64], mean: f64, std: f64) -> f64 {
    let mut cum = 0.0;
    let mut d: f64 = 0.0;
    let lo = support.first().copied().unwrap_or(0);
    if lo > 0 {
        d = d.max(normal_cdf(lo as f64 - 0.5, mean, std));
    }
    for (m, p) in support.iter().zip(pmf) {
        cum += p;
        d = d.max((cum - normal_cdf(*m as f64 + 0.5, mean, std)).abs());
    }
    d
}
