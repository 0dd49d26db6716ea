//! Small Monte-Carlo statistics toolkit: moments with standard errors,
//! batch means, energy-distance permutation tests and log-log fits.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sample mean and its standard error `s / sqrt(n)`.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// An estimate with its Monte-Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (value, se) = mean_se(xs);
        Estimate { value, se }
    }

    /// `|value - target| / se`.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.se == 0.0 {
            if self.value == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - target).abs() / self.se
        }
    }

    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        self.z_score(target) <= sigmas
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &Estimate) -> Estimate {
        Estimate {
            value: self.value - other.value,
            se: (self.se * self.se + other.se * other.se).sqrt(),
        }
    }
}

/// Means and covariances of vector samples with per-entry standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<Estimate>,
    /// Row-major `dim × dim`.
    pub cov: Vec<Estimate>,
    pub dim: usize,
}

/// Moments of the rows of `samples`.
pub fn moments(samples: &[Vec<f64>]) -> Moments {
    let dim = samples.first().map_or(0, |s| s.len());
    let mean: Vec<Estimate> = (0..dim)
        .map(|i| Estimate::from_samples(&samples.iter().map(|s| s[i]).collect::<Vec<_>>()))
        .collect();
    let mut cov = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        for j in 0..dim {
            let prods: Vec<f64> = samples
                .iter()
                .map(|s| (s[i] - mean[i].value) * (s[j] - mean[j].value))
                .collect();
            cov.push(Estimate::from_samples(&prods));
        }
    }
    Moments { mean, cov, dim }
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let b = batches.max(2);
    let len = series.len() / b;
    if len == 0 {
        return f64::INFINITY;
    }
    let means: Vec<f64> = (0..b)
        .map(|k| series[k * len..(k + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    mean_se(&means).1
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// The two-sample energy statistic
/// `2 E|X - Y| - E|X - X'| - E|Y - Y'|` (V-statistic form).
pub fn energy_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let mean_pair = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut s = 0.0;
        for u in a {
            for v in b {
                s += euclid(u, v);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    2.0 * mean_pair(x, y) - mean_pair(x, x) - mean_pair(y, y)
}

/// Result of [`energy_permutation_test`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
    pub permutations: usize,
}

/// Permutation test of equal distributions based on the energy statistic.
/// The null distribution is calibrated by relabelling the pooled sample.
pub fn energy_permutation_test(x: &[Vec<f64>], y: &[Vec<f64>], permutations: usize, seed: u64) -> EnergyTest {
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclid(pooled[i], pooled[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    let total: f64 = d.sum();
    // With s the indicator of the first group: S_xx = sᵀDs,
    // S_xy = 1ᵀDs - sᵀDs, S_yy = total - 2·1ᵀDs + sᵀDs.
    let stat = |s: &DVector<f64>| {
        let u = &d * s;
        let sds = s.dot(&u);
        let one_ds = u.sum();
        let sxy = one_ds - sds;
        let syy = total - 2.0 * one_ds + sds;
        2.0 * sxy / (n1 * n2) as f64 - sds / (n1 * n1) as f64 - syy / (n2 * n2) as f64
    };
    let mut labels: Vec<f64> = (0..n).map(|i| if i < n1 { 1.0 } else { 0.0 }).collect();
    let observed = stat(&DVector::from_column_slice(&labels));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0;
    for _ in 0..permutations {
        labels.shuffle(&mut rng);
        if stat(&DVector::from_column_slice(&labels)) >= observed {
            exceed += 1;
        }
    }
    EnergyTest {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        permutations,
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Empirical quantile (nearest rank).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn mean_and_se() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_abs_diff_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn energy_matrix_form_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>() + 0.3, rng.random()]).collect();
        let t = energy_permutation_test(&x, &y, 0, 1);
        assert_abs_diff_eq!(t.statistic, energy_distance(&x, &y), epsilon = 1e-12);
    }

    #[test]
    fn energy_test_detects_shift_and_accepts_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut draw = |shift: f64, k: usize| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    vec![a + shift, b]
                })
                .collect()
        };
        let x = draw(0.0, 200);
        let y = draw(0.0, 200);
        let z = draw(0.5, 200);
        assert!(energy_permutation_test(&x, &y, 200, 3).p_value > 0.01);
        assert!(energy_permutation_test(&x, &z, 200, 3).p_value < 0.01);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [256.0, 1024.0, 4096.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert_abs_diff_eq!(loglog_slope(&xs, &ys), -0.5, epsilon = 1e-12);
    }
}
