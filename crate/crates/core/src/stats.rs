//! Statistical utilities: moment accumulation, Kolmogorov–Smirnov tests,
//! weighted log-log regression and Gaussian-weighted quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running first and second moments. Merging is order-sensitive in the last
/// bits, so callers merge chunk results in index order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|v| m.push(v));
        m
    }
}

/// Binomial standard error `√(p(1−p)/n)`.
pub fn binomial_std_error(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// One-sided 95% upper bound on a proportion after zero hits in `n` trials.
pub fn zero_hit_upper_bound(n: u64) -> f64 {
    1.0 - 0.05f64.powf(1.0 / n as f64)
}

pub fn rayleigh_cdf(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        1.0 - (-t * t / 2.0).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub distance: f64,
    pub p_value: f64,
    pub n_effective: f64,
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`,
/// truncated at 100 terms.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        sum += sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ensure_sorted(samples: &[f64], what: &str) -> Result<()> {
    if samples.iter().any(|v| v.is_nan()) || samples.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(format!(
            "{what} must be sorted ascending without NaN"
        )));
    }
    Ok(())
}

/// One-sample KS test of sorted `samples` against `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.len() < 8 {
        return Err(Error::InvalidParameter(format!(
            "need ≥ 8 samples, got {}",
            samples.len()
        )));
    }
    ensure_sorted(samples, "samples")?;
    let n = samples.len() as f64;
    let distance = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        distance,
        p_value: kolmogorov_tail(n.sqrt() * distance),
        n_effective: n,
    })
}

/// Two-sample KS test on sorted inputs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < 8 || b.len() < 8 {
        return Err(Error::InvalidParameter("need ≥ 8 samples in each group".into()));
    }
    ensure_sorted(a, "first sample")?;
    ensure_sorted(b, "second sample")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut distance: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        distance = distance.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_effective = na * nb / (na + nb);
    Ok(KsResult {
        distance,
        p_value: kolmogorov_tail(n_effective.sqrt() * distance),
        n_effective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub r_squared: f64,
}

/// Weighted least squares of `y` on `x`.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], weights: &[f64]) -> Result<RegressionFit> {
    if x.len() != y.len() || x.len() != weights.len() {
        return Err(Error::InvalidParameter("regression inputs differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidParameter(format!("need ≥ 3 points, got {}", x.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    let sw: f64 = weights.iter().sum();
    let mx = x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(weights).map(|(a, w)| w * (a - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((a, b), w)| w * (a - mx) * (b - my))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidParameter("regressor has no spread".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .zip(weights)
        .map(|((a, b), w)| w * (b - intercept - slope * a).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().zip(weights).map(|(b, w)| w * (b - my).powi(2)).sum();
    // normalize so that the residual variance is in units of the mean weight
    let dof = (x.len() - 2) as f64;
    let s2 = ss_res / dof;
    let slope_std_error = (s2 / sxx).sqrt();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RegressionFit {
        slope,
        intercept,
        slope_std_error,
        r_squared,
    })
}

/// Fits `ln p = intercept + slope · ln n`. Weights default to 1.
pub fn loglog_fit(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<RegressionFit> {
    if let Some(&(n, p)) = points.iter().find(|(n, p)| !(*n > 0.0 && *p > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "log-log fit needs positive inputs, got ({n}, {p})"
        )));
    }
    let x: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let y: Vec<f64> = points.iter().map(|(_, p)| p.ln()).collect();
    let unit = vec![1.0; points.len()];
    weighted_linear_fit(&x, &y, weights.unwrap_or(&unit))
}

/// `∫ φ(y) exp(−(y − center)² / (2 width²)) dy` by the trapezoid rule on
/// `center ± 8·width` with mesh at most `step`.
pub fn gauss_integral<F: Fn(f64) -> f64>(phi: F, center: f64, width: f64, step: f64) -> Result<f64> {
    if !(step > 0.0 && width > 0.0) {
        return Err(Error::InvalidParameter("step and width must be positive".into()));
    }
    let lo = center - 8.0 * width;
    let span = 16.0 * width;
    let intervals = (span / step).ceil().max(1.0) as usize;
    let h = span / intervals as f64;
    let f = |y: f64| phi(y) * (-(y - center).powi(2) / (2.0 * width * width)).exp();
    let interior: f64 = (1..intervals).map(|k| f(lo + k as f64 * h)).sum();
    Ok(h * (interior + 0.5 * (f(lo) + f(lo + span))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_basic() {
        let m: Moments = [1.0, 2.0, 3.0, 4.0].into_iter().collect();
        assert_eq!(m.mean(), 2.5);
        assert!((m.variance() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ks_rejects_unsorted_and_short() {
        assert!(ks_one_sample(&[0.1, 0.2], rayleigh_cdf).is_err());
        let v = [0.3, 0.1, 0.2, 0.4, 0.5, 0.6, 0.7, 0.8];
        assert!(ks_one_sample(&v, |x| x).is_err());
    }

    #[test]
    fn ks_point_mass_at_median() {
        let median = (2.0 * 2f64.ln()).sqrt();
        let v = vec![median; 100];
        let r = ks_one_sample(&v, rayleigh_cdf).unwrap();
        assert!(r.distance >= 0.5 - 1e-12);
    }

    #[test]
    fn ks_shifted_cdf_reports_gap() {
        // uniform grid on [0,1] tested against the uniform law shifted by 1
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let shifted = |x: f64| (x - 1.0).clamp(0.0, 1.0);
        let r = ks_one_sample(&v, shifted).unwrap();
        assert!((r.distance - 1.0).abs() < 1e-3);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn kolmogorov_tail_table_values() {
        // classical critical values
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.6276) - 0.01).abs() < 1e-3);
        assert_eq!(kolmogorov_tail(0.0), 1.0);
    }

    #[test]
    fn two_sample_identical_is_zero() {
        let v: Vec<f64> = (0..50).map(f64::from).collect();
        let r = ks_two_sample(&v, &v).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn loglog_exact_power_laws() {
        for &e in &[-0.5, -1.5, -2.0] {
            let pts: Vec<(f64, f64)> = [64.0, 256.0, 1024.0, 4096.0]
                .iter()
                .map(|&n| (n, 3.0 * f64::powf(n, e)))
                .collect();
            let fit = loglog_fit(&pts, None).unwrap();
            assert!((fit.slope - e).abs() < 1e-12);
            assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
            assert!((fit.r_squared - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn loglog_rejects_nonpositive() {
        assert!(loglog_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)], None).is_err());
        assert!(loglog_fit(&[(1.0, 1.0), (2.0, 1.0)], None).is_err());
    }

    #[test]
    fn gauss_integral_normalization() {
        for &w in &[0.3, 1.0, 17.0] {
            let v = gauss_integral(|_| 1.0, 2.0, w, w / 200.0).unwrap();
            let exact = (2.0 * std::f64::consts::PI).sqrt() * w;
            assert!(((v - exact) / exact).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_hit_bound() {
        let u = zero_hit_upper_bound(1000);
        assert!((u - 0.002991).abs() < 1e-5);
    }
}
