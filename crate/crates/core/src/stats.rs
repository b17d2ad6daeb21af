//! Small descriptive statistics used by calibration, analysis and the harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Standard deviation with the `n - 1` denominator. `None` for fewer than two values.
pub fn sample_std_dev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Sample coefficient of variation. Zero for a single value.
pub fn coefficient_of_variation(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() == 1 {
        return Some(0.0);
    }
    if m == 0.0 {
        return None;
    }
    Some(sample_std_dev(xs)? / m.abs())
}

/// Linear-interpolation quantile of already sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, 0.5))
}

/// Tukey fence: keep values within `[Q1 - k*IQR, Q3 + k*IQR]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrFence {
    pub k: f64,
}

impl Default for IqrFence {
    fn default() -> Self {
        IqrFence { k: 1.5 }
    }
}

impl IqrFence {
    pub fn bounds(&self, xs: &[f64]) -> Option<(f64, f64)> {
        if xs.is_empty() {
            return None;
        }
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        Some((q1 - self.k * iqr, q3 + self.k * iqr))
    }

    pub fn filter(&self, xs: &[f64]) -> Vec<f64> {
        match self.bounds(xs) {
            Some((lo, hi)) => xs.iter().copied().filter(|x| (lo..=hi).contains(x)).collect(),
            None => Vec::new(),
        }
    }
}

/// Pearson correlation; `None` when lengths differ, fewer than two points, or a
/// series has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean with a two-sided Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n: usize,
}

pub fn confidence_interval(xs: &[f64], level: f64) -> Option<ConfidenceInterval> {
    let m = mean(xs)?;
    let sd = sample_std_dev(xs)?;
    let df = (xs.len() - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, df).ok()?.inverse_cdf(0.5 + level / 2.0);
    let half = t * sd / (xs.len() as f64).sqrt();
    Some(ConfidenceInterval { mean: m, lower: m - half, upper: m + half, level, n: xs.len() })
}
