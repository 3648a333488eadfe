//! Small descriptive statistics shared by the audit and the experiment harness.

use serde::{Deserialize, Serialize};

const Z975: f64 = 1.959_963_984_540_054;

/// Type-1 (inverse empirical CDF) quantile of an already sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let n = sorted.len();
    let idx = ((n as f64 * q).ceil() as usize).clamp(1, n) - 1;
    Some(sorted[idx])
}

/// Type-1 quantile computed in place by selection; reorders `values`.
pub fn quantile_select(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let n = values.len();
    let idx = ((n as f64 * q).ceil() as usize).clamp(1, n) - 1;
    Some(*values.select_nth_unstable_by(idx, |a, b| a.total_cmp(b)).1)
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    quantile_sorted(&sorted(values), q)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn std_dev(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt())
}

/// How a cell's confidence interval was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// mean ± 1.96·sd/√N
    NormalMean,
    /// p ± 1.96·√(p(1−p)/N), clipped to [0, 1] (reported in percent when the column is)
    WaldRate,
    /// Binomial order-statistic ranks around the target quantile
    OrderStatistic,
    /// Closed-form or exact value, no Monte Carlo error
    Exact,
}

/// A point estimate with an optional 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub n: usize,
}

impl Estimate {
    pub fn exact(v: f64) -> Self {
        Self {
            value: Some(v),
            lo: None,
            hi: None,
            n: 0,
        }
    }

    pub fn missing() -> Self {
        Self {
            value: None,
            lo: None,
            hi: None,
            n: 0,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self {
            value: self.value.map(|v| v * c),
            lo: self.lo.map(|v| v * c),
            hi: self.hi.map(|v| v * c),
            n: self.n,
        }
    }

    pub fn get(&self) -> f64 {
        self.value.unwrap_or(f64::NAN)
    }
}

pub fn mean_estimate(values: &[f64]) -> Estimate {
    let n = values.len();
    match (mean(values), std_dev(values)) {
        (Some(m), Some(s)) => {
            let h = Z975 * s / (n as f64).sqrt();
            Estimate {
                value: Some(m),
                lo: Some(m - h),
                hi: Some(m + h),
                n,
            }
        }
        (Some(m), None) => Estimate {
            value: Some(m),
            lo: None,
            hi: None,
            n,
        },
        _ => Estimate::missing(),
    }
}

pub fn rate_estimate(hits: usize, n: usize) -> Estimate {
    if n == 0 {
        return Estimate::missing();
    }
    let p = hits as f64 / n as f64;
    let h = Z975 * (p * (1.0 - p) / n as f64).sqrt();
    Estimate {
        value: Some(p),
        lo: Some((p - h).max(0.0)),
        hi: Some((p + h).min(1.0)),
        n,
    }
}

pub fn quantile_estimate(values: &[f64], q: f64) -> Estimate {
    let s = sorted(values);
    let n = s.len();
    let Some(v) = quantile_sorted(&s, q) else {
        return Estimate::missing();
    };
    let nf = n as f64;
    let spread = Z975 * (nf * q * (1.0 - q)).sqrt();
    let lo_rank = ((nf * q - spread).floor() as isize).clamp(1, n as isize) as usize;
    let hi_rank = ((nf * q + spread).ceil() as isize).clamp(1, n as isize) as usize;
    Estimate {
        value: Some(v),
        lo: Some(s[lo_rank - 1]),
        hi: Some(s[hi_rank - 1]),
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type1_quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(quantile_sorted(&s, 0.5), Some(5.0));
        assert_eq!(quantile_sorted(&s, 0.51), Some(6.0));
        assert_eq!(quantile_sorted(&s, 0.99), Some(10.0));
        assert_eq!(quantile_sorted(&s, 0.0), Some(1.0));
        assert_eq!(quantile_sorted(&[], 0.5), None);
    }

    #[test]
    fn selection_matches_sorted() {
        let v: Vec<f64> = (0..257).map(|i| ((i * 7919) % 257) as f64 * 0.5).collect();
        for q in [0.0, 0.01, 0.5, 0.9, 0.95, 0.999, 1.0] {
            let mut w = v.clone();
            assert_eq!(quantile_select(&mut w, q), quantile(&v, q));
        }
    }

    #[test]
    fn quantiles_monotone_in_level() {
        let v: Vec<f64> = (0..997).map(|i| ((i * 7919) % 997) as f64).collect();
        let mut last = f64::NEG_INFINITY;
        for i in 0..=100 {
            let q = quantile(&v, i as f64 / 100.0).unwrap();
            assert!(q >= last);
            last = q;
        }
    }

    #[test]
    fn wald_interval() {
        let e = rate_estimate(50, 1000);
        assert!((e.get() - 0.05).abs() < 1e-15);
        assert!(e.lo.unwrap() < 0.05 && e.hi.unwrap() > 0.05);
        assert_eq!(rate_estimate(0, 10).lo, Some(0.0));
    }
}
