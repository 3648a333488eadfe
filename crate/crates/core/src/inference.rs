//! HAC-studentized mean statistics and extreme-value reference constants.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum series length for the bandwidth rule to be meaningful.
pub const MIN_LEN: usize = 8;

pub const EULER_GAMMA: f64 = 0.577_215_664_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    InSample,
    WalkForward,
}

/// Ordered daily strategy returns R_t = x_t · r_t for one evaluation phase.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReturnSeries {
    pub values: Vec<f64>,
    pub phase: Phase,
}

impl StrategyReturnSeries {
    pub fn new(values: Vec<f64>, phase: Phase) -> Result<Self> {
        check(&values)?;
        Ok(Self { values, phase })
    }

    /// Builds R_t = x_t · r_t.
    pub fn from_positions(positions: &[f64], returns: &[f64], phase: Phase) -> Result<Self> {
        if positions.len() != returns.len() {
            return Err(Error::Contract(format!(
                "positions ({}) and returns ({}) differ in length",
                positions.len(),
                returns.len()
            )));
        }
        Self::new(
            positions.iter().zip(returns).map(|(x, r)| x * r).collect(),
            phase,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZStatistic {
    pub value: f64,
    pub n: usize,
    pub bandwidth: usize,
    pub hac_variance: f64,
}

fn check(values: &[f64]) -> Result<()> {
    if values.len() < MIN_LEN {
        return Err(Error::InsufficientData(format!(
            "series of length {} is shorter than {MIN_LEN}",
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("non-finite strategy return at index {i}")));
    }
    Ok(())
}

/// Rule-of-thumb Bartlett bandwidth ⌊4(n/100)^{2/9}⌋.
pub fn bandwidth(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Bartlett weight for lag `l` at bandwidth `bw`.
#[inline]
pub fn bartlett_weight(l: usize, bw: usize) -> f64 {
    1.0 - l as f64 / (bw as f64 + 1.0)
}

/// Σ a_i·b_i with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Mean, HAC variance of the mean and second moment, computed in one place so the
/// slice-level and series-level entry points agree bit for bit.
fn hac_parts(values: &[f64], bw: usize) -> (f64, f64, f64) {
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let d: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let second = dot(values, values);
    let mut lrv = dot(&d, &d) / nf;
    for l in 1..=bw.min(n - 1) {
        lrv += 2.0 * bartlett_weight(l, bw) * dot(&d[l..], &d[..n - l]) / nf;
    }
    (mean, lrv / nf, second / nf)
}

fn floor_for(second_moment: f64) -> f64 {
    1e-12 * (1.0 + second_moment)
}

/// Bartlett-kernel long-run variance of the sample mean.
///
/// Returns [`Error::DegenerateVariance`] when the estimate sits at or below the floor
/// 1e-12·(1 + mean of squares), which is what a constant series produces.
pub fn hac_variance_of_mean(series: &StrategyReturnSeries) -> Result<f64> {
    check(&series.values)?;
    let (_, var, second) = hac_parts(&series.values, bandwidth(series.values.len()));
    let floor = floor_for(second);
    if var <= floor {
        return Err(Error::DegenerateVariance(format!(
            "HAC variance {var:e} at or below floor {floor:e}"
        )));
    }
    Ok(var)
}

pub fn z_statistic(series: &StrategyReturnSeries) -> Result<ZStatistic> {
    z_of_slice(&series.values)
}

/// Z statistic straight from a slice; same arithmetic as [`z_statistic`].
pub fn z_of_slice(values: &[f64]) -> Result<ZStatistic> {
    check(values)?;
    let n = values.len();
    let bw = bandwidth(n);
    let (mean, var, second) = hac_parts(values, bw);
    let floor = floor_for(second);
    if var <= floor {
        return Err(Error::DegenerateVariance(format!(
            "HAC variance {var:e} at or below floor {floor:e}"
        )));
    }
    Ok(ZStatistic {
        value: mean / var.sqrt(),
        n,
        bandwidth: bw,
        hac_variance: var,
    })
}

/// Expected maximum of `m` independent standard normals, a_M + γ b_M.
pub fn evt_expected_max(m: f64) -> Result<f64> {
    if !(m >= 2.0) {
        return Err(Error::ParameterDomain(format!("EVT benchmark needs M >= 2, got {m}")));
    }
    let l = (2.0 * m.ln()).sqrt();
    let a = l - (m.ln().ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * l);
    let b = 1.0 / l;
    Ok(a + EULER_GAMMA * b)
}

/// E|N(0,1)| = √(2/π).
pub fn half_normal_mean() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bandwidth_rule() {
        assert_eq!(bandwidth(100), 4);
        assert_eq!(bandwidth(252), 4);
        assert_eq!(bandwidth(1008), 6);
        assert_eq!(bandwidth(1512), 7);
    }

    #[test]
    fn zero_series_is_degenerate() {
        let s = StrategyReturnSeries::new(vec![0.0; 50], Phase::InSample).unwrap();
        assert!(matches!(hac_variance_of_mean(&s), Err(Error::DegenerateVariance(_))));
        assert!(matches!(z_statistic(&s), Err(Error::DegenerateVariance(_))));
    }

    #[test]
    fn short_and_nonfinite_rejected() {
        assert!(StrategyReturnSeries::new(vec![1.0; 7], Phase::InSample).is_err());
        let mut v = vec![1.0; 10];
        v[3] = f64::NAN;
        assert!(StrategyReturnSeries::new(v, Phase::InSample).is_err());
    }

    #[test]
    fn zero_mean_gives_zero_z() {
        let v: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let z = z_of_slice(&v).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn hand_computed_small_case() {
        // n = 8 gives L = 2; weights 2/3 and 1/3.
        let v = [1.0, 2.0, 0.0, 3.0, -1.0, 2.0, 1.0, 0.0];
        let n = 8.0;
        let m = 1.0;
        let d: Vec<f64> = v.iter().map(|x| x - m).collect();
        let g = |l: usize| (l..8).map(|t| d[t] * d[t - l]).sum::<f64>() / n;
        let expect = (g(0) + 2.0 * (2.0 / 3.0) * g(1) + 2.0 * (1.0 / 3.0) * g(2)) / n;
        assert_eq!(bandwidth(8), 2);
        let z = z_of_slice(&v).unwrap();
        assert_abs_diff_eq!(z.hac_variance, expect, epsilon = 1e-15);
        assert_abs_diff_eq!(z.value, m / expect.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn evt_values() {
        assert_abs_diff_eq!(evt_expected_max(1000.0).unwrap(), 3.27, epsilon = 0.01);
        assert_abs_diff_eq!(evt_expected_max(2.0 * 10.09).unwrap(), 1.95, epsilon = 0.01);
        let l = (2.0 * 2f64.ln()).sqrt();
        let a = l - ((2f64).ln().ln() + (4.0 * std::f64::consts::PI).ln()) / (2.0 * l);
        assert_eq!(evt_expected_max(2.0).unwrap(), a + EULER_GAMMA / l);
        assert!(evt_expected_max(1.0).is_err());
    }

    #[test]
    fn half_normal_constant() {
        assert_abs_diff_eq!(half_normal_mean(), 0.797_884_560_8, epsilon = 1e-10);
    }
}
