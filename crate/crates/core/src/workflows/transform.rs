use serde::{Deserialize, Serialize};

use crate::inference::Phase;
use crate::multiplicity::CandidatePanel;
use crate::stats;
use crate::{Error, Result};

/// Maps continuous prediction scores to positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum ThresholdTransform {
    None,
    SignOnly,
    Fixed(f64),
    AdaptiveQuantile(f64),
}

impl ThresholdTransform {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdTransform::Fixed(t) if !(t >= 0.0) => Err(Error::Contract(format!(
                "fixed threshold must be >= 0, got {t}"
            ))),
            ThresholdTransform::AdaptiveQuantile(q) if !(q > 0.0 && q < 1.0) => Err(
                Error::Contract(format!("adaptive quantile must lie in (0,1), got {q}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> (String, String) {
        match *self {
            ThresholdTransform::None => ("None".into(), "-".into()),
            ThresholdTransform::SignOnly => ("Fixed".into(), "thr=0.0".into()),
            ThresholdTransform::Fixed(t) => ("Fixed".into(), format!("thr={t:.1}")),
            ThresholdTransform::AdaptiveQuantile(q) => ("Adaptive".into(), format!("q={q:.2}")),
        }
    }
}

#[inline]
fn gate(s: f64, cut: f64) -> f64 {
    if s.abs() > cut {
        s.signum()
    } else {
        0.0
    }
}

/// A transform whose data-dependent cutoffs have been learned on in-sample scores.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedTransform {
    None,
    Fixed(f64),
    PerCandidate(Vec<f64>),
}

impl FittedTransform {
    /// Learns cutoffs from in-sample scores stored candidate-major (`k * n_is`).
    pub fn fit(transform: ThresholdTransform, scores: &[f64], n_is: usize, k: usize) -> Self {
        match transform {
            ThresholdTransform::None => FittedTransform::None,
            ThresholdTransform::SignOnly => FittedTransform::Fixed(0.0),
            ThresholdTransform::Fixed(t) => FittedTransform::Fixed(t),
            ThresholdTransform::AdaptiveQuantile(q) => {
                let mut abs = vec![0.0; n_is];
                let cuts = (0..k)
                    .map(|j| {
                        for (a, s) in abs.iter_mut().zip(&scores[j * n_is..(j + 1) * n_is]) {
                            *a = s.abs();
                        }
                        stats::quantile_select(&mut abs, q).unwrap_or(0.0)
                    })
                    .collect();
                FittedTransform::PerCandidate(cuts)
            }
        }
    }

    #[inline]
    pub fn position(&self, candidate: usize, score: f64) -> f64 {
        match self {
            FittedTransform::None => score,
            FittedTransform::Fixed(t) => gate(score, *t),
            FittedTransform::PerCandidate(c) => gate(score, c[candidate]),
        }
    }

    pub fn apply_column(&self, candidate: usize, scores: &[f64], out: &mut [f64]) {
        for (o, &s) in out.iter_mut().zip(scores) {
            *o = self.position(candidate, s);
        }
    }
}

/// Applies `transform` to every column of an in-sample score panel. Adaptive cutoffs are
/// learned from the panel itself, so walk-forward panels are refused for that kind.
pub fn apply_threshold(scores: &CandidatePanel, transform: ThresholdTransform) -> Result<CandidatePanel> {
    transform.validate()?;
    if scores.phase == Phase::WalkForward
        && matches!(transform, ThresholdTransform::AdaptiveQuantile(_))
    {
        return Err(Error::Contract(
            "adaptive cutoffs must be fitted on in-sample scores".into(),
        ));
    }
    let (n, k) = scores.data.dim();
    let cols: Vec<f64> = (0..k)
        .flat_map(|j| scores.data.column(j).to_vec())
        .collect();
    let fitted = FittedTransform::fit(transform, &cols, n, k);
    let mut out = vec![0.0; n * k];
    for j in 0..k {
        fitted.apply_column(j, &cols[j * n..(j + 1) * n], &mut out[j * n..(j + 1) * n]);
    }
    let mut panel = CandidatePanel::from_columns(out, n, k, scores.phase)?;
    panel.ids = scores.ids.clone();
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn fixed_threshold_and_sign() {
        let f = FittedTransform::fit(ThresholdTransform::Fixed(1.0), &[], 0, 0);
        assert_eq!(f.position(0, 0.5), 0.0);
        assert_eq!(f.position(0, -1.5), -1.0);
        assert_eq!(f.position(0, 1.0), 0.0);
        let s = FittedTransform::fit(ThresholdTransform::SignOnly, &[], 0, 0);
        assert_eq!(s.position(0, 0.2), 1.0);
        assert_eq!(s.position(0, 0.0), 0.0);
    }

    #[test]
    fn zero_scores_stay_zero() {
        let p = CandidatePanel::new(Array2::zeros((20, 3)), Phase::InSample).unwrap();
        let out = apply_threshold(&p, ThresholdTransform::Fixed(1.0)).unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adaptive_keeps_upper_tail() {
        let col: Vec<f64> = (1..=100).map(|i| i as f64 / 10.0).collect();
        let f = FittedTransform::fit(ThresholdTransform::AdaptiveQuantile(0.9), &col, 100, 1);
        let active = col.iter().filter(|s| f.position(0, **s) != 0.0).count();
        assert_eq!(active, 10);
    }

    #[test]
    fn adaptive_on_walk_forward_refused() {
        let p = CandidatePanel::new(Array2::zeros((20, 3)), Phase::WalkForward).unwrap();
        assert!(apply_threshold(&p, ThresholdTransform::AdaptiveQuantile(0.5)).is_err());
        assert!(apply_threshold(&p, ThresholdTransform::Fixed(0.5)).is_ok());
    }
}
