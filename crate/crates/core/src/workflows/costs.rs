use serde::{Deserialize, Serialize};

use crate::{Error, Result, TRADING_DAYS};

/// Transaction-cost break-even for a walk-forward signal path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    /// 252 × mean gross strategy return.
    pub mu_gross_ann: f64,
    /// Two-way traded volume per year.
    pub volume_two_way_ann: f64,
    /// One-way turnover per year, half the two-way volume.
    pub turnover_one_way_ann: f64,
    /// Per-side cost that sets the annualized net mean to zero, in return units.
    pub c_star: f64,
    pub c_star_bps: f64,
}

/// Break-even per-side cost c* = μ̄_gross / V̄₂.
///
/// `prev_position` is the last in-sample position, so the trade at the phase boundary
/// counts toward volume.
pub fn breakeven_cost(signals: &[f64], returns: &[f64], prev_position: f64) -> Result<BreakEven> {
    if signals.is_empty() || signals.len() != returns.len() {
        return Err(Error::Contract(format!(
            "need matching non-empty signal ({}) and return ({}) paths",
            signals.len(),
            returns.len()
        )));
    }
    let n = signals.len() as f64;
    let mut volume = 0.0;
    let mut prev = prev_position;
    for &s in signals {
        volume += (s - prev).abs();
        prev = s;
    }
    if volume == 0.0 {
        return Err(Error::NoTrading("walk-forward signal never changes".into()));
    }
    let gross: f64 = signals.iter().zip(returns).map(|(s, r)| s * r).sum::<f64>() / n;
    let mu = TRADING_DAYS * gross;
    let v2 = volume / (n / TRADING_DAYS);
    let c = mu / v2;
    Ok(BreakEven {
        mu_gross_ann: mu,
        volume_two_way_ann: v2,
        turnover_one_way_ann: v2 / 2.0,
        c_star: c,
        c_star_bps: c * 1e4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flip_counts_two_units() {
        // 252 days so the annualization factor is one.
        let mut s = vec![1.0; 252];
        s[100..].iter_mut().for_each(|x| *x = -1.0);
        let r = vec![0.001; 252];
        let b = breakeven_cost(&s, &r, 1.0).unwrap();
        assert_eq!(b.volume_two_way_ann, 2.0);
        assert_eq!(b.turnover_one_way_ann, 1.0);
    }

    #[test]
    fn boundary_trade_counts() {
        let s = vec![1.0; 252];
        let r = vec![0.0; 252];
        assert!(breakeven_cost(&s, &r, 1.0).is_err());
        let b = breakeven_cost(&s, &r, -1.0).unwrap();
        assert_eq!(b.volume_two_way_ann, 2.0);
    }

    #[test]
    fn ratio_arithmetic() {
        // Ten flips over one year give V2 = 20; a constant 0.10/252 daily gain gives μ = 0.10.
        let mut s = vec![0.0; 252];
        let mut x = 1.0;
        for (i, v) in s.iter_mut().enumerate() {
            if i > 0 && i % 25 == 0 {
                x = -x;
            }
            *v = x;
        }
        let r: Vec<f64> = s.iter().map(|x| x * 0.10 / 252.0).collect();
        let b = breakeven_cost(&s, &r, 1.0).unwrap();
        assert_eq!(b.volume_two_way_ann, 20.0);
        assert_relative_eq!(b.mu_gross_ann, 0.10, max_relative = 1e-12);
        assert_relative_eq!(b.c_star_bps, 50.0, max_relative = 1e-12);
    }
}
