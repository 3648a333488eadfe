//! Effective multiplicity via the spectral participation ratio.
//!
//! For a correlation matrix Σ of K candidates, K_eff = (Σλ_i)² / Σλ_i² = K² / ‖Σ‖²_F.
//! The sample correlation matrix is shrunk toward the identity with the analytic
//! Schäfer–Strimmer intensity before the ratio is taken; without shrinkage the
//! estimator collapses badly whenever T is not much larger than K.

use log::warn;
use ndarray::{Array2, ArrayView2, Axis, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::inference::Phase;
use crate::{Error, Result};

const UNIT_DIAG_TOL: f64 = 1e-8;

/// T×K panel of candidate series for one evaluation phase.
#[derive(Debug, Clone)]
pub struct CandidatePanel {
    pub data: Array2<f64>,
    pub phase: Phase,
    pub ids: Vec<String>,
}

impl CandidatePanel {
    pub fn new(data: Array2<f64>, phase: Phase) -> Result<Self> {
        let (t, k) = data.dim();
        if k < 1 || t < 2 {
            return Err(Error::InsufficientData(format!(
                "panel needs T >= 2 and K >= 1, got T={t} K={k}"
            )));
        }
        let ids = (0..k).map(|i| format!("c{i}")).collect();
        Ok(Self { data, phase, ids })
    }

    /// Panel from candidate-major storage: `columns[k*t_len + t]`.
    pub fn from_columns(columns: Vec<f64>, t_len: usize, k: usize, phase: Phase) -> Result<Self> {
        if columns.len() != t_len * k {
            return Err(Error::Contract(format!(
                "column buffer has {} values, expected {t_len}x{k}",
                columns.len()
            )));
        }
        let data = Array2::from_shape_vec((t_len, k).f(), columns)
            .map_err(|e| Error::Contract(e.to_string()))?;
        Self::new(data, phase)
    }

    pub fn t_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn k(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMultiplicity {
    pub k_eff: f64,
    pub shrinkage_lambda: f64,
    pub k_nominal: usize,
    /// Zero-variance columns excluded from the correlation matrix.
    pub dropped: usize,
}

#[derive(Debug, Clone)]
pub struct ShrunkCorrelation {
    pub matrix: Array2<f64>,
    pub lambda: f64,
    /// Original indices of the columns that entered the correlation matrix.
    pub kept: Vec<usize>,
}

/// Columns standardized with the n−1 standard deviation, degenerate columns removed.
struct Standardized {
    xs: Array2<f64>,
    kept: Vec<usize>,
}

fn standardize(data: ArrayView2<'_, f64>) -> Standardized {
    let (n, k) = data.dim();
    let nf = n as f64;
    let mut kept = Vec::with_capacity(k);
    let mut buf = Vec::with_capacity(n * k);
    for (j, col) in data.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / nf;
        let mut ss = 0.0;
        let mut sq = 0.0;
        for &v in col.iter() {
            ss += (v - mean) * (v - mean);
            sq += v * v;
        }
        let var = ss / (nf - 1.0);
        if !(var > 1e-24 * (sq / nf).max(f64::MIN_POSITIVE)) {
            continue;
        }
        let sd = var.sqrt();
        kept.push(j);
        buf.extend(col.iter().map(|v| (v - mean) / sd));
    }
    let kk = kept.len();
    if kk < k {
        warn!("dropping {} zero-variance column(s) before correlation", k - kk);
    }
    let xs = Array2::from_shape_vec((n, kk).f(), buf).expect("shape matches buffer");
    Standardized { xs, kept }
}

fn frob2(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Shrinkage-corrected correlation matrix λI + (1−λ)R̂.
pub fn shrink_correlation(panel: &CandidatePanel) -> Result<ShrunkCorrelation> {
    let n = panel.t_len();
    if n < 2 {
        return Err(Error::InsufficientData("need T >= 2".into()));
    }
    let st = standardize(panel.data.view());
    let k = st.kept.len();
    if k == 0 {
        return Err(Error::DegenerateVariance("every column has zero variance".into()));
    }
    if k == 1 {
        return Ok(ShrunkCorrelation {
            matrix: Array2::eye(1),
            lambda: 1.0,
            kept: st.kept,
        });
    }
    let nf = n as f64;
    let xs = &st.xs;
    let gram = xs.t().dot(xs);
    let sq = xs.mapv(|v| v * v);
    let w2 = sq.t().dot(&sq);
    let mut r = gram / (nf - 1.0);
    let scale = nf / (nf - 1.0).powi(3);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let wbar = r[[i, j]] * (nf - 1.0) / nf;
            num += scale * (w2[[i, j]] - nf * wbar * wbar);
            den += r[[i, j]] * r[[i, j]];
        }
    }
    let lambda = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 1.0 };
    r.mapv_inplace(|v| (1.0 - lambda) * v);
    for i in 0..k {
        r[[i, i]] = 1.0;
    }
    Ok(ShrunkCorrelation {
        matrix: r,
        lambda,
        kept: st.kept,
    })
}

/// K_eff = K² / ‖Σ‖²_F for a correlation matrix.
pub fn k_eff(correlation: &Array2<f64>) -> Result<EffectiveMultiplicity> {
    let (a, b) = correlation.dim();
    if a != b || a == 0 {
        return Err(Error::Contract(format!("correlation matrix must be square, got {a}x{b}")));
    }
    for i in 0..a {
        let d = correlation[[i, i]];
        if !d.is_finite() || (d - 1.0).abs() > UNIT_DIAG_TOL {
            return Err(Error::Contract(format!("diagonal entry {i} is {d}, expected 1")));
        }
        for j in 0..i {
            let (x, y) = (correlation[[i, j]], correlation[[j, i]]);
            if !x.is_finite() || (x - y).abs() > UNIT_DIAG_TOL {
                return Err(Error::Contract(format!("matrix not symmetric at ({i},{j})")));
            }
        }
    }
    let kf = a as f64;
    Ok(EffectiveMultiplicity {
        k_eff: kf * kf / frob2(correlation),
        shrinkage_lambda: 0.0,
        k_nominal: a,
        dropped: 0,
    })
}

/// Closed form for equicorrelated blocks: K² / Σ_c (s_c + ρ² s_c (s_c − 1)).
pub fn k_eff_population(block_sizes: &[usize], rho: f64) -> f64 {
    let k: usize = block_sizes.iter().sum();
    let kf = k as f64;
    let den: f64 = block_sizes
        .iter()
        .map(|&s| {
            let s = s as f64;
            s + rho * rho * s * (s - 1.0)
        })
        .sum();
    kf * kf / den
}

/// Shrinkage K̂_eff without materializing the K×K matrix.
///
/// Uses ‖X̃ᵀX̃‖_F = ‖X̃X̃ᵀ‖_F to pick the smaller Gram matrix, and
/// Σ_{i≠j} Σ_t x̃²_ti x̃²_tj = Σ_t [(Σ_i x̃²_ti)² − Σ_i x̃⁴_ti] for the shrinkage numerator.
pub fn estimate_k_eff(panel: &CandidatePanel) -> Result<EffectiveMultiplicity> {
    estimate_view(panel.data.view())
}

pub(crate) fn estimate_view(data: ArrayView2<'_, f64>) -> Result<EffectiveMultiplicity> {
    let (n, k_nominal) = data.dim();
    if n < 2 {
        return Err(Error::InsufficientData("need T >= 2".into()));
    }
    let st = standardize(data);
    let k = st.kept.len();
    let dropped = k_nominal - k;
    if k == 0 {
        return Err(Error::DegenerateVariance("every column has zero variance".into()));
    }
    if k == 1 {
        return Ok(EffectiveMultiplicity {
            k_eff: 1.0,
            shrinkage_lambda: 1.0,
            k_nominal,
            dropped,
        });
    }
    let nf = n as f64;
    let kf = k as f64;
    let xs = &st.xs;
    let g2 = if k <= n {
        frob2(&xs.t().dot(xs))
    } else {
        frob2(&xs.dot(&xs.t()))
    };
    let s = (g2 / ((nf - 1.0) * (nf - 1.0)) - kf).max(0.0);
    let mut row_sq = vec![0.0; n];
    let mut row_4 = vec![0.0; n];
    for col in xs.axis_iter(Axis(1)) {
        for (t, &v) in col.iter().enumerate() {
            let v2 = v * v;
            row_sq[t] += v2;
            row_4[t] += v2 * v2;
        }
    }
    let sum_w2: f64 = row_sq.iter().zip(&row_4).map(|(a, b)| a * a - b).sum();
    let sum_wbar2 = ((nf - 1.0) / nf).powi(2) * s;
    let num = nf / (nf - 1.0).powi(3) * (sum_w2 - nf * sum_wbar2);
    let lambda = if s > 0.0 { (num / s).clamp(0.0, 1.0) } else { 1.0 };
    let shrink = 1.0 - lambda;
    Ok(EffectiveMultiplicity {
        k_eff: kf * kf / (kf + shrink * shrink * s),
        shrinkage_lambda: lambda,
        k_nominal,
        dropped,
    })
}

/// Naive K² / ‖R̂‖²_F on the unshrunk sample correlation matrix.
pub fn sample_k_eff(panel: &CandidatePanel) -> Result<EffectiveMultiplicity> {
    let n = panel.t_len();
    let st = standardize(panel.data.view());
    let k = st.kept.len();
    if k == 0 {
        return Err(Error::DegenerateVariance("every column has zero variance".into()));
    }
    let nf = n as f64;
    let xs = &st.xs;
    let g2 = if k <= n {
        frob2(&xs.t().dot(xs))
    } else {
        frob2(&xs.dot(&xs.t()))
    };
    let kf = k as f64;
    Ok(EffectiveMultiplicity {
        k_eff: kf * kf / (g2 / ((nf - 1.0) * (nf - 1.0))),
        shrinkage_lambda: 0.0,
        k_nominal: panel.k(),
        dropped: panel.k() - k,
    })
}
