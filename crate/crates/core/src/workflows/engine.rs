use std::borrow::Cow;

use ndarray::{ArrayView2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use super::rules::{build_candidates, SignalRule};
use super::transform::{FittedTransform, ThresholdTransform};
use super::{KeffBasis, MultiplicityMode, Strategy, WorkflowSpec};
use crate::audit::inflation_diagnostics;
use crate::environments::ReturnPath;
use crate::inference::{self, Phase, MIN_LEN};
use crate::multiplicity::{self, CandidatePanel, EffectiveMultiplicity};
use crate::{Error, Result};

/// Result of one selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub winner_index: usize,
    /// Number of candidates tied with the winner's |Z_IS| (1 = no tie).
    pub ties: usize,
    /// Signed in-sample Z of the winner; absent if every candidate was degenerate.
    pub z_is: Option<f64>,
    pub z_is_star: f64,
    /// Signed walk-forward Z of the winner; absent when degenerate.
    pub z_wf: Option<f64>,
    pub z_wf_star: f64,
    pub delta_z: f64,
    pub bif_raw: Option<f64>,
    pub bif_stab: f64,
    pub tau: f64,
    pub k_eff_pred: Option<EffectiveMultiplicity>,
    pub k_eff_signal: Option<EffectiveMultiplicity>,
    pub n_is: usize,
    pub n_wf: usize,
    /// The winner's walk-forward strategy returns had zero variance. Such runs keep
    /// ΔZ (with z_wf_star = 0) but are excluded from BIF aggregation.
    pub degenerate: bool,
    /// No candidate met the minimum-trade constraint, so all were eligible.
    pub min_trade_fallback: bool,
}

impl SelectionOutcome {
    pub fn k_eff_pred_value(&self) -> Option<f64> {
        self.k_eff_pred.map(|e| e.k_eff)
    }

    pub fn k_eff_signal_value(&self) -> Option<f64> {
        self.k_eff_signal.map(|e| e.k_eff)
    }
}

/// Walk-forward positions of the winner, for cost accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkForwardTrace {
    pub positions: Vec<f64>,
    pub strategy_returns: Vec<f64>,
    /// The winner's last in-sample position, needed for the boundary trade.
    pub boundary_position: f64,
}

/// A finalized in-sample selection. Only an engine can create one, and walk-forward
/// evaluation requires one, so walk-forward data cannot influence the choice.
#[derive(Debug, Clone)]
pub struct Selection {
    split_index: usize,
    k: usize,
    pub winner: usize,
    pub ties: usize,
    pub z_is: Option<f64>,
    pub z_is_star: f64,
    pub k_eff_pred: Option<EffectiveMultiplicity>,
    pub k_eff_signal: Option<EffectiveMultiplicity>,
    pub min_trade_fallback: bool,
    /// Signed in-sample Z for every candidate (None where degenerate).
    pub z_all: Vec<Option<f64>>,
    fitted: FittedTransform,
    boundary_position: f64,
}

impl Selection {
    pub fn split_index(&self) -> usize {
        self.split_index
    }
}

pub struct SelectionEngine<'a> {
    spec: &'a WorkflowSpec,
    path: &'a ReturnPath,
    n_is: usize,
    rules: Vec<Box<dyn SignalRule>>,
    scores: Vec<f64>,
}

fn count_entries(pos: &[f64]) -> usize {
    let mut prev = 0.0;
    let mut n = 0;
    for &x in pos {
        if x != 0.0 && x != prev {
            n += 1;
        }
        prev = x;
    }
    n
}

fn z_or_degenerate(values: &[f64]) -> Result<Option<f64>> {
    match inference::z_of_slice(values) {
        Ok(z) => Ok(Some(z.value)),
        Err(Error::DegenerateVariance(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

impl<'a> SelectionEngine<'a> {
    /// Builds candidates, fits them on the in-sample block, and scores that block.
    pub fn new(spec: &'a WorkflowSpec, path: &'a ReturnPath) -> Result<Self> {
        spec.validate()?;
        let t = path.len();
        let n_is = (spec.split_ratio * t as f64).floor() as usize;
        if n_is < MIN_LEN || t - n_is < MIN_LEN {
            return Err(Error::InsufficientData(format!(
                "split of T={t} at {n_is} leaves fewer than {MIN_LEN} days in a phase"
            )));
        }
        if let Some(i) = path.returns.iter().position(|r| !r.is_finite()) {
            return Err(Error::Contract(format!("non-finite return at index {i}")));
        }
        let mut rules = build_candidates(spec, path)?;
        let in_sample = &path.returns[..n_is];
        for rule in rules.iter_mut() {
            rule.fit(in_sample);
        }
        let k = rules.len();
        let mut scores = vec![0.0; k * n_is];
        for (j, rule) in rules.iter().enumerate() {
            let mut stepper = rule.stepper(Phase::InSample, 0, n_is);
            let col = &mut scores[j * n_is..(j + 1) * n_is];
            for (t, s) in col.iter_mut().enumerate() {
                *s = stepper.score(&in_sample[..t]);
            }
        }
        Ok(Self {
            spec,
            path,
            n_is,
            rules,
            scores,
        })
    }

    pub fn n_is(&self) -> usize {
        self.n_is
    }

    pub fn k(&self) -> usize {
        self.rules.len()
    }

    /// In-sample score panel (T_IS × K).
    pub fn score_panel(&self) -> Result<CandidatePanel> {
        let mut p = CandidatePanel::from_columns(self.scores.clone(), self.n_is, self.k(), Phase::InSample)?;
        p.ids = self.rules.iter().map(|r| r.meta().id.clone()).collect();
        Ok(p)
    }

    fn keff(&self, buf: &[f64], basis: KeffBasis) -> Option<EffectiveMultiplicity> {
        let (n, k) = (self.n_is, self.k());
        if k == 1 {
            return Some(EffectiveMultiplicity {
                k_eff: 1.0,
                shrinkage_lambda: 1.0,
                k_nominal: 1,
                dropped: 0,
            });
        }
        let data: Cow<'_, [f64]> = match basis {
            KeffBasis::Positions => Cow::Borrowed(buf),
            KeffBasis::StrategyReturns => {
                let r = &self.path.returns[..n];
                Cow::Owned(
                    buf.chunks_exact(n)
                        .flat_map(|col| col.iter().zip(r).map(|(x, r)| x * r))
                        .collect(),
                )
            }
        };
        let view = ArrayView2::from_shape((n, k).f(), &data).ok()?;
        multiplicity::estimate_view(view).ok()
    }

    /// Picks the in-sample winner under `transform`.
    pub fn select(
        &self,
        transform: ThresholdTransform,
        mode: MultiplicityMode,
        basis: KeffBasis,
    ) -> Result<Selection> {
        transform.validate()?;
        let (n, k) = (self.n_is, self.k());
        let r = &self.path.returns[..n];
        let fitted = FittedTransform::fit(transform, &self.scores, n, k);
        let positions: Cow<'_, [f64]> = match fitted {
            FittedTransform::None => Cow::Borrowed(&self.scores),
            _ => {
                let mut out = vec![0.0; n * k];
                for j in 0..k {
                    fitted.apply_column(j, &self.scores[j * n..(j + 1) * n], &mut out[j * n..(j + 1) * n]);
                }
                Cow::Owned(out)
            }
        };
        let min_trades = match &self.spec.strategy {
            Strategy::TrendFollowing(p) => p.min_trades,
            _ => 0,
        };
        let mut scratch = vec![0.0; n];
        let mut z_all = Vec::with_capacity(k);
        let mut eligible = Vec::with_capacity(k);
        for j in 0..k {
            let col = &positions[j * n..(j + 1) * n];
            for ((s, x), ret) in scratch.iter_mut().zip(col).zip(r) {
                *s = x * ret;
            }
            z_all.push(z_or_degenerate(&scratch)?);
            eligible.push(min_trades == 0 || count_entries(col) >= min_trades);
        }
        let min_trade_fallback = !eligible.iter().any(|e| *e);
        let mut winner = None;
        let mut best = f64::NEG_INFINITY;
        let mut ties = 0;
        for j in 0..k {
            if !(eligible[j] || min_trade_fallback) {
                continue;
            }
            let mag = z_all[j].map_or(0.0, f64::abs);
            if mag > best {
                best = mag;
                winner = Some(j);
                ties = 1;
            } else if mag == best {
                ties += 1;
            }
        }
        let winner = winner.expect("at least one eligible candidate");
        let k_eff_pred = if mode.prediction() {
            self.keff(&self.scores, basis)
        } else {
            None
        };
        let k_eff_signal = if !mode.signal() {
            None
        } else if matches!(fitted, FittedTransform::None) && k_eff_pred.is_some() {
            k_eff_pred
        } else {
            self.keff(&positions, basis)
        };
        Ok(Selection {
            split_index: n,
            k,
            winner,
            ties,
            z_is: z_all[winner],
            z_is_star: best.max(0.0),
            k_eff_pred,
            k_eff_signal,
            min_trade_fallback,
            z_all,
            boundary_position: positions[winner * n + n - 1],
            fitted,
        })
    }

    /// Evaluates the selected winner, and only the winner, on the walk-forward block.
    pub fn walk_forward(&self, selection: Selection) -> Result<(SelectionOutcome, WalkForwardTrace)> {
        if selection.split_index != self.n_is || selection.k != self.k() {
            return Err(Error::Contract(format!(
                "selection was made at split {} with K={} but this engine splits at {} with K={}",
                selection.split_index,
                selection.k,
                self.n_is,
                self.k()
            )));
        }
        let t_len = self.path.len();
        let n_wf = t_len - self.n_is;
        let rule = &self.rules[selection.winner];
        let mut stepper = rule.stepper(Phase::WalkForward, self.n_is, n_wf);
        let mut positions = Vec::with_capacity(n_wf);
        let mut strat = Vec::with_capacity(n_wf);
        for t in self.n_is..t_len {
            let s = stepper.score(&self.path.returns[..t]);
            let x = selection.fitted.position(selection.winner, s);
            positions.push(x);
            strat.push(x * self.path.returns[t]);
        }
        let z_wf = z_or_degenerate(&strat)?;
        let z_wf_star = z_wf.map_or(0.0, f64::abs);
        let diag = inflation_diagnostics(selection.z_is_star, z_wf_star, self.spec.tau)?;
        let outcome = SelectionOutcome {
            winner_index: selection.winner,
            ties: selection.ties,
            z_is: selection.z_is,
            z_is_star: selection.z_is_star,
            z_wf,
            z_wf_star,
            delta_z: diag.delta_z,
            bif_raw: diag.bif_raw,
            bif_stab: diag.bif_stab,
            tau: self.spec.tau,
            k_eff_pred: selection.k_eff_pred,
            k_eff_signal: selection.k_eff_signal,
            n_is: self.n_is,
            n_wf,
            degenerate: z_wf.is_none(),
            min_trade_fallback: selection.min_trade_fallback,
        };
        let trace = WalkForwardTrace {
            positions,
            strategy_returns: strat,
            boundary_position: selection.boundary_position,
        };
        Ok((outcome, trace))
    }
}

/// Runs the full in-sample search and walk-forward evaluation for `spec` on `path`.
pub fn run_selection(spec: &WorkflowSpec, path: &ReturnPath) -> Result<SelectionOutcome> {
    run_selection_traced(spec, path).map(|(o, _)| o)
}

pub fn run_selection_traced(
    spec: &WorkflowSpec,
    path: &ReturnPath,
) -> Result<(SelectionOutcome, WalkForwardTrace)> {
    let engine = SelectionEngine::new(spec, path)?;
    let selection = engine.select(spec.transform(), spec.multiplicity, spec.keff_basis)?;
    engine.walk_forward(selection)
}
