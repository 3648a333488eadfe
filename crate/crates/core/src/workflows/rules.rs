use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{SigmaScale, Strategy, WorkflowFamily, WorkflowSpec};
use crate::environments::ReturnPath;
use crate::inference::Phase;
use crate::rng::{self, component, StreamRng};
use crate::{stats, Error, Result};

const FACTOR_TAG: u64 = 0xFAC7;

#[derive(Debug, Clone, PartialEq)]
pub struct RuleMeta {
    pub id: String,
    pub family: WorkflowFamily,
    pub index: usize,
}

/// Produces one score per day, seeing only returns strictly before that day.
pub trait Stepper {
    /// `past` is r[..t] for the day t being scored.
    fn score(&mut self, past: &[f64]) -> f64;
}

/// A causal candidate. The engine calls [`SignalRule::fit`] with the in-sample block
/// only, then asks for a stepper per phase and feeds it the visible past day by day.
pub trait SignalRule: Send {
    fn meta(&self) -> &RuleMeta;

    fn fit(&mut self, _in_sample: &[f64]) {}

    /// Stepper for days `start..start + len` of `phase`.
    fn stepper(&self, phase: Phase, start: usize, len: usize) -> Box<dyn Stepper + '_>;
}

fn phase_tag(phase: Phase) -> u64 {
    match phase {
        Phase::InSample => component::IN_SAMPLE,
        Phase::WalkForward => component::WALK_FORWARD,
    }
}

#[derive(Debug, Clone, Copy)]
struct StreamKey {
    seed: u64,
    path: u64,
}

impl StreamKey {
    fn candidate(&self, j: usize, phase: Phase) -> StreamRng {
        rng::stream(self.seed, &[component::CANDIDATES, self.path, j as u64, phase_tag(phase)])
    }

    fn factor(&self, c: usize, phase: Phase) -> StreamRng {
        rng::stream(
            self.seed,
            &[component::CANDIDATES, self.path, FACTOR_TAG, c as u64, phase_tag(phase)],
        )
    }
}

fn gaussian_series(mut rng: StreamRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

struct NoiseRule {
    meta: RuleMeta,
    key: StreamKey,
}

struct NoiseStepper(StreamRng);

impl Stepper for NoiseStepper {
    #[inline]
    fn score(&mut self, _past: &[f64]) -> f64 {
        self.0.sample(StandardNormal)
    }
}

impl SignalRule for NoiseRule {
    fn meta(&self) -> &RuleMeta {
        &self.meta
    }

    fn stepper(&self, phase: Phase, _start: usize, _len: usize) -> Box<dyn Stepper + '_> {
        Box::new(NoiseStepper(self.key.candidate(self.meta.index, phase)))
    }
}

/// √ρ·F_c + √(1−ρ)·ε_k with cluster factors shared across the family.
struct CorrelatedRule {
    meta: RuleMeta,
    key: StreamKey,
    cluster: usize,
    rho: f64,
    in_sample_factor: Arc<[f64]>,
}

struct CorrelatedStepper {
    factor: Arc<[f64]>,
    noise: Option<StreamRng>,
    load: f64,
    idio: f64,
    i: usize,
}

impl Stepper for CorrelatedStepper {
    #[inline]
    fn score(&mut self, _past: &[f64]) -> f64 {
        let f = self.factor[self.i];
        self.i += 1;
        match &mut self.noise {
            Some(rng) => {
                let e: f64 = rng.sample(StandardNormal);
                self.load * f + self.idio * e
            }
            None => self.load * f,
        }
    }
}

impl SignalRule for CorrelatedRule {
    fn meta(&self) -> &RuleMeta {
        &self.meta
    }

    fn stepper(&self, phase: Phase, _start: usize, len: usize) -> Box<dyn Stepper + '_> {
        let factor: Arc<[f64]> = match phase {
            Phase::InSample => self.in_sample_factor.clone(),
            Phase::WalkForward => Arc::from(gaussian_series(self.key.factor(self.cluster, phase), len)),
        };
        let idio = (1.0 - self.rho).max(0.0).sqrt();
        Box::new(CorrelatedStepper {
            factor,
            noise: (idio > 0.0).then(|| self.key.candidate(self.meta.index, phase)),
            load: self.rho.sqrt(),
            idio,
            i: 0,
        })
    }
}

struct ConstantRule {
    meta: RuleMeta,
    value: f64,
}

struct ConstantStepper(f64);

impl Stepper for ConstantStepper {
    fn score(&mut self, _past: &[f64]) -> f64 {
        self.0
    }
}

impl SignalRule for ConstantRule {
    fn meta(&self) -> &RuleMeta {
        &self.meta
    }

    fn stepper(&self, _phase: Phase, _start: usize, _len: usize) -> Box<dyn Stepper + '_> {
        Box::new(ConstantStepper(self.value))
    }
}

struct ContrarianRule {
    meta: RuleMeta,
    theta: f64,
    scale: f64,
    sigma: f64,
}

struct ContrarianStepper {
    gain: f64,
}

impl Stepper for ContrarianStepper {
    fn score(&mut self, past: &[f64]) -> f64 {
        match past.last() {
            Some(r) => (-self.gain * r).clamp(-1.0, 1.0),
            None => 0.0,
        }
    }
}

impl SignalRule for ContrarianRule {
    fn meta(&self) -> &RuleMeta {
        &self.meta
    }

    fn fit(&mut self, in_sample: &[f64]) {
        self.sigma = stats::std_dev(in_sample).unwrap_or(0.0);
    }

    fn stepper(&self, _phase: Phase, _start: usize, _len: usize) -> Box<dyn Stepper + '_> {
        let gain = if self.sigma > 0.0 {
            self.theta / (self.scale * self.sigma)
        } else {
            0.0
        };
        Box::new(ContrarianStepper { gain })
    }
}

fn trailing_std(past: &[f64], w: usize) -> Option<f64> {
    (past.len() >= w).then(|| stats::std_dev(&past[past.len() - w..]).unwrap_or(0.0))
}

struct RegimeRule {
    meta: RuleMeta,
    window: usize,
    q: f64,
    calm: f64,
    high: f64,
    cutoff: f64,
}

struct RegimeStepper<'a>(&'a RegimeRule);

impl Stepper for RegimeStepper<'_> {
    fn score(&mut self, past: &[f64]) -> f64 {
        let r = self.0;
        match trailing_std(past, r.window) {
            None => 0.0,
            Some(s) if s <= r.cutoff => r.calm,
            Some(_) => r.high,
        }
    }
}

impl SignalRule for RegimeRule {
    fn meta(&self) -> &RuleMeta {
        &self.meta
    }

    fn fit(&mut self, in_sample: &[f64]) {
        let vols: Vec<f64> = (self.window..in_sample.len())
            .filter_map(|t| trailing_std(&in_sample[..t], self.window))
            .collect();
        self.cutoff = stats::quantile(&vols, self.q).unwrap_or(f64::INFINITY);
    }

    fn stepper(&self, _phase: Phase, _start: usize, _len: usize) -> Box<dyn Stepper + '_> {
        Box::new(RegimeStepper(self))
    }
}

/// sign(S_L)·1{|S_L| > c·σ·√L} with S_L the trailing L-day return sum (partial sums at
/// the start of the sample).
struct TrendRule {
    meta: RuleMeta,
    lookback: usize,
    threshold: f64,
    nominal_sigma: Option<f64>,
    sigma: f64,
}

struct TrendStepper {
    lookback: usize,
    cut: f64,
}

impl Stepper for TrendStepper {
    fn score(&mut self, past: &[f64]) -> f64 {
        let from = past.len().saturating_sub(self.lookback);
        let s: f64 = past[from..].iter().sum();
        if s.abs() > self.cut {
            s.signum()
        } else {
            0.0
        }
    }
}

impl SignalRule for TrendRule {
    fn meta(&self) -> &RuleMeta {
        &self.meta
    }

    fn fit(&mut self, in_sample: &[f64]) {
        self.sigma = match self.nominal_sigma {
            Some(s) => s,
            None => stats::std_dev(in_sample).unwrap_or(0.0),
        };
    }

    fn stepper(&self, _phase: Phase, _start: usize, _len: usize) -> Box<dyn Stepper + '_> {
        Box::new(TrendStepper {
            lookback: self.lookback,
            cut: self.threshold * self.sigma * (self.lookback as f64).sqrt(),
        })
    }
}

/// Proof that the caller opted into a protocol violation.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolViolation {
    _private: (),
}

impl ProtocolViolation {
    pub fn acknowledge(spec: &WorkflowSpec) -> Result<Self> {
        if spec.allow_protocol_violation {
            Ok(Self { _private: () })
        } else {
            Err(Error::Contract(
                "building a lookahead rule requires allow_protocol_violation".into(),
            ))
        }
    }
}

/// x_t = sign(r_t): the position for day t is set with knowledge of day t's return.
/// This is the one rule that bypasses the causal window, which is why it can only be
/// built from a [`ProtocolViolation`].
pub struct LookaheadRule {
    meta: RuleMeta,
    returns: Arc<[f64]>,
}

impl LookaheadRule {
    pub fn new_violating(_token: ProtocolViolation, returns: Arc<[f64]>) -> Self {
        Self {
            meta: RuleMeta {
                id: "lookahead".into(),
                family: WorkflowFamily::Lookahead,
                index: 0,
            },
            returns,
        }
    }
}

struct LookaheadStepper {
    returns: Arc<[f64]>,
    t: usize,
}

impl Stepper for LookaheadStepper {
    fn score(&mut self, _past: &[f64]) -> f64 {
        let r = self.returns[self.t];
        self.t += 1;
        if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

impl SignalRule for LookaheadRule {
    fn meta(&self) -> &RuleMeta {
        &self.meta
    }

    fn stepper(&self, _phase: Phase, start: usize, _len: usize) -> Box<dyn Stepper + '_> {
        Box::new(LookaheadStepper {
            returns: self.returns.clone(),
            t: start,
        })
    }
}

fn meta(family: WorkflowFamily, index: usize, id: String) -> RuleMeta {
    RuleMeta { id, family, index }
}

/// Builds the K candidate rules for `spec`. `n_is` sizes pre-generated in-sample
/// factor series for correlated families.
pub fn build_candidates(spec: &WorkflowSpec, path: &ReturnPath) -> Result<Vec<Box<dyn SignalRule>>> {
    spec.validate()?;
    let n_is = (spec.split_ratio * path.len() as f64).floor() as usize;
    let key = StreamKey {
        seed: rng::derive_seed(spec.seed, &[component::WORKFLOW]),
        path: path.stream_key(),
    };
    let fam = spec.family();
    let k = spec.k;
    let rules: Vec<Box<dyn SignalRule>> = match &spec.strategy {
        Strategy::RandomBaseline | Strategy::DataMiner | Strategy::FeatureMining => (0..k)
            .map(|j| {
                Box::new(NoiseRule {
                    meta: meta(fam, j, format!("noise{j}")),
                    key,
                }) as Box<dyn SignalRule>
            })
            .collect(),
        Strategy::Lookahead => {
            let token = ProtocolViolation::acknowledge(spec)?;
            vec![Box::new(LookaheadRule::new_violating(
                token,
                Arc::from(path.returns.as_slice()),
            ))]
        }
        Strategy::Contrarian(p) => vec![Box::new(ContrarianRule {
            meta: meta(fam, 0, "contrarian".into()),
            theta: p.theta,
            scale: p.scale,
            sigma: 0.0,
        })],
        Strategy::RegimeDetector(p) => vec![Box::new(RegimeRule {
            meta: meta(fam, 0, format!("regime_w{}", p.window)),
            window: p.window,
            q: p.cutoff_quantile,
            calm: p.calm_position,
            high: p.high_vol_position,
            cutoff: f64::INFINITY,
        })],
        Strategy::FactorMimic => vec![Box::new(ConstantRule {
            meta: meta(fam, 0, "unit_exposure".into()),
            value: 1.0,
        })],
        Strategy::CorrelatedFamilySearch(p) => {
            let factors: Vec<Arc<[f64]>> = (0..p.clusters)
                .map(|c| Arc::from(gaussian_series(key.factor(c, Phase::InSample), n_is)))
                .collect();
            p.assignment(k)
                .into_iter()
                .enumerate()
                .map(|(j, c)| {
                    Box::new(CorrelatedRule {
                        meta: meta(fam, j, format!("c{c}_m{j}")),
                        key,
                        cluster: c,
                        rho: p.rho,
                        in_sample_factor: factors[c].clone(),
                    }) as Box<dyn SignalRule>
                })
                .collect()
        }
        Strategy::TrendFollowing(p) => {
            let nominal = match p.sigma_scale {
                SigmaScale::Nominal => path.nominal_sigma_daily(),
                SigmaScale::InSample => None,
            };
            p.lookbacks
                .iter()
                .flat_map(|&l| p.thresholds.iter().map(move |&c| (l, c)))
                .take(k)
                .enumerate()
                .map(|(j, (l, c))| {
                    Box::new(TrendRule {
                        meta: meta(fam, j, format!("breakout_L{l}_c{c:.1}")),
                        lookback: l,
                        threshold: c,
                        nominal_sigma: nominal,
                        sigma: 0.0,
                    }) as Box<dyn SignalRule>
                })
                .collect()
        }
    };
    Ok(rules)
}
