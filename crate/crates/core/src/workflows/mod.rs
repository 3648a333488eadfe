//! Adaptive search with strict in-sample / walk-forward separation.
//!
//! A [`WorkflowSpec`] names a candidate family and a search size K. Candidates are
//! causal [`SignalRule`]s that only ever see returns strictly before the day they score.
//! [`run_selection`] scores all K candidates on the in-sample block, picks the largest
//! |Z|, and only then evaluates that single winner on the walk-forward block.

mod costs;
mod engine;
mod rules;
mod transform;

pub use costs::{breakeven_cost, BreakEven};
pub use engine::{
    run_selection, run_selection_traced, Selection, SelectionEngine, SelectionOutcome,
    WalkForwardTrace,
};
pub use rules::{build_candidates, LookaheadRule, ProtocolViolation, RuleMeta, SignalRule, Stepper};
pub use transform::{apply_threshold, FittedTransform, ThresholdTransform};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowFamily {
    RandomBaseline,
    DataMiner,
    Lookahead,
    Contrarian,
    RegimeDetector,
    FactorMimic,
    FeatureMining,
    CorrelatedFamilySearch,
    TrendFollowing,
}

impl WorkflowFamily {
    pub const ALL: [WorkflowFamily; 9] = [
        WorkflowFamily::RandomBaseline,
        WorkflowFamily::DataMiner,
        WorkflowFamily::Lookahead,
        WorkflowFamily::Contrarian,
        WorkflowFamily::RegimeDetector,
        WorkflowFamily::FactorMimic,
        WorkflowFamily::FeatureMining,
        WorkflowFamily::CorrelatedFamilySearch,
        WorkflowFamily::TrendFollowing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkflowFamily::RandomBaseline => "RandomBaseline",
            WorkflowFamily::DataMiner => "DataMiner",
            WorkflowFamily::Lookahead => "Lookahead",
            WorkflowFamily::Contrarian => "Contrarian",
            WorkflowFamily::RegimeDetector => "RegimeDetector",
            WorkflowFamily::FactorMimic => "FactorMimic",
            WorkflowFamily::FeatureMining => "FeatureMining",
            WorkflowFamily::CorrelatedFamilySearch => "CorrelatedFamilySearch",
            WorkflowFamily::TrendFollowing => "TrendFollowing",
        }
    }
}

impl std::fmt::Display for WorkflowFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrarianParams {
    pub theta: f64,
    /// Positions are −θ·r_{t−1} / (scale·σ̂_IS), clipped to [−1, 1].
    pub scale: f64,
}

impl Default for ContrarianParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            scale: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeDetectorParams {
    pub window: usize,
    pub cutoff_quantile: f64,
    pub calm_position: f64,
    pub high_vol_position: f64,
}

impl Default for RegimeDetectorParams {
    fn default() -> Self {
        Self {
            window: 20,
            cutoff_quantile: 0.8,
            calm_position: 1.0,
            high_vol_position: -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLayout {
    /// Contiguous clusters whose sizes differ by at most one.
    Balanced,
    /// Cluster c gets a share proportional to c + 1.
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelatedParams {
    pub clusters: usize,
    pub rho: f64,
    pub layout: ClusterLayout,
}

impl Default for CorrelatedParams {
    fn default() -> Self {
        Self {
            clusters: 3,
            rho: 0.8,
            layout: ClusterLayout::Balanced,
        }
    }
}

impl CorrelatedParams {
    /// Cluster index for each of `k` candidates.
    pub fn assignment(&self, k: usize) -> Vec<usize> {
        let m = self.clusters;
        match self.layout {
            ClusterLayout::Balanced => (0..k).map(|i| i * m / k).collect(),
            ClusterLayout::Heterogeneous => {
                let sizes = self.sizes(k);
                sizes
                    .iter()
                    .enumerate()
                    .flat_map(|(c, &s)| std::iter::repeat(c).take(s))
                    .collect()
            }
        }
    }

    pub fn sizes(&self, k: usize) -> Vec<usize> {
        let m = self.clusters;
        match self.layout {
            ClusterLayout::Balanced => {
                let mut s = vec![0; m];
                for c in self.assignment(k) {
                    s[c] += 1;
                }
                s
            }
            ClusterLayout::Heterogeneous => {
                // One member each, the remainder split in proportion to c + 1.
                let total: usize = (1..=m).sum();
                let spare = k - m;
                let mut s: Vec<usize> = (1..=m).map(|w| 1 + spare * w / total).collect();
                let mut short = k - s.iter().sum::<usize>();
                let mut c = m;
                while short > 0 {
                    c = if c == 0 { m - 1 } else { c - 1 };
                    s[c] += 1;
                    short -= 1;
                }
                s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaScale {
    /// The environment's nominal daily innovation scale; in-sample std when unknown.
    Nominal,
    /// Sample standard deviation of in-sample returns.
    InSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrendParams {
    /// Lookback windows L; the signal is the trailing L-day return sum.
    pub lookbacks: Vec<usize>,
    /// Breakout thresholds c in units of σ·√L.
    pub thresholds: Vec<f64>,
    /// Candidates with fewer in-sample entries are not eligible for selection.
    pub min_trades: usize,
    pub sigma_scale: SigmaScale,
}

impl Default for TrendParams {
    fn default() -> Self {
        Self {
            lookbacks: vec![1],
            thresholds: breakout_grid(),
            min_trades: 10,
            sigma_scale: SigmaScale::Nominal,
        }
    }
}

/// {0.5, 0.7, ..., 3.5}
pub fn breakout_grid() -> Vec<f64> {
    (0..16).map(|i| 0.5 + 0.2 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Strategy {
    RandomBaseline,
    DataMiner,
    FeatureMining,
    Lookahead,
    Contrarian(ContrarianParams),
    RegimeDetector(RegimeDetectorParams),
    FactorMimic,
    CorrelatedFamilySearch(CorrelatedParams),
    TrendFollowing(TrendParams),
}

impl Strategy {
    pub fn family(&self) -> WorkflowFamily {
        match self {
            Strategy::RandomBaseline => WorkflowFamily::RandomBaseline,
            Strategy::DataMiner => WorkflowFamily::DataMiner,
            Strategy::FeatureMining => WorkflowFamily::FeatureMining,
            Strategy::Lookahead => WorkflowFamily::Lookahead,
            Strategy::Contrarian(_) => WorkflowFamily::Contrarian,
            Strategy::RegimeDetector(_) => WorkflowFamily::RegimeDetector,
            Strategy::FactorMimic => WorkflowFamily::FactorMimic,
            Strategy::CorrelatedFamilySearch(_) => WorkflowFamily::CorrelatedFamilySearch,
            Strategy::TrendFollowing(_) => WorkflowFamily::TrendFollowing,
        }
    }

    /// Transform applied to scores when the spec does not override it.
    pub fn default_transform(&self) -> ThresholdTransform {
        match self {
            Strategy::DataMiner | Strategy::FeatureMining => ThresholdTransform::SignOnly,
            _ => ThresholdTransform::None,
        }
    }
}

/// Which K̂_eff panels a selection run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplicityMode {
    None,
    Prediction,
    Signal,
    Both,
}

impl MultiplicityMode {
    pub fn prediction(self) -> bool {
        matches!(self, MultiplicityMode::Prediction | MultiplicityMode::Both)
    }

    pub fn signal(self) -> bool {
        matches!(self, MultiplicityMode::Signal | MultiplicityMode::Both)
    }
}

/// Series on which K̂_eff is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeffBasis {
    /// The scores (prediction panel) or positions (signal panel) themselves.
    Positions,
    /// Scores or positions multiplied by the day's return, i.e. realized strategy returns.
    StrategyReturns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub strategy: Strategy,
    pub k: usize,
    #[serde(default = "default_split")]
    pub split_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<ThresholdTransform>,
    #[serde(default = "default_mode")]
    pub multiplicity: MultiplicityMode,
    #[serde(default = "default_basis")]
    pub keff_basis: KeffBasis,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Must be set for Lookahead, which deliberately reads the current day's return.
    #[serde(default)]
    pub allow_protocol_violation: bool,
}

fn default_split() -> f64 {
    0.6
}
fn default_mode() -> MultiplicityMode {
    MultiplicityMode::Both
}
fn default_basis() -> KeffBasis {
    KeffBasis::StrategyReturns
}
fn default_tau() -> f64 {
    0.5
}

impl WorkflowSpec {
    pub fn new(strategy: Strategy, k: usize) -> Self {
        Self {
            strategy,
            k,
            split_ratio: default_split(),
            seed: 0,
            transform: None,
            multiplicity: default_mode(),
            keff_basis: default_basis(),
            tau: default_tau(),
            allow_protocol_violation: false,
        }
    }

    /// The canonical pipeline for a family with default parameters and search size.
    pub fn default_for(family: WorkflowFamily) -> Self {
        let (strategy, k) = match family {
            WorkflowFamily::RandomBaseline => (Strategy::RandomBaseline, 1),
            WorkflowFamily::DataMiner => (Strategy::DataMiner, 100),
            WorkflowFamily::FeatureMining => (Strategy::FeatureMining, 100),
            WorkflowFamily::Lookahead => (Strategy::Lookahead, 1),
            WorkflowFamily::Contrarian => (Strategy::Contrarian(Default::default()), 1),
            WorkflowFamily::RegimeDetector => (Strategy::RegimeDetector(Default::default()), 1),
            WorkflowFamily::FactorMimic => (Strategy::FactorMimic, 1),
            WorkflowFamily::CorrelatedFamilySearch => {
                (Strategy::CorrelatedFamilySearch(Default::default()), 100)
            }
            WorkflowFamily::TrendFollowing => (Strategy::TrendFollowing(Default::default()), 16),
        };
        let mut spec = Self::new(strategy, k);
        spec.allow_protocol_violation = family == WorkflowFamily::Lookahead;
        spec
    }

    pub fn family(&self) -> WorkflowFamily {
        self.strategy.family()
    }

    pub fn transform(&self) -> ThresholdTransform {
        self.transform
            .unwrap_or_else(|| self.strategy.default_transform())
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Contract("K must be >= 1".into()));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Contract(format!(
                "split_ratio must lie in (0,1), got {}",
                self.split_ratio
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Contract(format!("tau must be > 0, got {}", self.tau)));
        }
        self.transform().validate()?;
        let single = |name: &str| {
            if self.k == 1 {
                Ok(())
            } else {
                Err(Error::Contract(format!("{name} is a single-candidate workflow, got K={}", self.k)))
            }
        };
        match &self.strategy {
            Strategy::RandomBaseline => single("RandomBaseline"),
            Strategy::FactorMimic => single("FactorMimic"),
            Strategy::Lookahead => {
                single("Lookahead")?;
                if self.allow_protocol_violation {
                    Ok(())
                } else {
                    Err(Error::Contract(
                        "Lookahead reads the current return and requires allow_protocol_violation"
                            .into(),
                    ))
                }
            }
            Strategy::Contrarian(p) => {
                single("Contrarian")?;
                if p.theta > 0.0 && p.scale > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Contract("Contrarian theta and scale must be > 0".into()))
                }
            }
            Strategy::RegimeDetector(p) => {
                single("RegimeDetector")?;
                if p.window < 2 || !(p.cutoff_quantile > 0.0 && p.cutoff_quantile < 1.0) {
                    Err(Error::Contract(
                        "RegimeDetector needs window >= 2 and cutoff quantile in (0,1)".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            Strategy::DataMiner | Strategy::FeatureMining => Ok(()),
            Strategy::CorrelatedFamilySearch(p) => {
                if p.clusters < 1 || p.clusters > self.k {
                    return Err(Error::Contract(format!(
                        "clusters must lie in [1, K], got {} with K={}",
                        p.clusters, self.k
                    )));
                }
                if !(0.0..=1.0).contains(&p.rho) {
                    return Err(Error::Contract(format!("rho must lie in [0,1], got {}", p.rho)));
                }
                Ok(())
            }
            Strategy::TrendFollowing(p) => {
                let grid = p.lookbacks.len() * p.thresholds.len();
                if p.lookbacks.iter().any(|&l| l == 0) {
                    return Err(Error::Contract("lookbacks must be >= 1".into()));
                }
                if p.thresholds.iter().any(|c| !(*c >= 0.0)) {
                    return Err(Error::Contract("breakout thresholds must be >= 0".into()));
                }
                if self.k > grid {
                    return Err(Error::Contract(format!(
                        "K={} exceeds the {grid}-rule lookback x threshold grid",
                        self.k
                    )));
                }
                Ok(())
            }
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("workflow spec serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
