//! Induced-null return generators.
//!
//! Five canonical null families (white noise, Markov regime-switching volatility,
//! an MA(1) bid-ask placebo, a zero-alpha one-factor model and GARCH(1,1)), a threshold
//! autoregressive positive control, and a trend-regime process used to exercise
//! transaction-cost accounting. Generation is a pure function of the spec: the same
//! `(params, length_t, seed)` always yields the same bits.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, component};
use crate::{Error, Result, TRADING_DAYS};

const GARCH_BURN_IN: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    WhiteNoise,
    RegimeSwitch,
    #[serde(rename = "ma1_placebo")]
    MA1Placebo,
    FactorNull,
    Garch11,
    TarPositive,
    TrendRegime,
}

impl Family {
    pub const CANONICAL: [Family; 5] = [
        Family::WhiteNoise,
        Family::RegimeSwitch,
        Family::MA1Placebo,
        Family::FactorNull,
        Family::Garch11,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::WhiteNoise => "WhiteNoise",
            Family::RegimeSwitch => "RegimeSwitch",
            Family::MA1Placebo => "MA1Placebo",
            Family::FactorNull => "FactorNull",
            Family::Garch11 => "Garch11",
            Family::TarPositive => "TarPositive",
            Family::TrendRegime => "TrendRegime",
        }
    }

    /// Whether the family has zero conditional mean given the past of observed returns.
    pub fn is_mds(self) -> bool {
        matches!(
            self,
            Family::WhiteNoise | Family::RegimeSwitch | Family::FactorNull | Family::Garch11
        )
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteNoiseParams {
    pub sigma_ann: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSwitchParams {
    pub sigma_ann_low: f64,
    pub vol_multiplier: f64,
    pub p11: f64,
    pub p22: f64,
}

impl RegimeSwitchParams {
    /// Stationary probability of the low-volatility state.
    pub fn stationary_low(&self) -> f64 {
        (1.0 - self.p22) / ((1.0 - self.p11) + (1.0 - self.p22))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MA1PlaceboParams {
    pub sigma_ann: f64,
    pub theta: f64,
}

impl MA1PlaceboParams {
    /// Innovation scale chosen so that Var(r_t) equals the daily target exactly.
    pub fn sigma_eps(&self) -> f64 {
        daily(self.sigma_ann) / (1.0 + self.theta * self.theta).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorNullParams {
    pub beta: f64,
    pub sigma_f_ann: f64,
    pub sigma_e_ann: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Garch11Params {
    pub alpha: f64,
    pub beta: f64,
    pub sigma_ann: f64,
}

impl Garch11Params {
    pub fn omega(&self) -> f64 {
        let s = daily(self.sigma_ann);
        (1.0 - self.alpha - self.beta) * s * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TarParams {
    pub phi: f64,
    pub theta_act: f64,
    pub sigma_ann: f64,
}

/// Persistent ±1 trend states with Gaussian noise: r_t = s_t·μ + σ·ε_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRegimeParams {
    pub sigma_ann: f64,
    /// Annualized Sharpe ratio of the trend component, μ·252 / σ_ann.
    pub trend_sharpe: f64,
    /// Daily probability of staying in the current trend state.
    pub persistence: f64,
}

impl TrendRegimeParams {
    pub fn daily_drift(&self) -> f64 {
        self.trend_sharpe * self.sigma_ann / TRADING_DAYS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EnvParams {
    WhiteNoise(WhiteNoiseParams),
    RegimeSwitch(RegimeSwitchParams),
    #[serde(rename = "ma1_placebo")]
    MA1Placebo(MA1PlaceboParams),
    FactorNull(FactorNullParams),
    Garch11(Garch11Params),
    TarPositive(TarParams),
    TrendRegime(TrendRegimeParams),
}

/// Annualized volatility to a daily scale.
pub fn daily(sigma_ann: f64) -> f64 {
    sigma_ann / TRADING_DAYS.sqrt()
}

/// Default calibration for each family.
pub fn default_calibration(family: Family) -> EnvParams {
    match family {
        Family::WhiteNoise => EnvParams::WhiteNoise(WhiteNoiseParams { sigma_ann: 0.20 }),
        Family::RegimeSwitch => EnvParams::RegimeSwitch(RegimeSwitchParams {
            sigma_ann_low: 0.10,
            vol_multiplier: 3.0,
            p11: 0.98,
            p22: 0.98,
        }),
        Family::MA1Placebo => EnvParams::MA1Placebo(MA1PlaceboParams {
            sigma_ann: 0.20,
            theta: -0.5,
        }),
        Family::FactorNull => EnvParams::FactorNull(FactorNullParams {
            beta: 1.0,
            sigma_f_ann: 0.20,
            sigma_e_ann: 0.10,
        }),
        Family::Garch11 => EnvParams::Garch11(Garch11Params {
            alpha: 0.10,
            beta: 0.85,
            sigma_ann: 0.20,
        }),
        Family::TarPositive => EnvParams::TarPositive(TarParams {
            phi: 0.15,
            theta_act: 2.0,
            sigma_ann: 0.15,
        }),
        Family::TrendRegime => EnvParams::TrendRegime(TrendRegimeParams {
            sigma_ann: 0.15,
            trend_sharpe: 2.0,
            persistence: 0.992,
        }),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("{name} must be > 0, got {v}")))
    }
}

fn open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!("{name} must lie in (0,1), got {v}")))
    }
}

impl EnvParams {
    pub fn family(&self) -> Family {
        match self {
            EnvParams::WhiteNoise(_) => Family::WhiteNoise,
            EnvParams::RegimeSwitch(_) => Family::RegimeSwitch,
            EnvParams::MA1Placebo(_) => Family::MA1Placebo,
            EnvParams::FactorNull(_) => Family::FactorNull,
            EnvParams::Garch11(_) => Family::Garch11,
            EnvParams::TarPositive(_) => Family::TarPositive,
            EnvParams::TrendRegime(_) => Family::TrendRegime,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvParams::WhiteNoise(p) => positive("sigma_ann", p.sigma_ann),
            EnvParams::RegimeSwitch(p) => {
                positive("sigma_ann_low", p.sigma_ann_low)?;
                if !(p.vol_multiplier > 1.0) || !p.vol_multiplier.is_finite() {
                    return Err(Error::ParameterDomain(format!(
                        "vol_multiplier must be > 1, got {}",
                        p.vol_multiplier
                    )));
                }
                open_unit("p11", p.p11)?;
                open_unit("p22", p.p22)
            }
            EnvParams::MA1Placebo(p) => {
                positive("sigma_ann", p.sigma_ann)?;
                if p.theta.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(Error::ParameterDomain(format!(
                        "MA(1) theta must satisfy |theta| < 1, got {}",
                        p.theta
                    )))
                }
            }
            EnvParams::FactorNull(p) => {
                if !p.beta.is_finite() {
                    return Err(Error::ParameterDomain("beta must be finite".into()));
                }
                positive("sigma_f_ann", p.sigma_f_ann)?;
                positive("sigma_e_ann", p.sigma_e_ann)
            }
            EnvParams::Garch11(p) => {
                positive("sigma_ann", p.sigma_ann)?;
                if !(p.alpha >= 0.0 && p.beta >= 0.0) {
                    return Err(Error::ParameterDomain(format!(
                        "GARCH coefficients must be non-negative, got alpha={} beta={}",
                        p.alpha, p.beta
                    )));
                }
                if p.alpha + p.beta >= 1.0 {
                    return Err(Error::ParameterDomain(format!(
                        "GARCH requires alpha + beta < 1, got {}",
                        p.alpha + p.beta
                    )));
                }
                Ok(())
            }
            EnvParams::TarPositive(p) => {
                positive("sigma_ann", p.sigma_ann)?;
                if !p.phi.is_finite() || p.phi.abs() >= 1.0 {
                    return Err(Error::ParameterDomain(format!(
                        "TAR phi must satisfy |phi| < 1, got {}",
                        p.phi
                    )));
                }
                if !(p.theta_act >= 0.0) {
                    return Err(Error::ParameterDomain(format!(
                        "theta_act must be >= 0, got {}",
                        p.theta_act
                    )));
                }
                Ok(())
            }
            EnvParams::TrendRegime(p) => {
                positive("sigma_ann", p.sigma_ann)?;
                if !p.trend_sharpe.is_finite() {
                    return Err(Error::ParameterDomain("trend_sharpe must be finite".into()));
                }
                open_unit("persistence", p.persistence)
            }
        }
    }

    /// Names of the scalar parameters, in declaration order.
    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            EnvParams::WhiteNoise(_) => &["sigma_ann"],
            EnvParams::RegimeSwitch(_) => &["sigma_ann_low", "vol_multiplier", "p11", "p22"],
            EnvParams::MA1Placebo(_) => &["sigma_ann", "theta"],
            EnvParams::FactorNull(_) => &["beta", "sigma_f_ann", "sigma_e_ann"],
            EnvParams::Garch11(_) => &["alpha", "beta", "sigma_ann"],
            EnvParams::TarPositive(_) => &["phi", "theta_act", "sigma_ann"],
            EnvParams::TrendRegime(_) => &["sigma_ann", "trend_sharpe", "persistence"],
        }
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match (self, name) {
            (EnvParams::WhiteNoise(p), "sigma_ann") => &mut p.sigma_ann,
            (EnvParams::RegimeSwitch(p), "sigma_ann_low") => &mut p.sigma_ann_low,
            (EnvParams::RegimeSwitch(p), "vol_multiplier") => &mut p.vol_multiplier,
            (EnvParams::RegimeSwitch(p), "p11") => &mut p.p11,
            (EnvParams::RegimeSwitch(p), "p22") => &mut p.p22,
            (EnvParams::MA1Placebo(p), "sigma_ann") => &mut p.sigma_ann,
            (EnvParams::MA1Placebo(p), "theta") => &mut p.theta,
            (EnvParams::FactorNull(p), "beta") => &mut p.beta,
            (EnvParams::FactorNull(p), "sigma_f_ann") => &mut p.sigma_f_ann,
            (EnvParams::FactorNull(p), "sigma_e_ann") => &mut p.sigma_e_ann,
            (EnvParams::Garch11(p), "alpha") => &mut p.alpha,
            (EnvParams::Garch11(p), "beta") => &mut p.beta,
            (EnvParams::Garch11(p), "sigma_ann") => &mut p.sigma_ann,
            (EnvParams::TarPositive(p), "phi") => &mut p.phi,
            (EnvParams::TarPositive(p), "theta_act") => &mut p.theta_act,
            (EnvParams::TarPositive(p), "sigma_ann") => &mut p.sigma_ann,
            (EnvParams::TrendRegime(p), "sigma_ann") => &mut p.sigma_ann,
            (EnvParams::TrendRegime(p), "trend_sharpe") => &mut p.trend_sharpe,
            (EnvParams::TrendRegime(p), "persistence") => &mut p.persistence,
            (p, other) => {
                return Err(Error::ParameterDomain(format!(
                    "{} has no parameter named {other:?}",
                    p.family()
                )))
            }
        };
        *slot = value;
        Ok(())
    }

    /// Daily scale of the driving innovation. Breakout and activation thresholds are
    /// quoted in these units.
    pub fn nominal_sigma_daily(&self) -> f64 {
        match self {
            EnvParams::WhiteNoise(p) => daily(p.sigma_ann),
            EnvParams::RegimeSwitch(p) => {
                let lo = daily(p.sigma_ann_low);
                let hi = lo * p.vol_multiplier;
                let pi = p.stationary_low();
                (pi * lo * lo + (1.0 - pi) * hi * hi).sqrt()
            }
            EnvParams::MA1Placebo(p) => daily(p.sigma_ann),
            EnvParams::FactorNull(p) => {
                let f = daily(p.sigma_f_ann);
                let e = daily(p.sigma_e_ann);
                (p.beta * p.beta * f * f + e * e).sqrt()
            }
            EnvParams::Garch11(p) => daily(p.sigma_ann),
            EnvParams::TarPositive(p) => daily(p.sigma_ann),
            EnvParams::TrendRegime(p) => daily(p.sigma_ann),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub params: EnvParams,
    pub length_t: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl EnvironmentSpec {
    pub fn new(params: EnvParams, length_t: usize, seed: u64) -> Self {
        Self {
            params,
            length_t,
            seed,
            label: None,
        }
    }

    pub fn default_for(family: Family, length_t: usize, seed: u64) -> Self {
        Self::new(default_calibration(family), length_t, seed)
    }

    pub fn family(&self) -> Family {
        self.params.family()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.family().name().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_t < 2 {
            return Err(Error::ParameterDomain(format!(
                "length_t must be >= 2, got {}",
                self.length_t
            )));
        }
        self.params.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// A daily return series with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPath {
    pub returns: Vec<f64>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<EnvironmentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dates: Option<Vec<String>>,
}

impl ReturnPath {
    pub fn from_returns(label: impl Into<String>, returns: Vec<f64>) -> Self {
        Self {
            returns,
            label: label.into(),
            seed: None,
            spec: None,
            dates: None,
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Seed used to key workflow randomness. Ingested paths hash their label.
    pub fn stream_key(&self) -> u64 {
        self.seed.unwrap_or_else(|| rng::label_key(&self.label))
    }

    pub fn nominal_sigma_daily(&self) -> Option<f64> {
        self.spec.as_ref().map(|s| s.params.nominal_sigma_daily())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "r_t"])?;
        for (t, r) in self.returns.iter().enumerate() {
            w.write_record([t.to_string(), format!("{r:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columnar little-endian dump: magic, length, then the f64 returns.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.returns.len() as u64).to_le_bytes())?;
        for r in &self.returns {
            w.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(label: impl Into<String>, mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Ingestion {
                row: 0,
                message: "not a return-path dump (bad magic)".into(),
            });
        }
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        let mut returns = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            returns.push(f64::from_le_bytes(buf));
        }
        Ok(Self::from_returns(label, returns))
    }
}

const BINARY_MAGIC: &[u8; 8] = b"FSFYRP01";

/// Generates the path described by `spec`.
pub fn generate(spec: &EnvironmentSpec) -> Result<ReturnPath> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, &[component::PATH]);
    let t = spec.length_t;
    let returns = match &spec.params {
        EnvParams::WhiteNoise(p) => {
            let s = daily(p.sigma_ann);
            (0..t).map(|_| s * normal(&mut rng)).collect()
        }
        EnvParams::RegimeSwitch(p) => regime_switch(p, t, &mut rng),
        EnvParams::MA1Placebo(p) => ma1(p, t, &mut rng),
        EnvParams::FactorNull(p) => {
            let sf = daily(p.sigma_f_ann);
            let se = daily(p.sigma_e_ann);
            (0..t)
                .map(|_| {
                    let f = sf * normal(&mut rng);
                    let e = se * normal(&mut rng);
                    p.beta * f + e
                })
                .collect()
        }
        EnvParams::Garch11(p) => garch(p, t, &mut rng),
        EnvParams::TarPositive(p) => tar(p, t, &mut rng),
        EnvParams::TrendRegime(p) => trend_regime(p, t, &mut rng),
    };
    Ok(ReturnPath {
        returns,
        label: spec.label(),
        seed: Some(spec.seed),
        spec: Some(spec.clone()),
        dates: None,
    })
}

#[inline]
fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn regime_switch<R: Rng>(p: &RegimeSwitchParams, t: usize, rng: &mut R) -> Vec<f64> {
    let lo = daily(p.sigma_ann_low);
    let hi = lo * p.vol_multiplier;
    let mut low = rng.gen::<f64>() < p.stationary_low();
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        if i > 0 {
            let stay = if low { p.p11 } else { p.p22 };
            if rng.gen::<f64>() >= stay {
                low = !low;
            }
        }
        let s = if low { lo } else { hi };
        out.push(s * normal(rng));
    }
    out
}

fn ma1<R: Rng>(p: &MA1PlaceboParams, t: usize, rng: &mut R) -> Vec<f64> {
    let se = p.sigma_eps();
    let mut prev = se * normal(rng);
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let u = se * normal(rng);
        out.push(u + p.theta * prev);
        prev = u;
    }
    out
}

fn garch<R: Rng>(p: &Garch11Params, t: usize, rng: &mut R) -> Vec<f64> {
    let omega = p.omega();
    let s = daily(p.sigma_ann);
    let mut h = s * s;
    let mut prev_r = 0.0;
    let mut out = Vec::with_capacity(t);
    for i in 0..(t + GARCH_BURN_IN) {
        if i > 0 {
            h = omega + p.alpha * prev_r * prev_r + p.beta * h;
        }
        let r = h.sqrt() * normal(rng);
        if i >= GARCH_BURN_IN {
            out.push(r);
        }
        prev_r = r;
    }
    out
}

fn tar<R: Rng>(p: &TarParams, t: usize, rng: &mut R) -> Vec<f64> {
    let s = daily(p.sigma_ann);
    let cut = p.theta_act * s;
    let mut prev = 0.0f64;
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let ar = if prev.abs() > cut { p.phi * prev } else { 0.0 };
        let r = ar + s * normal(rng);
        out.push(r);
        prev = r;
    }
    out
}

fn trend_regime<R: Rng>(p: &TrendRegimeParams, t: usize, rng: &mut R) -> Vec<f64> {
    let s = daily(p.sigma_ann);
    let mu = p.daily_drift();
    let mut state = if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let mut out = Vec::with_capacity(t);
    for i in 0..t {
        if i > 0 && rng.gen::<f64>() >= p.persistence {
            state = -state;
        }
        out.push(state * mu + s * normal(rng));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Dev,
    Audit,
}

/// Uniform ranges over a family's parameters for blind-protocol draws. Parameters not
/// named in `ranges` keep the family's default calibration (or `base`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDistribution {
    pub family: Family,
    pub ranges: BTreeMap<String, (f64, f64)>,
    pub draw_count: usize,
    pub seed: u64,
    pub role: Role,
    pub length_t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<EnvParams>,
}

impl ParameterDistribution {
    fn base_params(&self) -> Result<EnvParams> {
        let base = self
            .base
            .clone()
            .unwrap_or_else(|| default_calibration(self.family));
        if base.family() != self.family {
            return Err(Error::Config(format!(
                "base parameters are {} but the distribution is {}",
                base.family(),
                self.family
            )));
        }
        Ok(base)
    }

    /// Seed lineage for this distribution's draws. The role is folded in, so Dev and
    /// Audit sets never share a lineage even with the same numeric seed.
    pub fn lineage(&self) -> u64 {
        let role_key = match self.role {
            Role::Dev => 0xDE5,
            Role::Audit => 0xA0D17,
        };
        rng::derive_seed(
            self.seed,
            &[component::PARAMETERS, role_key, rng::label_key(self.family.name())],
        )
    }

    /// Checks every corner of the range box against the family's domain.
    pub fn validate(&self) -> Result<()> {
        let base = self.base_params()?;
        let names: Vec<&String> = self.ranges.keys().collect();
        for (name, (lo, hi)) in &self.ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::ParameterDomain(format!(
                    "range for {name} must be finite with lo <= hi, got [{lo}, {hi}]"
                )));
            }
        }
        if names.len() > 16 {
            return Err(Error::Config("at most 16 ranged parameters".into()));
        }
        for mask in 0u32..(1u32 << names.len()) {
            let mut p = base.clone();
            for (i, name) in names.iter().enumerate() {
                let (lo, hi) = self.ranges[*name];
                p.set(name, if mask & (1 << i) == 0 { lo } else { hi })?;
            }
            p.validate().map_err(|e| {
                Error::ParameterDomain(format!("range corner outside the domain: {e}"))
            })?;
        }
        if self.length_t < 2 {
            return Err(Error::ParameterDomain("length_t must be >= 2".into()));
        }
        Ok(())
    }
}

/// Draws `draw_count` environment specs. Each draw records its own seed, derived from
/// the distribution's role-specific lineage, so any draw can be replayed.
pub fn draw_parameter_sets(dist: &ParameterDistribution) -> Result<Vec<EnvironmentSpec>> {
    dist.validate()?;
    let base = dist.base_params()?;
    let lineage = dist.lineage();
    let mut rng = rng::stream(lineage, &[]);
    let role = match dist.role {
        Role::Dev => "dev",
        Role::Audit => "audit",
    };
    let mut out = Vec::with_capacity(dist.draw_count);
    for i in 0..dist.draw_count {
        let mut p = base.clone();
        for (name, (lo, hi)) in &dist.ranges {
            let u: f64 = rng.gen();
            p.set(name, lo + (hi - lo) * u)?;
        }
        let seed = rng::derive_seed(lineage, &[i as u64]);
        let mut spec = EnvironmentSpec::new(p, dist.length_t, seed);
        spec.label = Some(format!("{}/{role}/{i}", dist.family));
        out.push(spec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_var(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn defaults_match_reference_calibration() {
        assert_eq!(
            default_calibration(Family::RegimeSwitch),
            EnvParams::RegimeSwitch(RegimeSwitchParams {
                sigma_ann_low: 0.10,
                vol_multiplier: 3.0,
                p11: 0.98,
                p22: 0.98
            })
        );
        match default_calibration(Family::Garch11) {
            EnvParams::Garch11(p) => assert_eq!((p.alpha, p.beta, p.sigma_ann), (0.10, 0.85, 0.20)),
            _ => unreachable!(),
        }
        match default_calibration(Family::WhiteNoise) {
            EnvParams::WhiteNoise(p) => assert_eq!(p.sigma_ann, 0.20),
            _ => unreachable!(),
        }
    }

    #[test]
    fn white_noise_hits_annual_vol() {
        let path = generate(&EnvironmentSpec::default_for(Family::WhiteNoise, 2520, 11)).unwrap();
        let ann = sample_var(&path.returns).sqrt() * TRADING_DAYS.sqrt();
        assert!((0.19..=0.21).contains(&ann), "{ann}");
    }

    #[test]
    fn generation_is_bit_identical() {
        for fam in Family::CANONICAL {
            let spec = EnvironmentSpec::default_for(fam, 300, 99);
            assert_eq!(generate(&spec).unwrap().returns, generate(&spec).unwrap().returns);
            assert_ne!(
                generate(&spec).unwrap().returns,
                generate(&spec.with_seed(100)).unwrap().returns
            );
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        let bad = [
            EnvParams::MA1Placebo(MA1PlaceboParams { sigma_ann: 0.2, theta: 1.0 }),
            EnvParams::Garch11(Garch11Params { alpha: 0.2, beta: 0.8, sigma_ann: 0.2 }),
            EnvParams::RegimeSwitch(RegimeSwitchParams {
                sigma_ann_low: 0.1,
                vol_multiplier: 3.0,
                p11: 1.0,
                p22: 0.5,
            }),
            EnvParams::WhiteNoise(WhiteNoiseParams { sigma_ann: 0.0 }),
        ];
        for p in bad {
            let err = generate(&EnvironmentSpec::new(p, 100, 1)).unwrap_err();
            assert!(matches!(err, Error::ParameterDomain(_)), "{err}");
        }
        let short = EnvironmentSpec::default_for(Family::WhiteNoise, 1, 1);
        assert!(generate(&short).is_err());
    }

    #[test]
    fn ma1_draws_stay_in_range_and_point_mass_is_exact() {
        let mut dist = ParameterDistribution {
            family: Family::MA1Placebo,
            ranges: BTreeMap::from([("theta".to_string(), (-0.8, -0.2))]),
            draw_count: 10,
            seed: 5,
            role: Role::Audit,
            length_t: 100,
            base: None,
        };
        let specs = draw_parameter_sets(&dist).unwrap();
        assert_eq!(specs.len(), 10);
        for s in &specs {
            match &s.params {
                EnvParams::MA1Placebo(p) => assert!((-0.8..=-0.2).contains(&p.theta)),
                _ => unreachable!(),
            }
        }
        dist.ranges.insert("theta".into(), (-0.5, -0.5));
        for s in draw_parameter_sets(&dist).unwrap() {
            match &s.params {
                EnvParams::MA1Placebo(p) => assert_eq!(p.theta, -0.5),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn nonstationary_garch_range_rejected_before_drawing() {
        let dist = ParameterDistribution {
            family: Family::Garch11,
            ranges: BTreeMap::from([
                ("alpha".to_string(), (0.05, 0.15)),
                ("beta".to_string(), (0.80, 0.90)),
            ]),
            draw_count: 10,
            seed: 5,
            role: Role::Audit,
            length_t: 100,
            base: None,
        };
        assert!(matches!(draw_parameter_sets(&dist), Err(Error::ParameterDomain(_))));
    }

    #[test]
    fn dev_and_audit_lineages_differ() {
        let mk = |role| ParameterDistribution {
            family: Family::MA1Placebo,
            ranges: BTreeMap::from([("theta".to_string(), (-0.8, -0.2))]),
            draw_count: 20,
            seed: 5,
            role,
            length_t: 100,
            base: None,
        };
        let dev = draw_parameter_sets(&mk(Role::Dev)).unwrap();
        let audit = draw_parameter_sets(&mk(Role::Audit)).unwrap();
        assert_ne!(mk(Role::Dev).lineage(), mk(Role::Audit).lineage());
        for d in &dev {
            assert!(audit.iter().all(|a| a.seed != d.seed));
        }
    }

    #[test]
    fn binary_round_trip() {
        let path = generate(&EnvironmentSpec::default_for(Family::Garch11, 64, 3)).unwrap();
        let mut buf = Vec::new();
        path.write_binary(&mut buf).unwrap();
        let back = ReturnPath::read_binary("x", &buf[..]).unwrap();
        assert_eq!(back.returns, path.returns);
    }

    #[test]
    fn spec_json_round_trip() {
        for fam in Family::CANONICAL {
            let spec = EnvironmentSpec::default_for(fam, 2520, 7);
            let back = EnvironmentSpec::from_json(&spec.to_json().unwrap()).unwrap();
            assert_eq!(back, spec);
        }
    }
}
