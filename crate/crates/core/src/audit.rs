//! Two-stage falsification audit.
//!
//! Stage 1 runs the pipeline on induced-null environments and compares each observed
//! walk-forward winner magnitude against a Bonferroni-corrected empirical quantile of a
//! Monte Carlo calibration. Pipelines that survive go to Stage 2, where the in-sample to
//! walk-forward gap ΔZ on the target data is classified against a null ΔZ sample.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::{draw_parameter_sets, generate, EnvironmentSpec, Family, ParameterDistribution, ReturnPath, Role};
use crate::rng::{component, derive_seed, label_key};
use crate::stats;
use crate::workflows::{run_selection, SelectionOutcome, Strategy, WorkflowSpec};
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;
/// Fewest replications for which an upper-tail quantile is reported.
pub const MIN_REPLICATIONS: usize = 500;
pub const DEFAULT_TAU: f64 = 0.5;

/// Where the stabilized BIF sits relative to the raw ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityStatus {
    /// Walk-forward magnitude above τ: stabilized and raw BIF agree.
    Agreement,
    /// Walk-forward magnitude exactly τ.
    Boundary,
    /// Walk-forward magnitude below τ: the denominator floor is active.
    Stabilized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationDiagnostics {
    pub z_is_star: f64,
    pub z_wf_star: f64,
    pub delta_z: f64,
    /// Absent when the walk-forward magnitude is zero.
    pub bif_raw: Option<f64>,
    pub bif_stab: f64,
    pub tau: f64,
    /// Retention rate 1/bif_stab; absent when the in-sample magnitude is zero.
    pub deflator: Option<f64>,
    /// Whether z_wf_star ≥ τ.
    pub gated: bool,
}

impl InflationDiagnostics {
    pub fn status(&self) -> StabilityStatus {
        if self.z_wf_star > self.tau {
            StabilityStatus::Agreement
        } else if self.z_wf_star == self.tau {
            StabilityStatus::Boundary
        } else {
            StabilityStatus::Stabilized
        }
    }

    /// The raw ratio restricted to the gated region, as printed in stress tables.
    pub fn gated_bif_raw(&self) -> Option<f64> {
        self.bif_raw.filter(|_| self.gated)
    }
}

/// Gap and stabilized inflation factor for one selected winner.
pub fn inflation_diagnostics(z_is_star: f64, z_wf_star: f64, tau: f64) -> Result<InflationDiagnostics> {
    if !(z_is_star >= 0.0) || !(z_wf_star >= 0.0) || !z_is_star.is_finite() || !z_wf_star.is_finite() {
        return Err(Error::Contract(format!(
            "winner magnitudes must be finite and non-negative, got z_is*={z_is_star}, z_wf*={z_wf_star}"
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Contract(format!("tau must be positive, got {tau}")));
    }
    let bif_stab = z_is_star / z_wf_star.max(tau);
    Ok(InflationDiagnostics {
        z_is_star,
        z_wf_star,
        delta_z: z_is_star - z_wf_star,
        bif_raw: (z_wf_star > 0.0).then(|| z_is_star / z_wf_star),
        bif_stab,
        tau,
        deflator: (bif_stab > 0.0).then(|| 1.0 / bif_stab),
        gated: z_wf_star >= tau,
    })
}

/// A null environment: either one fixed specification replayed under fresh seeds, or a
/// parameter distribution drawn once per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullSource {
    Fixed(EnvironmentSpec),
    Distribution(ParameterDistribution),
}

impl NullSource {
    pub fn label(&self) -> String {
        match self {
            NullSource::Fixed(s) => s.label(),
            NullSource::Distribution(d) => d.family.name().to_string(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            NullSource::Fixed(s) => s.family(),
            NullSource::Distribution(d) => d.family,
        }
    }

    pub fn length_t(&self) -> usize {
        match self {
            NullSource::Fixed(s) => s.length_t,
            NullSource::Distribution(d) => d.length_t,
        }
    }

    fn check_role(&self) -> Result<()> {
        match self {
            NullSource::Distribution(d) if d.role == Role::Dev => Err(Error::Config(format!(
                "{} is a development-role parameter set and cannot be used for gating",
                self.label()
            ))),
            _ => Ok(()),
        }
    }

    /// `m` replication environments, each with its own recorded seed.
    fn draws(&self, m: usize, master: u64) -> Result<Vec<EnvironmentSpec>> {
        let key = label_key(&self.label());
        match self {
            NullSource::Fixed(s) => {
                s.validate()?;
                Ok((0..m)
                    .map(|i| s.with_seed(derive_seed(master, &[component::PATH, key, s.seed, i as u64])))
                    .collect())
            }
            NullSource::Distribution(d) => {
                let mut d = d.clone();
                d.draw_count = m;
                d.seed = derive_seed(master, &[component::PARAMETERS, key, d.seed]);
                draw_parameter_sets(&d)
            }
        }
    }

    /// A single environment for the observed Stage-1 run, on a stream disjoint from
    /// every calibration replication.
    fn observed(&self, master: u64) -> Result<EnvironmentSpec> {
        let key = label_key(&self.label());
        match self {
            NullSource::Fixed(s) => Ok(s.with_seed(derive_seed(master, &[component::OBSERVED, key, s.seed]))),
            NullSource::Distribution(d) => {
                let mut d = d.clone();
                d.draw_count = 1;
                d.seed = derive_seed(master, &[component::OBSERVED, key, d.seed]);
                Ok(draw_parameter_sets(&d)?.remove(0))
            }
        }
    }
}

/// The canonical five induced-null environments at their default calibration.
pub fn canonical_sources(length_t: usize) -> Vec<NullSource> {
    Family::CANONICAL
        .iter()
        .enumerate()
        .map(|(i, f)| NullSource::Fixed(EnvironmentSpec::default_for(*f, length_t, i as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentCalibration {
    pub label: String,
    pub source: NullSource,
    /// Empirical quantile of z_wf_star at the calibration level.
    pub zeta: f64,
    /// Empirical 0.95 quantile of z_wf_star, for context.
    pub zeta_95: f64,
    #[serde(skip)]
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub z_wf_star: Vec<f64>,
    #[serde(skip)]
    pub delta_z: Vec<f64>,
}

impl EnvironmentCalibration {
    fn from_samples(label: String, source: NullSource, level: f64, seeds: Vec<u64>, z: Vec<f64>, dz: Vec<f64>) -> Self {
        let sorted = stats::sorted(&z);
        Self {
            label,
            source,
            zeta: stats::quantile_sorted(&sorted, level).unwrap_or(f64::NAN),
            zeta_95: stats::quantile_sorted(&sorted, 0.95).unwrap_or(f64::NAN),
            seeds,
            z_wf_star: z,
            delta_z: dz,
        }
    }

    /// Empirical quantile of the calibration sample at any level.
    pub fn quantile(&self, q: f64) -> Option<f64> {
        stats::quantile(&self.z_wf_star, q)
    }
}

/// Null distributions of z_wf_star for one workflow across a set of environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub version: u32,
    pub workflow_hash: String,
    pub workflow: WorkflowSpec,
    pub alpha: f64,
    /// Per-environment level 1 − α/|envs|.
    pub level: f64,
    pub replications: usize,
    pub master_seed: u64,
    pub environments: Vec<EnvironmentCalibration>,
}

impl NullCalibration {
    pub fn environment(&self, label: &str) -> Option<&EnvironmentCalibration> {
        self.environments.iter().find(|e| e.label == label)
    }

    /// Refuses to gate `workflow` unless it is exactly the calibrated one and every
    /// environment has the same length.
    pub fn check_binding(&self, workflow: &WorkflowSpec) -> Result<()> {
        let hash = workflow.content_hash();
        if hash != self.workflow_hash {
            return Err(Error::CalibrationMismatch(format!(
                "workflow hash {hash} does not match calibrated {}",
                self.workflow_hash
            )));
        }
        Ok(())
    }

    /// ΔZ null sample for Stage 2: White Noise if calibrated, otherwise all environments pooled.
    pub fn delta_sample(&self) -> Vec<f64> {
        match self.environments.iter().find(|e| e.source.family() == Family::WhiteNoise) {
            Some(e) => e.delta_z.clone(),
            None => self.environments.iter().flat_map(|e| e.delta_z.iter().copied()).collect(),
        }
    }

    /// Writes `manifest.json` plus one CSV of samples per environment.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        for (i, env) in self.environments.iter().enumerate() {
            let mut w = csv::Writer::from_path(dir.join(sample_file(i, &env.label)))?;
            w.write_record(["replication", "seed", "z_wf_star", "delta_z"])?;
            for (j, ((s, z), d)) in env.seeds.iter().zip(&env.z_wf_star).zip(&env.delta_z).enumerate() {
                w.write_record([j.to_string(), s.to_string(), z.to_string(), d.to_string()])?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let mut cal: NullCalibration = serde_json::from_str(&text)?;
        if cal.version != REPORT_VERSION {
            return Err(Error::Config(format!("unsupported calibration version {}", cal.version)));
        }
        for (i, env) in cal.environments.iter_mut().enumerate() {
            let mut r = csv::Reader::from_path(dir.join(sample_file(i, &env.label)))?;
            for rec in r.records() {
                let rec = rec?;
                let field = |k: usize| -> Result<&str> {
                    rec.get(k).ok_or_else(|| Error::Config(format!("short row in samples for {}", env.label)))
                };
                let parse = |s: &str| -> Result<f64> {
                    s.parse().map_err(|_| Error::Config(format!("bad sample value {s:?} for {}", env.label)))
                };
                env.seeds.push(
                    field(1)?
                        .parse()
                        .map_err(|_| Error::Config(format!("bad seed in samples for {}", env.label)))?,
                );
                env.z_wf_star.push(parse(field(2)?)?);
                env.delta_z.push(parse(field(3)?)?);
            }
            if env.z_wf_star.len() != cal.replications {
                return Err(Error::Config(format!(
                    "{} has {} samples but the manifest records {}",
                    env.label,
                    env.z_wf_star.len(),
                    cal.replications
                )));
            }
        }
        Ok(cal)
    }
}

fn sample_file(i: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{i:02}_{clean}.csv")
}

fn run_replications(workflow: &WorkflowSpec, specs: &[EnvironmentSpec]) -> Result<Vec<SelectionOutcome>> {
    specs
        .par_iter()
        .map(|s| run_selection(workflow, &generate(s)?))
        .collect()
}

/// Runs the unchanged workflow `m` times in every environment and stores the
/// z_wf_star samples with their quantiles at level 1 − α/|envs|.
pub fn calibrate_stage1(
    workflow: &WorkflowSpec,
    sources: &[NullSource],
    m: usize,
    alpha: f64,
    master_seed: u64,
) -> Result<NullCalibration> {
    if m < MIN_REPLICATIONS {
        return Err(Error::Contract(format!(
            "calibration needs at least {MIN_REPLICATIONS} replications per environment, got {m}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ParameterDomain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if sources.is_empty() {
        return Err(Error::Config("calibration needs at least one environment".into()));
    }
    workflow.validate()?;
    let mut labels = std::collections::BTreeSet::new();
    for s in sources {
        s.check_role()?;
        if !labels.insert(s.label()) {
            return Err(Error::Config(format!("duplicate environment label {}", s.label())));
        }
    }
    let level = 1.0 - alpha / sources.len() as f64;
    let mut environments = Vec::with_capacity(sources.len());
    for source in sources {
        let specs = source.draws(m, master_seed)?;
        log::info!("calibrating {} with {m} replications", source.label());
        let outcomes = run_replications(workflow, &specs)?;
        environments.push(EnvironmentCalibration::from_samples(
            source.label(),
            source.clone(),
            level,
            specs.iter().map(|s| s.seed).collect(),
            outcomes.iter().map(|o| o.z_wf_star).collect(),
            outcomes.iter().map(|o| o.delta_z).collect(),
        ));
    }
    Ok(NullCalibration {
        version: REPORT_VERSION,
        workflow_hash: workflow.content_hash(),
        workflow: workflow.clone(),
        alpha,
        level,
        replications: m,
        master_seed,
        environments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentRecord {
    pub label: String,
    pub observed_z_wf_star: f64,
    pub zeta: f64,
    /// ζ − observed; negative means falsified.
    pub margin: f64,
    pub falsified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Verdict {
    pub records: Vec<EnvironmentRecord>,
    pub falsified: bool,
}

/// Compares observed walk-forward magnitudes against the calibrated thresholds. Every
/// calibrated environment must be observed and vice versa.
pub fn stage1_gate(observed: &BTreeMap<String, f64>, calibration: &NullCalibration) -> Result<Stage1Verdict> {
    for label in observed.keys() {
        if calibration.environment(label).is_none() {
            return Err(Error::CalibrationMismatch(format!("no calibration for environment {label}")));
        }
    }
    let mut records = Vec::with_capacity(calibration.environments.len());
    for env in &calibration.environments {
        let z = *observed
            .get(&env.label)
            .ok_or_else(|| Error::CalibrationMismatch(format!("no observation for calibrated environment {}", env.label)))?;
        if !(z >= 0.0) {
            return Err(Error::Contract(format!("observed z_wf_star for {} must be >= 0, got {z}", env.label)));
        }
        records.push(EnvironmentRecord {
            label: env.label.clone(),
            observed_z_wf_star: z,
            zeta: env.zeta,
            margin: env.zeta - z,
            falsified: z > env.zeta,
        });
    }
    let falsified = records.iter().any(|r| r.falsified);
    Ok(Stage1Verdict { records, falsified })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullKind {
    /// ΔZ sample from the same workflow on White Noise.
    Matched,
    /// Independent search at the workflow's nominal K on White Noise.
    WorstCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Verdict {
    pub diagnostics: InflationDiagnostics,
    pub epsilon_95: f64,
    pub epsilon_99: f64,
    pub inflation_flag: bool,
    /// ΔZ above the 0.95 null quantile.
    pub warning: bool,
    pub k_eff: Option<f64>,
    pub null_kind: NullKind,
    pub null_size: usize,
}

/// Classifies an observed ΔZ against a null ΔZ sample.
pub fn stage2_classify(
    diag: &InflationDiagnostics,
    null_delta: &[f64],
    null_kind: NullKind,
    k_eff: Option<f64>,
) -> Result<Stage2Verdict> {
    if null_delta.is_empty() {
        return Err(Error::Contract("empty null ΔZ sample".into()));
    }
    let sorted = stats::sorted(null_delta);
    let e95 = stats::quantile_sorted(&sorted, 0.95).unwrap_or(f64::NAN);
    let e99 = stats::quantile_sorted(&sorted, 0.99).unwrap_or(f64::NAN);
    Ok(Stage2Verdict {
        diagnostics: *diag,
        epsilon_95: e95,
        epsilon_99: e99,
        inflation_flag: diag.delta_z > e99 && diag.delta_z > 0.0,
        warning: diag.delta_z > e95 && diag.delta_z > 0.0,
        k_eff,
        null_kind,
        null_size: null_delta.len(),
    })
}

/// Independent-search null at the workflow's nominal K: DataMiner on White Noise.
pub fn worst_case_null(pipeline: &WorkflowSpec, length_t: usize, m: usize, master_seed: u64) -> Result<Vec<f64>> {
    let mut spec = WorkflowSpec::new(Strategy::DataMiner, pipeline.k);
    spec.split_ratio = pipeline.split_ratio;
    spec.tau = pipeline.tau;
    spec.seed = derive_seed(master_seed, &[component::WORKFLOW]);
    let env = NullSource::Fixed(EnvironmentSpec::default_for(Family::WhiteNoise, length_t, 0));
    let specs = env.draws(m, derive_seed(master_seed, &[label_key("worst-case")]))?;
    Ok(run_replications(&spec, &specs)?.iter().map(|o| o.delta_z).collect())
}

/// Target data for Stage 2.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(EnvironmentSpec),
    Returns(ReturnPath),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub version: u32,
    pub workflow_hash: String,
    pub reference_hash: String,
    pub workflow: WorkflowSpec,
    pub stage1: Stage1Verdict,
    pub falsified: bool,
    pub stage2: Option<Stage2Verdict>,
    pub target: Option<String>,
}

impl AuditReport {
    /// 0 = pass, 2 = falsified, 3 = inflation flagged.
    pub fn exit_code(&self) -> i32 {
        if self.falsified {
            2
        } else if self.stage2.as_ref().is_some_and(|s| s.inflation_flag) {
            3
        } else {
            0
        }
    }

    pub fn verdict(&self) -> &'static str {
        match self.exit_code() {
            0 => "PASS",
            2 => "FALSIFIED",
            _ => "INFLATION FLAGGED",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "workflow   {} ({})", self.workflow.family(), &self.workflow_hash[..12]);
        let _ = writeln!(s, "reference  {}", &self.reference_hash[..12]);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<24} {:>10} {:>10} {:>10}  result", "environment", "z_wf*", "zeta", "margin");
        for r in &self.stage1.records {
            let _ = writeln!(
                s,
                "{:<24} {:>10.3} {:>10.3} {:>10.3}  {}",
                r.label,
                r.observed_z_wf_star,
                r.zeta,
                r.margin,
                if r.falsified { "FAIL" } else { "pass" }
            );
        }
        if let Some(st) = &self.stage2 {
            let d = &st.diagnostics;
            let _ = writeln!(s);
            if let Some(t) = &self.target {
                let _ = writeln!(s, "target     {t}");
            }
            let _ = writeln!(s, "z_is*      {:.3}", d.z_is_star);
            let _ = writeln!(s, "z_wf*      {:.3}", d.z_wf_star);
            let _ = writeln!(s, "delta_z    {:.3}  (eps95 {:.3}, eps99 {:.3}, {:?} null, n={})", d.delta_z, st.epsilon_95, st.epsilon_99, st.null_kind, st.null_size);
            let _ = writeln!(s, "bif_stab   {:.3}  (tau {})", d.bif_stab, d.tau);
            match d.deflator {
                Some(x) => { let _ = writeln!(s, "deflator   {x:.3}"); }
                None => { let _ = writeln!(s, "deflator   n/a"); }
            }
            if let Some(k) = st.k_eff {
                let _ = writeln!(s, "k_eff      {k:.2}");
            }
            if st.warning && !st.inflation_flag {
                let _ = writeln!(s, "warning    delta_z above the 0.95 null quantile");
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "verdict    {}", self.verdict());
        s
    }
}

/// Observed z_wf_star of `pipeline` in each calibrated environment.
pub fn observe_stage1(pipeline: &WorkflowSpec, calibration: &NullCalibration, master_seed: u64) -> Result<BTreeMap<String, f64>> {
    calibration
        .environments
        .iter()
        .map(|e| {
            let spec = e.source.observed(master_seed)?;
            let out = run_selection(pipeline, &generate(&spec)?)?;
            Ok((e.label.clone(), out.z_wf_star))
        })
        .collect()
}

/// Full audit: Stage 1 of `pipeline` against a calibration of `reference`, then
/// Stage 2 on `target` if the pipeline survives.
pub fn run_audit(
    pipeline: &WorkflowSpec,
    reference: &WorkflowSpec,
    calibration: &NullCalibration,
    target: Option<&DataSource>,
    master_seed: u64,
) -> Result<AuditReport> {
    pipeline.validate()?;
    calibration.check_binding(reference)?;
    if (reference.split_ratio - pipeline.split_ratio).abs() > 0.0 {
        return Err(Error::CalibrationMismatch(format!(
            "pipeline split {} differs from calibrated split {}",
            pipeline.split_ratio, reference.split_ratio
        )));
    }
    for e in &calibration.environments {
        e.source.check_role()?;
    }
    let observed = observe_stage1(pipeline, calibration, master_seed)?;
    let stage1 = stage1_gate(&observed, calibration)?;
    let falsified = stage1.falsified;
    let mut stage2 = None;
    let mut target_label = None;
    if let (false, Some(src)) = (falsified, target) {
        let path = match src {
            DataSource::Synthetic(s) => generate(s)?,
            DataSource::Returns(p) => p.clone(),
        };
        if let Some(len) = calibration.environments.first().map(|e| e.source.length_t()) {
            if len != path.len() {
                log::warn!("target has T={} but the calibration used T={len}", path.len());
            }
        }
        let out = run_selection(pipeline, &path)?;
        let diag = inflation_diagnostics(out.z_is_star, out.z_wf_star, pipeline.tau)?;
        let k_eff = out.k_eff_signal_value().or(out.k_eff_pred_value());
        let (sample, kind) = if calibration.workflow_hash == pipeline.content_hash() {
            (calibration.delta_sample(), NullKind::Matched)
        } else {
            log::warn!("no matched null for this pipeline; using the worst-case independent-search null");
            (
                worst_case_null(pipeline, path.len(), calibration.replications, master_seed)?,
                NullKind::WorstCase,
            )
        };
        stage2 = Some(stage2_classify(&diag, &sample, kind, k_eff)?);
        target_label = Some(path.label.clone());
    }
    Ok(AuditReport {
        version: REPORT_VERSION,
        workflow_hash: pipeline.content_hash(),
        reference_hash: calibration.workflow_hash.clone(),
        workflow: pipeline.clone(),
        stage1,
        falsified,
        stage2,
        target: target_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflows::WorkflowFamily;

    #[test]
    fn stress_rows() {
        let d = inflation_diagnostics(3.0, 1.0, 0.5).unwrap();
        assert_eq!((d.delta_z, d.bif_stab), (2.0, 3.0));
        assert!((d.deflator.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let d = inflation_diagnostics(3.0, 0.0, 0.5).unwrap();
        assert_eq!((d.delta_z, d.bif_raw, d.bif_stab), (3.0, None, 6.0));
        assert_eq!(d.status(), StabilityStatus::Stabilized);
        let d = inflation_diagnostics(3.0, 0.25, 0.5).unwrap();
        assert_eq!(d.bif_raw, Some(12.0));
        assert_eq!(d.gated_bif_raw(), None);
        assert_eq!(inflation_diagnostics(3.0, 0.5, 0.5).unwrap().status(), StabilityStatus::Boundary);
    }

    #[test]
    fn no_inflation_identity() {
        let d = inflation_diagnostics(1.7, 1.7, 0.5).unwrap();
        assert_eq!((d.delta_z, d.bif_stab), (0.0, 1.0));
    }

    #[test]
    fn negative_inputs_refused() {
        assert!(inflation_diagnostics(-1.0, 1.0, 0.5).is_err());
        assert!(inflation_diagnostics(1.0, -0.1, 0.5).is_err());
        assert!(inflation_diagnostics(1.0, 1.0, 0.0).is_err());
    }

    fn toy_calibration() -> NullCalibration {
        let wf = WorkflowSpec::default_for(WorkflowFamily::RandomBaseline);
        let z: Vec<f64> = (1..=500).map(|i| i as f64 / 100.0).collect();
        let env = EnvironmentCalibration::from_samples(
            "white_noise".into(),
            canonical_sources(100).remove(0),
            0.99,
            (0..500).collect(),
            z.clone(),
            z,
        );
        NullCalibration {
            version: REPORT_VERSION,
            workflow_hash: wf.content_hash(),
            workflow: wf,
            alpha: 0.01,
            level: 0.99,
            replications: 500,
            master_seed: 0,
            environments: vec![env],
        }
    }

    #[test]
    fn gate_uses_type1_quantile_and_requires_coverage() {
        let cal = toy_calibration();
        assert_eq!(cal.environments[0].zeta, 4.95);
        let mut obs = BTreeMap::new();
        obs.insert("white_noise".to_string(), 4.95);
        assert!(!stage1_gate(&obs, &cal).unwrap().falsified);
        obs.insert("white_noise".to_string(), 4.951);
        assert!(stage1_gate(&obs, &cal).unwrap().falsified);
        assert!(stage1_gate(&BTreeMap::new(), &cal).is_err());
        obs.insert("garch".to_string(), 0.0);
        assert!(stage1_gate(&obs, &cal).is_err());
    }

    #[test]
    fn binding_refuses_changed_workflow() {
        let cal = toy_calibration();
        let mut wf = cal.workflow.clone();
        assert!(cal.check_binding(&wf).is_ok());
        wf.split_ratio = 0.7;
        assert!(matches!(cal.check_binding(&wf), Err(Error::CalibrationMismatch(_))));
    }

    #[test]
    fn stage2_flags_only_above_99() {
        let d0 = inflation_diagnostics(1.0, 1.0, 0.5).unwrap();
        let null: Vec<f64> = (0..100).map(|i| i as f64 / 10.0 - 5.0).collect();
        assert!(!stage2_classify(&d0, &null, NullKind::Matched, None).unwrap().inflation_flag);
        let d = inflation_diagnostics(9.0, 0.0, 0.5).unwrap();
        let v = stage2_classify(&d, &null, NullKind::Matched, None).unwrap();
        assert!(v.inflation_flag && v.warning);
        assert!(stage2_classify(&d, &[], NullKind::Matched, None).is_err());
    }

    #[test]
    fn small_calibration_refused() {
        let wf = WorkflowSpec::default_for(WorkflowFamily::RandomBaseline);
        let err = calibrate_stage1(&wf, &canonical_sources(100), 499, 0.05, 1).unwrap_err();
        assert!(err.to_string().contains("500"));
    }

    #[test]
    fn dev_role_refused() {
        let wf = WorkflowSpec::default_for(WorkflowFamily::RandomBaseline);
        let d = ParameterDistribution {
            family: Family::WhiteNoise,
            ranges: Default::default(),
            draw_count: 1,
            seed: 1,
            role: Role::Dev,
            length_t: 100,
            base: None,
        };
        let err = calibrate_stage1(&wf, &[NullSource::Distribution(d)], 500, 0.05, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn archive_round_trip() {
        let cal = toy_calibration();
        let dir = tempfile::tempdir().unwrap();
        cal.save(dir.path()).unwrap();
        assert_eq!(NullCalibration::load(dir.path()).unwrap(), cal);
    }
}
