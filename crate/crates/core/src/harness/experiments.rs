use ndarray::{Array2, ShapeBuilder};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::table::{Column, ResultTable};
use super::{replicate, Experiment, ExperimentSpec, Grid};
use crate::environments::{generate, EnvParams, EnvironmentSpec, Family, ReturnPath, TarParams};
use crate::inference::{evt_expected_max, Phase};
use crate::multiplicity::{estimate_k_eff, k_eff_population, sample_k_eff, CandidatePanel};
use crate::rng::{self, component};
use crate::stats::{mean_estimate, quantile_estimate, rate_estimate, CiMethod, Estimate};
use crate::workflows::{
    breakeven_cost, breakout_grid, run_selection, run_selection_traced, ClusterLayout, CorrelatedParams, KeffBasis,
    MultiplicityMode, SelectionEngine, SelectionOutcome, SigmaScale, Strategy, ThresholdTransform, TrendParams,
    WorkflowFamily, WorkflowSpec,
};
use crate::{Error, Result};

/// Synthetic panel design for validating the K̂_eff estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeffScenario {
    /// K independent standard normal series.
    Independent { k: usize, t: usize },
    /// Candidates assigned round-robin to `factors` latent factors with a common loading.
    Factor { k: usize, t: usize, factors: usize, loading: f64 },
}

impl KeffScenario {
    fn label(&self) -> String {
        match self {
            KeffScenario::Independent { k, t } if k > t => "HighDim".into(),
            KeffScenario::Independent { .. } => "Independent".into(),
            KeffScenario::Factor { factors, .. } => format!("Factor(m={factors})"),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match *self {
            KeffScenario::Independent { k, t } | KeffScenario::Factor { k, t, .. } => (k, t),
        }
    }

    fn true_k_eff(&self) -> f64 {
        match *self {
            KeffScenario::Independent { k, .. } => k as f64,
            KeffScenario::Factor { k, factors, loading, .. } => {
                let sizes: Vec<usize> = (0..factors).map(|c| (k + factors - 1 - c) / factors).collect();
                k_eff_population(&sizes, loading * loading)
            }
        }
    }

    fn panel(&self, seed: u64) -> Result<CandidatePanel> {
        let (k, t) = self.dims();
        let mut g = rng::stream(seed, &[]);
        let mut data = Array2::<f64>::zeros((t, k).f());
        match *self {
            KeffScenario::Independent { .. } => {
                data.iter_mut().for_each(|x| *x = StandardNormal.sample(&mut g));
            }
            KeffScenario::Factor { factors, loading, .. } => {
                if !(loading.abs() < 1.0) || factors == 0 {
                    return Err(Error::ParameterDomain("factor loading must lie in (-1, 1) with >= 1 factor".into()));
                }
                let idio = (1.0 - loading * loading).sqrt();
                let f: Vec<f64> = (0..factors * t).map(|_| StandardNormal.sample(&mut g)).collect();
                for j in 0..k {
                    let c = j % factors;
                    for i in 0..t {
                        let e: f64 = StandardNormal.sample(&mut g);
                        data[[i, j]] = loading * f[c * t + i] + idio * e;
                    }
                }
            }
        }
        CandidatePanel::new(data, Phase::InSample)
    }
}

pub(super) fn fill_defaults(exp: Experiment, g: &mut Grid) {
    fn set<T>(slot: &mut Option<T>, v: T) {
        if slot.is_none() {
            *slot = Some(v);
        }
    }
    let clusters = vec![1, 5, 10, 25, 50, 100, 500];
    match exp {
        Experiment::ScalingLaw => set(&mut g.k, vec![1, 5, 10, 50, 100, 200, 500, 1000]),
        Experiment::RedundancyLaw => {
            set(&mut g.k_total, 500);
            set(&mut g.clusters, clusters);
            set(&mut g.rho, vec![1.0]);
        }
        Experiment::RedundancyImperfect => {
            set(&mut g.k_total, 500);
            set(&mut g.clusters, clusters);
            set(&mut g.rho, vec![0.6, 0.8, 0.99]);
        }
        Experiment::CapacityInflation => {
            set(&mut g.k, vec![1, 5, 10, 25, 50, 100, 200, 400]);
            set(
                &mut g.workflows,
                vec![
                    WorkflowFamily::FeatureMining,
                    WorkflowFamily::CorrelatedFamilySearch,
                    WorkflowFamily::TrendFollowing,
                ],
            );
            set(&mut g.clusters, vec![3]);
            set(&mut g.rho, vec![0.8]);
        }
        Experiment::ThresholdAmplification => {
            set(&mut g.k_total, 1000);
            set(&mut g.clusters, vec![1]);
            set(&mut g.rho, vec![0.9]);
            set(
                &mut g.transforms,
                vec![
                    ThresholdTransform::None,
                    ThresholdTransform::Fixed(1.0),
                    ThresholdTransform::Fixed(2.0),
                    ThresholdTransform::AdaptiveQuantile(0.5),
                    ThresholdTransform::AdaptiveQuantile(0.9),
                    ThresholdTransform::AdaptiveQuantile(0.95),
                ],
            );
        }
        Experiment::FalsificationMatrix => {
            set(
                &mut g.workflows,
                vec![
                    WorkflowFamily::RandomBaseline,
                    WorkflowFamily::DataMiner,
                    WorkflowFamily::Contrarian,
                    WorkflowFamily::Lookahead,
                    WorkflowFamily::RegimeDetector,
                    WorkflowFamily::FactorMimic,
                ],
            );
            set(
                &mut g.environments,
                vec![Family::WhiteNoise, Family::RegimeSwitch, Family::MA1Placebo, Family::FactorNull],
            );
            set(&mut g.critical_z, 1.96);
        }
        Experiment::DetectionFrontier => {
            set(&mut g.phi, vec![0.05, 0.10, 0.15, 0.20, 0.25]);
            set(&mut g.theta, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
            set(&mut g.critical_z, 1.96);
        }
        Experiment::BreakEvenCost => {
            set(&mut g.k, vec![20, 40, 60]);
            set(&mut g.critical_z, 1.96);
        }
        Experiment::KeffValidation => {
            let mut s = Vec::new();
            for t in [250, 500, 1000] {
                s.push(KeffScenario::Independent { k: 100, t });
            }
            for t in [250, 500, 1000] {
                s.push(KeffScenario::Factor { k: 100, t, factors: 3, loading: 0.82 });
            }
            for t in [250, 500] {
                s.push(KeffScenario::Independent { k: 500, t });
            }
            set(&mut g.scenarios, s);
        }
        Experiment::SplitSensitivity => {
            set(&mut g.splits, vec![0.5, 0.6, 0.7]);
            set(&mut g.k_total, 100);
        }
    }
}

/// Grid coordinate as a table key: integers keep one decimal so keys are stable.
pub(super) fn key_f64(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn mean_of(outs: &[SelectionOutcome], f: impl Fn(&SelectionOutcome) -> f64) -> Estimate {
    mean_estimate(&outs.iter().map(f).collect::<Vec<_>>())
}

fn pct(outs: &[SelectionOutcome], f: impl Fn(&SelectionOutcome) -> bool) -> Estimate {
    rate_estimate(outs.iter().filter(|o| f(o)).count(), outs.len()).scaled(100.0)
}

/// Median stabilized BIF on the subset with a usable walk-forward magnitude.
fn gated_bif(outs: &[SelectionOutcome]) -> Estimate {
    let v: Vec<f64> = outs
        .iter()
        .filter(|o| !o.degenerate && o.z_wf_star >= o.tau)
        .map(|o| o.bif_stab)
        .collect();
    quantile_estimate(&v, 0.5)
}

fn keff_values(outs: &[SelectionOutcome], signal: bool) -> Vec<f64> {
    outs.iter()
        .filter_map(|o| if signal { o.k_eff_signal_value() } else { o.k_eff_pred_value() })
        .collect()
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
}

impl Ctx<'_> {
    fn workflow(&self, strategy: Strategy, k: usize, cell: u64) -> WorkflowSpec {
        let mut w = WorkflowSpec::new(strategy, k);
        w.split_ratio = self.spec.split_ratio;
        w.seed = ExperimentSpec::workflow_seed(cell);
        w.multiplicity = MultiplicityMode::None;
        w
    }

    fn path(&self, env: &EnvironmentSpec, cell: u64, r: usize) -> Result<ReturnPath> {
        generate(&env.with_seed(ExperimentSpec::replication_seed(cell, r)))
    }

    fn env(&self, family: Family) -> EnvironmentSpec {
        EnvironmentSpec::default_for(family, self.spec.length_t, 0)
    }

    /// Runs `wf` on fresh paths from `env`; K̂_eff only on the first `keff_cap` replications.
    fn outcomes(&self, wf: &WorkflowSpec, env: &EnvironmentSpec, cell: u64, keff: MultiplicityMode) -> Result<Vec<SelectionOutcome>> {
        let cap = self.spec.keff_cap();
        let mut with = wf.clone();
        with.multiplicity = keff;
        replicate(self.spec.replications, |r| {
            let p = self.path(env, cell, r)?;
            run_selection(if r < cap { &with } else { wf }, &p)
        })
    }
}

fn record_seed(t: &mut ResultTable, key: &[String], seed: u64) {
    let seeds = t
        .metadata
        .entry("cell_seeds".into())
        .or_insert_with(|| serde_json::Value::Object(Default::default()));
    if let Some(m) = seeds.as_object_mut() {
        m.insert(key.join("/"), seed.into());
    }
}

fn finish_row(t: &mut ResultTable, key: Vec<String>, seed: u64, cells: Result<Vec<Estimate>>) {
    record_seed(t, &key, seed);
    match cells {
        Ok(c) => t.push(key, c),
        Err(e) => {
            log::error!("{} cell {} failed: {e}", t.experiment, key.join("/"));
            t.push_failed(key, e.to_string());
        }
    }
}

pub(super) fn run(spec: &ExperimentSpec) -> ResultTable {
    let ctx = Ctx { spec };
    match spec.experiment {
        Experiment::ScalingLaw => scaling_law(&ctx),
        Experiment::RedundancyLaw => redundancy_law(&ctx),
        Experiment::RedundancyImperfect => redundancy_imperfect(&ctx),
        Experiment::CapacityInflation => capacity_inflation(&ctx),
        Experiment::ThresholdAmplification => threshold_amplification(&ctx),
        Experiment::FalsificationMatrix => falsification_matrix(&ctx),
        Experiment::DetectionFrontier => detection_frontier(&ctx),
        Experiment::BreakEvenCost => break_even(&ctx),
        Experiment::KeffValidation => keff_validation(&ctx),
        Experiment::SplitSensitivity => split_sensitivity(&ctx),
    }
}

const MEAN: CiMethod = CiMethod::NormalMean;
const RATE: CiMethod = CiMethod::WaldRate;
const QUANT: CiMethod = CiMethod::OrderStatistic;
const EXACT: CiMethod = CiMethod::Exact;

fn scaling_law(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let mut t = ResultTable::new(
        "ScalingLaw",
        &["k"],
        vec![
            Column::new("mean_z_is_star", MEAN, "mean in-sample winner |Z|"),
            Column::new("mean_z_wf_star", MEAN, "mean walk-forward winner |Z|"),
            Column::new("mean_delta_z", MEAN, "mean ΔZ"),
            Column::new("median_bif_stab", QUANT, "median stabilized BIF on the subset z_wf* >= tau"),
            Column::new("winner_fwp_pct", RATE, "percent of replications with z_is* > 1.96"),
        ],
    );
    let env = ctx.env(Family::WhiteNoise);
    for (i, &k) in g.k.as_deref().unwrap_or_default().iter().enumerate() {
        let cell = ctx.spec.cell_seed(i);
        let wf = ctx.workflow(Strategy::DataMiner, k, cell);
        let cells = ctx.outcomes(&wf, &env, cell, MultiplicityMode::None).map(|o| {
            vec![
                mean_of(&o, |x| x.z_is_star),
                mean_of(&o, |x| x.z_wf_star),
                mean_of(&o, |x| x.delta_z),
                gated_bif(&o),
                pct(&o, |x| x.z_is_star > 1.96),
            ]
        });
        finish_row(&mut t, vec![k.to_string()], cell, cells);
    }
    t
}

fn correlated(clusters: usize, rho: f64) -> Strategy {
    Strategy::CorrelatedFamilySearch(CorrelatedParams {
        clusters,
        rho,
        layout: ClusterLayout::Balanced,
    })
}

fn redundancy_law(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let k = g.k_total.unwrap_or(500);
    let rho = g.rho.as_ref().and_then(|r| r.first().copied()).unwrap_or(1.0);
    let mut t = ResultTable::new(
        "RedundancyLaw",
        &["clusters"],
        vec![
            Column::new("k_eff", MEAN, "shrinkage K̂_eff on the score panel"),
            Column::new("mean_abs_z_is_star", MEAN, "mean in-sample winner |Z|"),
            Column::new("evt_2k", EXACT, "EVT expected maximum of 2K half-normal draws"),
            Column::new("evt_2k_eff", EXACT, "EVT expected maximum at 2·mean K̂_eff"),
            Column::new("ratio", EXACT, "mean |z_is*| / EVT(2K̂_eff)"),
            Column::new("independence_proxy", EXACT, "(K̂_eff − 1)/(K − 1)"),
            Column::new("median_bif_stab", QUANT, "median stabilized BIF on the subset z_wf* >= tau"),
            Column::new("mean_z_wf_star", MEAN, "mean walk-forward winner |Z|"),
        ],
    );
    t.metadata.insert("keff_basis".into(), "positions".into());
    t.metadata.insert("rho".into(), rho.into());
    let env = ctx.env(Family::WhiteNoise);
    for (i, &m) in g.clusters.as_deref().unwrap_or_default().iter().enumerate() {
        let cell = ctx.spec.cell_seed(i);
        let mut wf = ctx.workflow(correlated(m, rho), k, cell);
        wf.keff_basis = KeffBasis::Positions;
        let cells = ctx.outcomes(&wf, &env, cell, MultiplicityMode::Prediction).and_then(|o| {
            let ke = mean_estimate(&keff_values(&o, false));
            let z = mean_of(&o, |x| x.z_is_star);
            let evt2k = evt_expected_max(2.0 * k as f64)?;
            let evt = evt_expected_max(2.0 * ke.get())?;
            Ok(vec![
                ke,
                z,
                Estimate::exact(evt2k),
                Estimate::exact(evt),
                Estimate::exact(z.get() / evt),
                Estimate::exact((ke.get() - 1.0) / (k as f64 - 1.0)),
                gated_bif(&o),
                mean_of(&o, |x| x.z_wf_star),
            ])
        });
        finish_row(&mut t, vec![m.to_string()], cell, cells);
    }
    t
}

fn redundancy_imperfect(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let k = g.k_total.unwrap_or(500);
    let mut t = ResultTable::new(
        "RedundancyImperfect",
        &["rho", "clusters"],
        vec![
            Column::new("k_eff", MEAN, "shrinkage K̂_eff on the score panel"),
            Column::new("k_eff_population", EXACT, "K_eff of the population correlation matrix"),
            Column::new("mean_abs_z_is_star", MEAN, "observed mean in-sample winner |Z|"),
            Column::new("evt_pred", EXACT, "EVT(2K̂_eff)"),
            Column::new("error_pct", EXACT, "100·(observed − predicted)/predicted"),
        ],
    );
    t.metadata.insert("keff_basis".into(), "positions".into());
    let env = ctx.env(Family::WhiteNoise);
    let mut cell_index = 0;
    for &rho in g.rho.as_deref().unwrap_or_default() {
        for &m in g.clusters.as_deref().unwrap_or_default() {
            let cell = ctx.spec.cell_seed(cell_index);
            cell_index += 1;
            let params = CorrelatedParams { clusters: m, rho, layout: ClusterLayout::Balanced };
            let mut wf = ctx.workflow(Strategy::CorrelatedFamilySearch(params.clone()), k, cell);
            wf.keff_basis = KeffBasis::Positions;
            let cells = ctx.outcomes(&wf, &env, cell, MultiplicityMode::Prediction).and_then(|o| {
                let ke = mean_estimate(&keff_values(&o, false));
                let z = mean_of(&o, |x| x.z_is_star);
                let pred = evt_expected_max(2.0 * ke.get())?;
                Ok(vec![
                    ke,
                    Estimate::exact(k_eff_population(&params.sizes(k), rho)),
                    z,
                    Estimate::exact(pred),
                    Estimate::exact(100.0 * (z.get() - pred) / pred),
                ])
            });
            finish_row(&mut t, vec![key_f64(rho), m.to_string()], cell, cells);
        }
    }
    t
}

fn capacity_strategy(family: WorkflowFamily, k: usize, g: &Grid) -> Result<Strategy> {
    Ok(match family {
        WorkflowFamily::CorrelatedFamilySearch => {
            let m = g.clusters.as_ref().and_then(|c| c.first().copied()).unwrap_or(3);
            let rho = g.rho.as_ref().and_then(|r| r.first().copied()).unwrap_or(0.8);
            correlated(m.min(k), rho)
        }
        WorkflowFamily::TrendFollowing => {
            let grid = breakout_grid();
            let lookbacks = k.div_ceil(grid.len()).max(1);
            Strategy::TrendFollowing(TrendParams {
                lookbacks: (1..=lookbacks).collect(),
                thresholds: grid,
                ..Default::default()
            })
        }
        WorkflowFamily::FeatureMining => Strategy::FeatureMining,
        WorkflowFamily::DataMiner => Strategy::DataMiner,
        other => {
            return Err(Error::Config(format!("{other} is a single-candidate workflow and has no capacity curve")))
        }
    })
}

fn capacity_inflation(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let mut t = ResultTable::new(
        "CapacityInflation",
        &["workflow", "k"],
        vec![
            Column::new("k_eff", MEAN, "shrinkage K̂_eff on realized positions"),
            Column::new("mean_z_is_star", MEAN, "mean in-sample winner |Z|"),
            Column::new("mean_z_wf_star", MEAN, "mean walk-forward winner |Z|"),
            Column::new("mean_delta_z", MEAN, "mean ΔZ"),
            Column::new("median_bif_stab", QUANT, "median stabilized BIF on the subset z_wf* >= tau"),
            Column::new("is_fail_pct", RATE, "percent with z_is* > 1.96"),
            Column::new("wf_fail_pct", RATE, "percent with z_wf* > 1.96"),
        ],
    );
    t.metadata.insert("keff_basis".into(), "positions".into());
    let env = ctx.env(Family::WhiteNoise);
    let mut cell_index = 0;
    for &fam in g.workflows.as_deref().unwrap_or_default() {
        for &k in g.k.as_deref().unwrap_or_default() {
            let cell = ctx.spec.cell_seed(cell_index);
            cell_index += 1;
            let cells = capacity_strategy(fam, k, g).and_then(|s| {
                let mut wf = ctx.workflow(s, k, cell);
                wf.keff_basis = KeffBasis::Positions;
                let o = ctx.outcomes(&wf, &env, cell, MultiplicityMode::Signal)?;
                Ok(vec![
                    mean_estimate(&keff_values(&o, true)),
                    mean_of(&o, |x| x.z_is_star),
                    mean_of(&o, |x| x.z_wf_star),
                    mean_of(&o, |x| x.delta_z),
                    gated_bif(&o),
                    pct(&o, |x| x.z_is_star > 1.96),
                    pct(&o, |x| x.z_wf_star > 1.96),
                ])
            });
            finish_row(&mut t, vec![fam.to_string(), k.to_string()], cell, cells);
        }
    }
    t
}

fn threshold_amplification(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let k = g.k_total.unwrap_or(1000);
    let m = g.clusters.as_ref().and_then(|c| c.first().copied()).unwrap_or(1);
    let rho = g.rho.as_ref().and_then(|r| r.first().copied()).unwrap_or(0.9);
    let transforms = g.transforms.clone().unwrap_or_default();
    let mut t = ResultTable::new(
        "ThresholdAmplification",
        &["threshold_type", "level"],
        vec![
            Column::new("k_eff_pred", MEAN, "K̂_eff of the raw score panel"),
            Column::new("k_eff_signal", MEAN, "K̂_eff of the thresholded signal panel"),
            Column::new("amplification", EXACT, "mean K̂_eff(signal) / mean K̂_eff(pred)"),
            Column::new("mean_abs_z_is_star", MEAN, "mean in-sample winner |Z|"),
            Column::new("z_is_p025", QUANT, "2.5% quantile of the in-sample winner |Z|"),
            Column::new("z_is_p975", QUANT, "97.5% quantile of the in-sample winner |Z|"),
            Column::new("mean_abs_z_wf_star", MEAN, "mean walk-forward winner |Z|"),
        ],
    );
    t.metadata.insert("keff_basis".into(), "strategy_returns".into());
    let cell = ctx.spec.cell_seed(0);
    let cap = ctx.spec.keff_cap();
    let mut wf = ctx.workflow(correlated(m, rho), k, cell);
    wf.keff_basis = KeffBasis::StrategyReturns;
    let env = ctx.env(Family::WhiteNoise);
    // Per replication: K̂_eff(pred) once, then one (signal K̂_eff, outcome) per transform.
    let runs = replicate(ctx.spec.replications, |r| {
        let p = ctx.path(&env, cell, r)?;
        let engine = SelectionEngine::new(&wf, &p)?;
        let with_keff = r < cap;
        let mut pred = None;
        let mut per = Vec::with_capacity(transforms.len());
        for (j, tr) in transforms.iter().enumerate() {
            let mode = match (with_keff, j) {
                (false, _) => MultiplicityMode::None,
                (true, 0) => MultiplicityMode::Both,
                (true, _) => MultiplicityMode::Signal,
            };
            let sel = engine.select(*tr, mode, wf.keff_basis)?;
            if j == 0 {
                pred = sel.k_eff_pred.map(|e| e.k_eff);
            }
            let (o, _) = engine.walk_forward(sel)?;
            per.push(o);
        }
        Ok((pred, per))
    });
    let key = |tr: &ThresholdTransform| {
        let (a, b) = tr.label();
        vec![a, b]
    };
    match runs {
        Ok(runs) => {
            let pred_vals: Vec<f64> = runs.iter().filter_map(|r| r.0).collect();
            let pred = mean_estimate(&pred_vals);
            for (j, tr) in transforms.iter().enumerate() {
                let o: Vec<SelectionOutcome> = runs.iter().map(|r| r.1[j].clone()).collect();
                let sig = mean_estimate(&keff_values(&o, true));
                let z: Vec<f64> = o.iter().map(|x| x.z_is_star).collect();
                let cells = vec![
                    pred,
                    sig,
                    Estimate::exact(sig.get() / pred.get()),
                    mean_estimate(&z),
                    quantile_estimate(&z, 0.025),
                    quantile_estimate(&z, 0.975),
                    mean_of(&o, |x| x.z_wf_star),
                ];
                finish_row(&mut t, key(tr), cell, Ok(cells));
            }
        }
        Err(e) => {
            for tr in &transforms {
                finish_row(&mut t, key(tr), cell, Err(Error::Contract(e.to_string())));
            }
        }
    }
    t
}

fn falsification_matrix(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let crit = g.critical_z.unwrap_or(1.96);
    let mut t = ResultTable::new(
        "FalsificationMatrix",
        &["pipeline", "environment"],
        vec![
            Column::new("wf_abs_z_mean", MEAN, "mean walk-forward |Z|"),
            Column::new("wf_fail_pct", RATE, "percent with z_wf* above the critical value"),
            Column::new("is_abs_z_mean", MEAN, "mean in-sample |Z|"),
            Column::new("is_fail_pct", RATE, "percent with z_is* above the critical value"),
            Column::new("median_bif_stab", QUANT, "median stabilized BIF on the subset z_wf* >= tau"),
        ],
    );
    let mut cell_index = 0;
    for &fam in g.workflows.as_deref().unwrap_or_default() {
        for &env_family in g.environments.as_deref().unwrap_or_default() {
            let cell = ctx.spec.cell_seed(cell_index);
            cell_index += 1;
            let mut wf = WorkflowSpec::default_for(fam);
            wf.split_ratio = ctx.spec.split_ratio;
            wf.seed = ExperimentSpec::workflow_seed(cell);
            wf.multiplicity = MultiplicityMode::None;
            let env = ctx.env(env_family);
            let cells = ctx.outcomes(&wf, &env, cell, MultiplicityMode::None).map(|o| {
                vec![
                    mean_of(&o, |x| x.z_wf_star),
                    pct(&o, |x| x.z_wf_star > crit),
                    mean_of(&o, |x| x.z_is_star),
                    pct(&o, |x| x.z_is_star > crit),
                    gated_bif(&o),
                ]
            });
            finish_row(&mut t, vec![fam.to_string(), env_family.to_string()], cell, cells);
        }
    }
    t
}

fn detection_frontier(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let crit = g.critical_z.unwrap_or(1.96);
    let mut t = ResultTable::new(
        "DetectionFrontier",
        &["phi", "theta"],
        vec![
            Column::new("pass_rate_pct", RATE, "percent with walk-forward |Z| above the critical value"),
            Column::new("mean_z_wf", MEAN, "mean signed walk-forward Z"),
        ],
    );
    let params = TrendParams {
        lookbacks: vec![1],
        thresholds: breakout_grid(),
        min_trades: 10,
        sigma_scale: SigmaScale::Nominal,
    };
    let k = params.thresholds.len();
    let mut cell_index = 0;
    for &phi in g.phi.as_deref().unwrap_or_default() {
        for &theta in g.theta.as_deref().unwrap_or_default() {
            let cell = ctx.spec.cell_seed(cell_index);
            cell_index += 1;
            let env = EnvironmentSpec::new(
                EnvParams::TarPositive(TarParams { phi, theta_act: theta, sigma_ann: 0.15 }),
                ctx.spec.length_t,
                0,
            );
            let wf = ctx.workflow(Strategy::TrendFollowing(params.clone()), k, cell);
            let cells = ctx.outcomes(&wf, &env, cell, MultiplicityMode::None).map(|o| {
                vec![
                    pct(&o, |x| x.z_wf_star > crit),
                    mean_of(&o, |x| x.z_wf.unwrap_or(0.0)),
                ]
            });
            finish_row(&mut t, vec![key_f64(phi), key_f64(theta)], cell, cells);
        }
    }
    t
}

fn break_even(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let crit = g.critical_z.unwrap_or(1.96);
    let lookbacks = g.k.clone().unwrap_or_else(|| vec![20, 40, 60]);
    let mut t = ResultTable::new(
        "BreakEvenCost",
        &["screen"],
        vec![
            Column::new("pass_rate_pct", RATE, "percent of paths with signed Z_WF at or above the screen"),
            Column::new("mean_c_star_bps", MEAN, "mean break-even per-side cost among passing paths"),
            Column::new("median_c_star_bps", QUANT, "median break-even cost"),
            Column::new("p05_c_star_bps", QUANT, "5% quantile of break-even cost"),
            Column::new("p95_c_star_bps", QUANT, "95% quantile of break-even cost"),
            Column::new("mean_turnover", MEAN, "mean one-way annual turnover among passing paths"),
            Column::new("mean_gross_ann", MEAN, "mean annualized gross return among passing paths"),
        ],
    );
    let cell = ctx.spec.cell_seed(0);
    let k = lookbacks.len();
    let wf = ctx.workflow(
        Strategy::TrendFollowing(TrendParams {
            lookbacks,
            thresholds: vec![0.0],
            min_trades: 0,
            sigma_scale: SigmaScale::InSample,
        }),
        k,
        cell,
    );
    let env = ctx.env(Family::TrendRegime);
    let runs = replicate(ctx.spec.replications, |r| {
        let p = ctx.path(&env, cell, r)?;
        let (o, trace) = run_selection_traced(&wf, &p)?;
        if o.z_wf.unwrap_or(0.0) < crit {
            return Ok(None);
        }
        match breakeven_cost(&trace.positions, &p.returns[o.n_is..], trace.boundary_position) {
            Ok(b) => Ok(Some(b)),
            Err(Error::NoTrading(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let cells = runs.map(|runs| {
        let passed: Vec<_> = runs.iter().flatten().collect();
        let c: Vec<f64> = passed.iter().map(|b| b.c_star_bps).collect();
        vec![
            rate_estimate(passed.len(), runs.len()).scaled(100.0),
            mean_estimate(&c),
            quantile_estimate(&c, 0.5),
            quantile_estimate(&c, 0.05),
            quantile_estimate(&c, 0.95),
            mean_estimate(&passed.iter().map(|b| b.turnover_one_way_ann).collect::<Vec<_>>()),
            mean_estimate(&passed.iter().map(|b| b.mu_gross_ann).collect::<Vec<_>>()),
        ]
    });
    finish_row(&mut t, vec![format!("z_wf>={crit}")], cell, cells);
    t
}

fn keff_validation(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let mut t = ResultTable::new(
        "KeffValidation",
        &["scenario", "k", "t"],
        vec![
            Column::new("k_eff_true", EXACT, "K_eff of the population correlation"),
            Column::new("shrink_mean", MEAN, "mean shrinkage estimate"),
            Column::new("shrink_bias", MEAN, "mean (estimate − truth)"),
            Column::new("shrink_rmse", EXACT, "root mean squared error"),
            Column::new("lambda", MEAN, "mean shrinkage intensity"),
            Column::new("sample_mean", MEAN, "mean unshrunk sample estimate"),
            Column::new("sample_bias", MEAN, "mean (sample estimate − truth)"),
            Column::new("sample_rmse", EXACT, "root mean squared error of the sample estimate"),
        ],
    );
    for (i, sc) in g.scenarios.as_deref().unwrap_or_default().iter().enumerate() {
        let cell = ctx.spec.cell_seed(i);
        let truth = sc.true_k_eff();
        let runs = replicate(ctx.spec.replications, |r| {
            let panel = sc.panel(rng::derive_seed(cell, &[component::CANDIDATES, r as u64]))?;
            let s = estimate_k_eff(&panel)?;
            let n = sample_k_eff(&panel)?;
            Ok((s.k_eff, s.shrinkage_lambda, n.k_eff))
        });
        let cells = runs.map(|v| {
            let shrink: Vec<f64> = v.iter().map(|x| x.0).collect();
            let sample: Vec<f64> = v.iter().map(|x| x.2).collect();
            let err = |xs: &[f64]| xs.iter().map(|x| x - truth).collect::<Vec<_>>();
            let rmse = |xs: &[f64]| (xs.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            vec![
                Estimate::exact(truth),
                mean_estimate(&shrink),
                mean_estimate(&err(&shrink)),
                Estimate::exact(rmse(&shrink)),
                mean_estimate(&v.iter().map(|x| x.1).collect::<Vec<_>>()),
                mean_estimate(&sample),
                mean_estimate(&err(&sample)),
                Estimate::exact(rmse(&sample)),
            ]
        });
        let (k, tl) = sc.dims();
        finish_row(&mut t, vec![sc.label(), k.to_string(), tl.to_string()], cell, cells);
    }
    t
}

fn split_sensitivity(ctx: &Ctx) -> ResultTable {
    let g = &ctx.spec.grid;
    let k = g.k_total.unwrap_or(100);
    let mut t = ResultTable::new(
        "SplitSensitivity",
        &["split"],
        vec![
            Column::new("n_is", EXACT, "in-sample length"),
            Column::new("k_eff", MEAN, "shrinkage K̂_eff on realized positions"),
            Column::new("mean_z_is_star", MEAN, "mean in-sample winner |Z|"),
            Column::new("mean_z_wf_star", MEAN, "mean walk-forward winner |Z|"),
            Column::new("mean_delta_z", MEAN, "mean ΔZ"),
            Column::new("median_bif_stab", QUANT, "median stabilized BIF on the subset z_wf* >= tau"),
            Column::new("wf_fail_pct", RATE, "percent with z_wf* > 1.96"),
        ],
    );
    let env = ctx.env(Family::WhiteNoise);
    for (i, &split) in g.splits.as_deref().unwrap_or_default().iter().enumerate() {
        let cell = ctx.spec.cell_seed(i);
        let mut wf = ctx.workflow(Strategy::CorrelatedFamilySearch(CorrelatedParams::default()), k, cell);
        wf.split_ratio = split;
        wf.keff_basis = KeffBasis::Positions;
        let cells = ctx.outcomes(&wf, &env, cell, MultiplicityMode::Signal).map(|o| {
            vec![
                Estimate::exact(o.first().map_or(f64::NAN, |x| x.n_is as f64)),
                mean_estimate(&keff_values(&o, true)),
                mean_of(&o, |x| x.z_is_star),
                mean_of(&o, |x| x.z_wf_star),
                mean_of(&o, |x| x.delta_z),
                gated_bif(&o),
                pct(&o, |x| x.z_wf_star > 1.96),
            ]
        });
        finish_row(&mut t, vec![key_f64(split)], cell, cells);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_experiment;

    fn small(exp: Experiment) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(exp);
        s.replications = 4;
        s.length_t = 300;
        s
    }

    #[test]
    fn keys_are_stable() {
        assert_eq!(key_f64(1.0), "1.0");
        assert_eq!(key_f64(0.25), "0.25");
    }

    #[test]
    fn factor_truth_matches_population() {
        let sc = KeffScenario::Factor { k: 99, t: 10, factors: 3, loading: 0.5 };
        assert!((sc.true_k_eff() - k_eff_population(&[33, 33, 33], 0.25)).abs() < 1e-12);
    }

    #[test]
    fn every_experiment_runs_small() {
        for exp in Experiment::ALL {
            let mut s = small(exp);
            match exp {
                Experiment::ScalingLaw => s.grid.k = Some(vec![1, 5]),
                Experiment::RedundancyLaw | Experiment::RedundancyImperfect => {
                    s.grid.k_total = Some(20);
                    s.grid.clusters = Some(vec![1, 4]);
                }
                Experiment::ThresholdAmplification => s.grid.k_total = Some(20),
                Experiment::CapacityInflation => s.grid.k = Some(vec![1, 20]),
                Experiment::FalsificationMatrix => s.grid.environments = Some(vec![Family::WhiteNoise]),
                Experiment::DetectionFrontier => {
                    s.grid.phi = Some(vec![0.25]);
                    s.grid.theta = Some(vec![1.0]);
                }
                Experiment::KeffValidation => {
                    s.grid.scenarios = Some(vec![KeffScenario::Independent { k: 10, t: 50 }])
                }
                _ => {}
            }
            let t = run_experiment(&s).unwrap();
            assert_eq!(t.failed_rows(), 0, "{exp}: {:?}", t.rows);
            assert!(!t.rows.is_empty());
        }
    }

    #[test]
    fn deterministic_across_pools() {
        let mut s = small(Experiment::ScalingLaw);
        s.grid.k = Some(vec![3]);
        s.replications = 16;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_experiment(&s)).unwrap();
        let b = three.install(|| run_experiment(&s)).unwrap();
        assert_eq!(a, b);
    }
}
