//! `falsify`: simulate, calibrate, audit and report.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use falsify_core::audit::{self, AuditReport, DataSource, NullCalibration};
use falsify_core::environments::{EnvironmentSpec, Family};
use falsify_core::harness::{run_experiment, Experiment, ExperimentSpec, ResultTable};
use falsify_core::io::{ingest_returns, RunConfig, Strictness};

#[derive(Parser)]
#[command(name = "falsify", version, about = "Audit adaptive backtests for spurious predictability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON with environments, workflow, audit, experiment sections).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo replications (per grid cell or per calibration environment).
    #[arg(long)]
    replications: Option<usize>,
    /// Output directory.
    #[arg(long, env = "FALSIFY_OUT_DIR", default_value = "falsify-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Treat suspicious input rows as errors (default).
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,
    /// Downgrade suspicious input rows to warnings and sort unsorted dates.
    #[arg(long)]
    lenient: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => Ok(RunConfig::load(p)?),
            None => Ok(RunConfig::default()),
        }
    }

    fn strictness(&self, cfg: &RunConfig) -> Strictness {
        if self.lenient {
            Strictness::Lenient
        } else if self.strict {
            Strictness::Strict
        } else {
            cfg.audit.strictness
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one Monte Carlo experiment grid and write its result table.
    Simulate {
        /// Experiment name, e.g. scaling-law; optional when the config has an experiment section.
        experiment: Option<String>,
        /// Compute K̂_eff on only the first N replications of each cell.
        #[arg(long)]
        keff_replications: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Build a Stage-1 null calibration archive.
    Calibrate {
        /// Calibrate the pipeline itself instead of the reference workflow, which also
        /// gives Stage 2 a matched null.
        #[arg(long)]
        matched: bool,
        #[arg(long)]
        alpha: Option<f64>,
        /// Length of each simulated environment path.
        #[arg(long)]
        length: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the two-stage audit of the configured pipeline.
    Audit {
        /// Calibration archive directory.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// `(date, return)` CSV for Stage 2.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render a result table or audit report JSON as text.
    Report {
        path: PathBuf,
    },
}

fn init_pool(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("building worker pool")?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn simulate(experiment: Option<String>, keff_replications: Option<usize>, common: Common) -> Result<ExitCode> {
    let mut cfg = common.config()?;
    let mut spec = match (experiment, cfg.experiment.take()) {
        (Some(name), from_cfg) => {
            let exp = Experiment::parse(&name).with_context(|| {
                let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
                format!("unknown experiment {name:?}; expected one of {}", names.join(", "))
            })?;
            match from_cfg {
                Some(s) if s.experiment == exp => s,
                _ => ExperimentSpec::new(exp),
            }
        }
        (None, Some(s)) => s,
        (None, None) => bail!("name an experiment or give a config with an experiment section"),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(n) = common.replications {
        spec.replications = n;
    }
    if keff_replications.is_some() {
        spec.keff_replications = keff_replications;
    }
    let out = spec.output_dir.clone().unwrap_or_else(|| common.out.clone());
    spec.output_dir = Some(out.clone());
    cfg.experiment = Some(spec.clone());
    fs::create_dir_all(&out)?;
    write_json(&out.join("resolved_config.json"), &cfg.resolved()?)?;
    let table = run_experiment(&spec)?;
    let files = table.write(&out)?;
    print!("{}", table.to_text());
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    if table.failed_rows() > 0 {
        eprintln!("{} grid cell(s) failed", table.failed_rows());
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn calibrate(matched: bool, alpha: Option<f64>, length: Option<usize>, common: Common) -> Result<ExitCode> {
    let mut cfg = common.config()?;
    if let Some(a) = alpha {
        cfg.audit.alpha = a;
    }
    if let Some(n) = common.replications {
        cfg.audit.replications = n;
    }
    if let Some(t) = length {
        cfg.audit.length_t = t;
    }
    let workflow = if matched {
        cfg.workflow.clone().context("--matched needs a workflow section in the config")?
    } else {
        cfg.audit.reference()
    };
    let dir = cfg.audit.calibration_dir.clone().unwrap_or_else(|| common.out.join("calibration"));
    let resolved = cfg.resolved()?;
    let cal = audit::calibrate_stage1(
        &workflow,
        &cfg.environments(),
        cfg.audit.replications,
        cfg.audit.alpha,
        common.seed.unwrap_or(0),
    )?;
    cal.save(&dir)?;
    write_json(&dir.join("resolved_config.json"), &resolved)?;
    println!("calibrated {} ({}) at level {:.4}", workflow.family(), &cal.workflow_hash[..12], cal.level);
    for e in &cal.environments {
        println!("  {:<24} zeta={:.3}  zeta_95={:.3}", e.label, e.zeta, e.zeta_95);
    }
    eprintln!("wrote {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn run_audit(calibration: Option<PathBuf>, data: Option<PathBuf>, common: Common) -> Result<ExitCode> {
    let cfg = common.config()?;
    let pipeline = cfg.workflow.clone().context("the config needs a workflow section naming the pipeline")?;
    let dir = calibration
        .or_else(|| cfg.audit.calibration_dir.clone())
        .context("give --calibration or audit.calibration_dir")?;
    let cal = NullCalibration::load(&dir).with_context(|| format!("loading calibration from {}", dir.display()))?;
    let reference = if cal.workflow_hash == pipeline.content_hash() {
        pipeline.clone()
    } else {
        cfg.audit.reference()
    };
    let seed = common.seed.unwrap_or(0);
    let target = match data.or_else(|| cfg.audit.data.clone()) {
        Some(path) => {
            let (returns, report) = ingest_returns(&path, common.strictness(&cfg))
                .with_context(|| format!("ingesting {}", path.display()))?;
            for g in &report.gaps {
                log::info!("gap of {} calendar days between {} and {}", g.calendar_days, g.after, g.before);
            }
            DataSource::Returns(returns)
        }
        None => DataSource::Synthetic(cfg.audit.target.clone().unwrap_or_else(|| {
            let t = cal.environments.first().map_or(cfg.audit.length_t, |e| e.source.length_t());
            EnvironmentSpec::default_for(Family::WhiteNoise, t, seed)
        })),
    };
    let report = audit::run_audit(&pipeline, &reference, &cal, Some(&target), seed)?;
    fs::create_dir_all(&common.out)?;
    write_json(&common.out.join("audit_report.json"), &report)?;
    fs::write(common.out.join("audit_report.txt"), report.to_text())?;
    print!("{}", report.to_text());
    Ok(ExitCode::from(report.exit_code() as u8))
}

fn report(path: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(t) = serde_json::from_str::<ResultTable>(&text) {
        print!("{}", t.to_text());
    } else if let Ok(r) = serde_json::from_str::<AuditReport>(&text) {
        print!("{}", r.to_text());
    } else {
        bail!("{} is neither a result table nor an audit report", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { experiment, keff_replications, common } => {
            init_pool(common.workers).and_then(|_| simulate(experiment, keff_replications, common))
        }
        Command::Calibrate { matched, alpha, length, common } => {
            init_pool(common.workers).and_then(|_| calibrate(matched, alpha, length, common))
        }
        Command::Audit { calibration, data, common } => {
            init_pool(common.workers).and_then(|_| run_audit(calibration, data, common))
        }
        Command::Report { path } => report(&path),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
