use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cate_select::datagen::{ingest_dataset, ingest_predictions};
use cate_select::harness::{
    clt_diagnostic, run_experiment, stability_diagnostic, sweep, CltOptions, CltReport, ExperimentConfig,
    NuisanceMode, StabilityConfig, StabilityReport, SweepAxis, SweepPoint,
};
use cate_select::selectors::{run_selectors_each, NuisanceSource, SelectorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cate-select", version, about = "Select the best CATE estimator with familywise error control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment; writes report.json and per_rep.csv
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the experiment along one axis; writes sweep.json and sweep.csv
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Sorted values, e.g. 3,4,5,6,7 or 0.6,0.8,1.0
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Select from candidate predictions on an observed dataset; prints JSON
    Select {
        #[command(flatten)]
        common: Common,
        /// CSV with header x_0,...,x_{d-1},t,y
        #[arg(long)]
        data: PathBuf,
        /// CSV with header tau_0,...,tau_{p-1}, one row per unit
        #[arg(long)]
        preds: PathBuf,
    },
    /// Normality or stability diagnostics
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        kind: Diagnostic,
        /// Bootstrap resamples per pair (clt)
        #[arg(long, default_value_t = 200)]
        resamples: usize,
        /// Sample sizes (stability)
        #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000")]
        grid: Vec<usize>,
        /// Perturbation probes per grid point (stability)
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; unset fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of naive,bonferroni,proposed,ablation
    #[arg(long, value_delimiter = ',')]
    selectors: Option<Vec<SelectorKind>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    inner_folds: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    CandidateCount,
    SampleFraction,
}

#[derive(Clone, Copy, ValueEnum)]
enum Diagnostic {
    Clt,
    Stability,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(config_err)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.selector.seed = seed;
        }
        if let Some(kinds) = &self.selectors {
            cfg.selectors = kinds.clone();
        }
        if let Some(alpha) = self.alpha {
            cfg.selector.alpha = alpha;
        }
        if self.lambda.is_some() {
            cfg.selector.lambda = self.lambda;
        }
        if let Some(v) = self.inner_folds {
            cfg.selector.inner_folds = v;
        }
        if let Some(reps) = self.reps {
            cfg.repetitions = reps;
        }
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf, Failure> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime_err)?;
    fs::write(path, text + "\n").map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    for row in rows {
        w.serialize(row).map_err(runtime_err)?;
    }
    w.flush().map_err(runtime_err)
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    selector: &'static str,
    completed: usize,
    fwer: f64,
    fwer_low: f64,
    fwer_high: f64,
    anws: f64,
    anws_low: f64,
    anws_high: f64,
}

fn sweep_rows(points: &[SweepPoint]) -> Vec<SweepRow> {
    points
        .iter()
        .flat_map(|pt| {
            pt.report.summaries.iter().map(move |s| SweepRow {
                value: pt.value,
                selector: s.selector.name(),
                completed: s.completed,
                fwer: s.fwer.mean,
                fwer_low: s.fwer.ci_low,
                fwer_high: s.fwer.ci_high,
                anws: s.anws.mean,
                anws_low: s.anws.ci_low,
                anws_high: s.anws.ci_high,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CltRow {
    dataset: usize,
    r: usize,
    s: usize,
    ks_statistic: f64,
    p_value: f64,
}

fn clt_rows(report: &CltReport) -> Vec<CltRow> {
    report
        .datasets
        .iter()
        .enumerate()
        .flat_map(|(k, d)| {
            d.pairs.iter().map(move |(r, s, ks)| CltRow {
                dataset: k,
                r: *r,
                s: *s,
                ks_statistic: ks.statistic,
                p_value: ks.p_value,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct StabilityRow {
    n: usize,
    lambda: f64,
    delta1_sq: f64,
    delta2_sq: f64,
}

fn stability_rows(report: &StabilityReport) -> Vec<StabilityRow> {
    (0..report.n_grid.len())
        .map(|k| StabilityRow {
            n: report.n_grid[k],
            lambda: report.lambdas[k],
            delta1_sq: report.delta1_sq[k],
            delta2_sq: report.delta2_sq[k],
        })
        .collect()
}

fn print_summary(report: &cate_select::harness::ExperimentReport) {
    for s in &report.summaries {
        println!(
            "{:<10} FWER {:.3} [{:.3}, {:.3}]  ANWS {:.3} [{:.3}, {:.3}]  failures {}",
            s.selector.name(),
            s.fwer.mean,
            s.fwer.ci_low,
            s.fwer.ci_high,
            s.anws.mean,
            s.anws.ci_low,
            s.anws.ci_high,
            s.failures
        );
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate { common } => {
            let cfg = common.experiment()?;
            let out = common.out_dir()?;
            let report = run_experiment(&cfg).map_err(runtime_err)?;
            report.write(&out).map_err(runtime_err)?;
            print_summary(&report);
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.experiment()?;
            let out = common.out_dir()?;
            let axis = match axis {
                Axis::CandidateCount => SweepAxis::CandidateCount,
                Axis::SampleFraction => SweepAxis::SampleFraction,
            };
            let points = sweep(&cfg, axis, &values).map_err(|e| match e {
                cate_select::Error::InvalidArgument(m) => Failure::Config(m),
                other => runtime_err(other),
            })?;
            write_json(&out.join("sweep.json"), &points)?;
            let rows = sweep_rows(&points);
            write_csv(&out.join("sweep.csv"), &rows)?;
            for r in &rows {
                println!("{:<8} {:<10} FWER {:.3}  ANWS {:.3}", r.value, r.selector, r.fwer, r.anws);
            }
        }
        Command::Select { common, data, preds } => {
            let cfg = common.experiment()?;
            let nuisance = match cfg.nuisance {
                NuisanceMode::Fitted(n) => n,
                NuisanceMode::Oracle => {
                    return Err(Failure::Config("oracle nuisances are not available for observed data".into()))
                }
            };
            let dataset = ingest_dataset(&data).map_err(runtime_err)?;
            let candidates = ingest_predictions(&preds, dataset.len()).map_err(runtime_err)?;
            let results = run_selectors_each(
                &cfg.selectors,
                &dataset,
                &candidates,
                &NuisanceSource::Fitted(nuisance),
                &cfg.selector,
            )
            .map_err(runtime_err)?
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(runtime_err)?;
            if common.out.is_some() {
                write_json(&common.out_dir()?.join("selection.json"), &results)?;
            }
            let text = serde_json::to_string_pretty(&results).map_err(runtime_err)?;
            writeln!(std::io::stdout(), "{text}").map_err(runtime_err)?;
        }
        Command::Diagnose {
            common,
            kind,
            resamples,
            grid,
            probes,
        } => {
            let cfg = common.experiment()?;
            let out = common.out_dir()?;
            match kind {
                Diagnostic::Clt => {
                    let options = CltOptions {
                        resamples,
                        ..CltOptions::default()
                    };
                    let report = clt_diagnostic(&cfg, &options).map_err(runtime_err)?;
                    write_json(&out.join("clt.json"), &report)?;
                    write_csv(&out.join("clt.csv"), clt_rows(&report))?;
                    println!(
                        "adjusted KS rejection share {:.3} over {} datasets; standardized KS p = {:.3}",
                        report.rejection_share,
                        report.datasets.len(),
                        report.standardized_ks.p_value
                    );
                }
                Diagnostic::Stability => {
                    let scfg = StabilityConfig {
                        dims: cfg.dims,
                        noise: cfg.noise.clone(),
                        nuisance: cfg.nuisance,
                        selector: cfg.selector,
                        probes,
                        seed: cfg.seed,
                        execution: cfg.execution,
                        ..StabilityConfig::default()
                    };
                    let report = stability_diagnostic(&grid, &scfg).map_err(|e| match e {
                        cate_select::Error::InvalidArgument(m) => Failure::Config(m),
                        other => runtime_err(other),
                    })?;
                    write_json(&out.join("stability.json"), &report)?;
                    write_csv(&out.join("stability.csv"), stability_rows(&report))?;
                    let fmt = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                    println!(
                        "log-log slope: delta1^2 {}, delta2^2 {}",
                        fmt(report.slope1),
                        fmt(report.slope2)
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
