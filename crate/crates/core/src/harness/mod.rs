//! Monte Carlo driver: repeated simulation, FWER / ANWS accounting with
//! bootstrap intervals, sweeps, and machine-readable reports.

mod clt;
mod stability;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use clt::{clt_diagnostic, clt_from_scores, CltOptions, CltReport, DatasetClt};
pub use stability::{stability_diagnostic, StabilityConfig, StabilityReport};

use crate::datagen::{
    competitive_and_inferior_specs, generate_toy, make_candidates, near_tie_specs, unique_winner, CandidateSet, Dataset,
    NoiseSpec, ToyDims, ToyGroundTruth,
};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceConfig, NuisancePrediction};
use crate::par::{self, Execution};
use crate::rng::{self, tag};
use crate::selectors::{run_selectors_each, NuisanceSource, SelectionResult, SelectorConfig, SelectorKind};
use crate::stats::{bootstrap_mean, Estimate};

/// How nuisance values are obtained in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NuisanceMode {
    Fitted(NuisanceConfig),
    /// Use the simulated true outcome means and propensities.
    Oracle,
}

impl Default for NuisanceMode {
    fn default() -> Self {
        NuisanceMode::Fitted(NuisanceConfig::default())
    }
}

impl NuisanceMode {
    pub fn source<'a>(&self, oracle: &'a [NuisancePrediction]) -> NuisanceSource<'a> {
        match self {
            NuisanceMode::Fitted(cfg) => NuisanceSource::Fitted(*cfg),
            NuisanceMode::Oracle => NuisanceSource::Oracle(oracle),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n: usize,
    pub dims: ToyDims,
    pub noise: Vec<NoiseSpec>,
    pub selectors: Vec<SelectorKind>,
    pub selector: SelectorConfig,
    pub nuisance: NuisanceMode,
    pub repetitions: usize,
    pub seed: u64,
    /// Bootstrap resamples for the FWER / ANWS intervals.
    pub ci_resamples: usize,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            dims: ToyDims::default(),
            noise: near_tie_specs(),
            selectors: SelectorKind::ALL.to_vec(),
            selector: SelectorConfig::default(),
            nuisance: NuisanceMode::default(),
            repetitions: 100,
            seed: 0,
            ci_resamples: 2000,
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    /// One winner and four near-ties.
    pub fn near_ties() -> Self {
        Self::default()
    }

    /// Three near-ties (winner first) and four clearly inferior candidates.
    pub fn competitive_and_inferior() -> Self {
        Self {
            noise: competitive_and_inferior_specs(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<usize> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be >= 1"));
        }
        if self.selectors.is_empty() {
            return Err(Error::invalid("no selectors requested"));
        }
        if self.noise.len() < 2 {
            return Err(Error::invalid("need at least 2 candidate noise specs"));
        }
        if self.ci_resamples < 2000 {
            return Err(Error::invalid("ci_resamples must be >= 2000"));
        }
        self.selector.validate()?;
        if let NuisanceMode::Fitted(cfg) = &self.nuisance {
            cfg.validate()?;
        }
        unique_winner(&self.noise)
            .ok_or_else(|| Error::invalid("noise specs do not identify a unique winner (smallest mean^2 + sd^2)"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Seed of repetition `k`.
    pub fn rep_seed(&self, k: usize) -> u64 {
        rng::derive(self.seed, &[tag::REPETITION, k as u64])
    }

    /// Simulated inputs of repetition `k`.
    pub fn draw(&self, k: usize) -> Result<(Dataset, CandidateSet, ToyGroundTruth)> {
        let seed = self.rep_seed(k);
        let (ds, truth) = generate_toy(self.n, self.dims, seed)?;
        let cands = make_candidates(&truth, &self.noise, seed)?;
        Ok((ds, cands, truth))
    }
}

/// Decisions of every selector in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub results: Vec<SelectionResult>,
    pub errors: Vec<RepError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepError {
    pub rep: usize,
    /// `None` when the whole repetition failed.
    pub selector: Option<SelectorKind>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSummary {
    pub selector: SelectorKind,
    pub completed: usize,
    pub failures: usize,
    pub fwer: Estimate,
    pub anws: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub winner: usize,
    pub p: usize,
    pub summaries: Vec<SelectorSummary>,
    pub failures: Vec<RepError>,
    pub per_rep: Vec<RepRecord>,
    pub metadata: ReportMetadata,
}

/// Whether `winner` was rejected, and how many non-winners were kept.
pub fn rep_metrics(result: &SelectionResult, winner: usize) -> (f64, f64) {
    let kept = result.accepts(winner);
    let fwer = if kept { 0.0 } else { 1.0 };
    let wrong = result.accepted.len() - usize::from(kept);
    (fwer, wrong as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Fwer,
    Anws,
}

impl ExperimentReport {
    pub fn summary(&self, kind: SelectorKind) -> Option<&SelectorSummary> {
        self.summaries.iter().find(|s| s.selector == kind)
    }

    fn metric_values(&self, kind: SelectorKind, metric: Metric) -> Vec<(usize, f64)> {
        self.per_rep
            .iter()
            .filter_map(|r| {
                let res = r.results.iter().find(|x| x.selector == kind)?;
                let (f, a) = rep_metrics(res, self.winner);
                Some((r.rep, if metric == Metric::Fwer { f } else { a }))
            })
            .collect()
    }

    /// Paired per-repetition difference `metric(a) - metric(b)` over the
    /// repetitions where both selectors completed, with a bootstrap interval.
    pub fn paired_difference(&self, a: SelectorKind, b: SelectorKind, metric: Metric) -> Option<Estimate> {
        let va = self.metric_values(a, metric);
        let vb = self.metric_values(b, metric);
        let diffs: Vec<f64> = va
            .iter()
            .filter_map(|(rep, x)| vb.iter().find(|(r, _)| r == rep).map(|(_, y)| x - y))
            .collect();
        if diffs.is_empty() {
            return None;
        }
        let mut rng = rng::stream(self.config.seed, &[tag::CI, 1000 + a as u64 * 10 + b as u64]);
        Some(bootstrap_mean(&diffs, self.config.ci_resamples, &mut rng))
    }

    /// Write `report.json` and `per_rep.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join("report.json");
        write_json(self, &report)?;
        let csv = dir.join("per_rep.csv");
        self.write_per_rep_csv(&csv)?;
        Ok((report, csv))
    }

    pub fn write_per_rep_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut out = String::from("rep,selector,candidate,statistic,critical,accepted\n");
        for rec in &self.per_rep {
            for res in &rec.results {
                for s in &res.stats {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        rec.rep,
                        res.selector,
                        s.candidate,
                        s.statistic,
                        s.critical,
                        u8::from(res.accepts(s.candidate))
                    ));
                }
            }
        }
        w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_repetition(config: &ExperimentConfig, k: usize) -> RepRecord {
    let outcome = (|| -> Result<Vec<Result<SelectionResult>>> {
        let (ds, cands, truth) = config.draw(k)?;
        let oracle = truth.oracle_nuisance();
        let sel = SelectorConfig {
            seed: config.rep_seed(k),
            ..config.selector
        };
        run_selectors_each(&config.selectors, &ds, &cands, &config.nuisance.source(&oracle), &sel)
    })();
    match outcome {
        Ok(each) => {
            let mut results = Vec::new();
            let mut errors = Vec::new();
            for (kind, r) in config.selectors.iter().zip(each) {
                match r {
                    Ok(res) => results.push(res),
                    Err(e) => errors.push(RepError {
                        rep: k,
                        selector: Some(*kind),
                        message: e.to_string(),
                    }),
                }
            }
            RepRecord { rep: k, results, errors }
        }
        Err(e) => RepRecord {
            rep: k,
            results: Vec::new(),
            errors: vec![RepError {
                rep: k,
                selector: None,
                message: e.to_string(),
            }],
        },
    }
}

/// Summarize a set of repetition records.
pub fn summarize(config: ExperimentConfig, winner: usize, per_rep: Vec<RepRecord>) -> ExperimentReport {
    let summaries = config
        .selectors
        .iter()
        .enumerate()
        .map(|(idx, &kind)| {
            let (fwer, anws): (Vec<f64>, Vec<f64>) = per_rep
                .iter()
                .filter_map(|r| r.results.iter().find(|x| x.selector == kind))
                .map(|res| rep_metrics(res, winner))
                .unzip();
            let completed = fwer.len();
            let estimate = |xs: &[f64], which: u64| {
                if xs.is_empty() {
                    Estimate {
                        mean: f64::NAN,
                        std_error: f64::NAN,
                        ci_low: f64::NAN,
                        ci_high: f64::NAN,
                    }
                } else {
                    let mut rng = rng::stream(config.seed, &[tag::CI, idx as u64, which]);
                    bootstrap_mean(xs, config.ci_resamples, &mut rng)
                }
            };
            SelectorSummary {
                selector: kind,
                completed,
                failures: per_rep.len() - completed,
                fwer: estimate(&fwer, 0),
                anws: estimate(&anws, 1),
            }
        })
        .collect();
    let failures = per_rep.iter().flat_map(|r| r.errors.iter().cloned()).collect();
    ExperimentReport {
        p: config.noise.len(),
        config,
        winner,
        summaries,
        failures,
        per_rep,
        metadata: ReportMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    }
}

/// Run `config.repetitions` independent simulations and summarize them.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let winner = config.validate()?;
    let per_rep = par::map_range(config.execution, config.repetitions, |k| run_repetition(config, k));
    Ok(summarize(config.clone(), winner, per_rep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Use the first `p` candidate specs.
    CandidateCount,
    /// Use `round(fraction * n)` units.
    SampleFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: ExperimentReport,
}

/// One experiment per value along `axis`. Repetition seeds do not depend on
/// the sweep value, so neighbouring points share their simulated draws.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    if values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("sweep values must be sorted"));
    }
    values
        .iter()
        .map(|&value| {
            let mut cfg = config.clone();
            match axis {
                SweepAxis::CandidateCount => {
                    let p = value as usize;
                    if value.fract() != 0.0 || p < 2 || p > config.noise.len() {
                        return Err(Error::invalid(format!(
                            "candidate count {value} outside 2..={}",
                            config.noise.len()
                        )));
                    }
                    cfg.noise.truncate(p);
                }
                SweepAxis::SampleFraction => {
                    if !(value > 0.0 && value <= 1.0) {
                        return Err(Error::invalid(format!("sample fraction {value} outside (0, 1]")));
                    }
                    cfg.n = (value * config.n as f64).round() as usize;
                }
            }
            Ok(SweepPoint {
                value,
                report: run_experiment(&cfg)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selectors::{CandidateDecision, Decision};

    fn fake(selector: SelectorKind, accepted: Vec<usize>, p: usize) -> SelectionResult {
        SelectionResult {
            selector,
            alpha: 0.1,
            lambda: None,
            stats: (0..p)
                .map(|c| CandidateDecision {
                    candidate: c,
                    statistic: 0.0,
                    critical: 1.0,
                    decision: if accepted.contains(&c) { Decision::Accept } else { Decision::Reject },
                })
                .collect(),
            accepted,
        }
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n: 300,
            repetitions: 6,
            selectors: vec![SelectorKind::Naive, SelectorKind::Proposed],
            selector: SelectorConfig {
                bootstrap_b: 1000,
                ..SelectorConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn degenerate_selectors() {
        let cfg = ExperimentConfig {
            selectors: vec![SelectorKind::Naive, SelectorKind::Bonferroni],
            repetitions: 4,
            ..ExperimentConfig::default()
        };
        let p = cfg.noise.len();
        let per_rep = (0..4)
            .map(|rep| RepRecord {
                rep,
                results: vec![
                    fake(SelectorKind::Naive, (0..p).collect(), p),
                    fake(SelectorKind::Bonferroni, vec![], p),
                ],
                errors: vec![],
            })
            .collect();
        let report = summarize(cfg, 0, per_rep);
        let all = report.summary(SelectorKind::Naive).unwrap();
        assert_eq!((all.fwer.mean, all.anws.mean), (0.0, (p - 1) as f64));
        let none = report.summary(SelectorKind::Bonferroni).unwrap();
        assert_eq!((none.fwer.mean, none.anws.mean), (1.0, 0.0));
        let d = report
            .paired_difference(SelectorKind::Naive, SelectorKind::Bonferroni, Metric::Anws)
            .unwrap();
        assert_eq!(d.mean, (p - 1) as f64);
    }

    #[test]
    fn report_is_reproducible_and_parallel_invariant() {
        let cfg = small_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&ExperimentConfig {
            execution: Execution::Sequential,
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(a.per_rep, b.per_rep);
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&run_experiment(&cfg).unwrap()).unwrap()
        );
    }

    #[test]
    fn per_rep_csv_recomputes_metrics() {
        let cfg = small_config();
        let report = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (json, csv) = report.write(dir.path()).unwrap();
        assert!(json.exists());
        let mut rdr = csv::Reader::from_path(&csv).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            ["rep", "selector", "candidate", "statistic", "critical", "accepted"]
        );
        let mut fwer = 0.0;
        let mut anws = 0.0;
        for rec in rdr.records() {
            let rec = rec.unwrap();
            if &rec[1] != "proposed" || &rec[5] != "1" {
                if &rec[1] == "proposed" && &rec[2] == "0" {
                    fwer += 1.0;
                }
                continue;
            }
            if &rec[2] != "0" {
                anws += 1.0;
            }
        }
        let s = report.summary(SelectorKind::Proposed).unwrap();
        assert_eq!(s.fwer.mean, fwer / 6.0);
        assert_eq!(s.anws.mean, anws / 6.0);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small_config();
        cfg.repetitions = 0;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small_config();
        cfg.noise = vec![NoiseSpec::new(0.0, 0.1), NoiseSpec::new(0.0, 0.1)];
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = small_config();
        cfg.ci_resamples = 100;
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn failing_repetitions_are_recorded() {
        // two units per inner fold cannot host a nuisance fit
        let cfg = ExperimentConfig {
            n: 20,
            ..small_config()
        };
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.failures.len(), cfg.repetitions);
        assert!(report.failures.iter().all(|f| f.selector.is_none()));
        assert_eq!(report.summaries[0].completed, 0);
        assert_eq!(report.summaries[0].failures, cfg.repetitions);
    }

    #[test]
    fn single_value_sweep_matches_experiment() {
        let cfg = small_config();
        let pts = sweep(&cfg, SweepAxis::CandidateCount, &[5.0]).unwrap();
        assert_eq!(pts[0].report, run_experiment(&cfg).unwrap());
        let pts = sweep(&cfg, SweepAxis::SampleFraction, &[1.0]).unwrap();
        assert_eq!(pts[0].report, run_experiment(&cfg).unwrap());
    }

    #[test]
    fn sweep_validation() {
        let cfg = small_config();
        assert!(sweep(&cfg, SweepAxis::CandidateCount, &[4.0, 3.0]).is_err());
        assert!(sweep(&cfg, SweepAxis::CandidateCount, &[9.0]).is_err());
        assert!(sweep(&cfg, SweepAxis::SampleFraction, &[0.0]).is_err());
        assert!(sweep(&cfg, SweepAxis::SampleFraction, &[]).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::competitive_and_inferior();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"n": 500, "nuisance": {"kind": "oracle"}}"#).unwrap();
        assert_eq!(partial.n, 500);
        assert_eq!(partial.nuisance, NuisanceMode::Oracle);
        assert_eq!(partial.repetitions, 100);
    }
}
