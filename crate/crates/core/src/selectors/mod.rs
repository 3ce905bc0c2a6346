//! Selection procedures. Each maps a dataset and candidate set to an accepted
//! set that should contain the true winner (the candidate with the smallest
//! MSE against the true CATE).
//!
//! * [`naive_select`]: max of studentized pairwise statistics against a
//!   parametric-bootstrap critical value.
//! * [`bonferroni_select`]: the same max statistic against `z_{1 - alpha/(p-1)}`.
//! * [`proposed_select`]: two-layer cross-fitted exponentially weighted test.
//! * [`single_layer_ablation_select`]: the weighted test with in-sample
//!   nuisances and one layer of folds. Not error-controlling; kept for comparison.

mod naive;
mod proposed;
mod split;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use naive::max_gaussian_quantile;
pub use proposed::{exp_weighted_statistics, CandidateStatistic, FoldLayout, FoldWeights, ProposedStatistics};
pub use split::{single_layer_folds, two_way_split, MajorFold, SplitPlan, MIN_CELL};
pub use weights::exp_weights;

use crate::datagen::{CandidateSet, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::{self, CrossFitModels, NuisanceConfig, NuisancePrediction};
use crate::par::{self, Execution};
use crate::rng::{self, tag};
use crate::scores::ScoreTensor;
use crate::stats::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Naive,
    Bonferroni,
    Proposed,
    Ablation,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 4] = [
        SelectorKind::Naive,
        SelectorKind::Bonferroni,
        SelectorKind::Proposed,
        SelectorKind::Ablation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Naive => "naive",
            SelectorKind::Bonferroni => "bonferroni",
            SelectorKind::Proposed => "proposed",
            SelectorKind::Ablation => "ablation",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown selector {s:?}")))
    }
}

/// Minimum bootstrap size for the naive selector.
pub const MIN_BOOTSTRAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub alpha: f64,
    /// Softmax temperature; `None` means `n^0.4`.
    pub lambda: Option<f64>,
    pub inner_folds: usize,
    pub bootstrap_b: usize,
    pub seed: u64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.10,
            lambda: None,
            inner_folds: 5,
            bootstrap_b: 5000,
            seed: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        if self.inner_folds < 2 {
            return Err(Error::invalid("inner_folds must be >= 2"));
        }
        if self.bootstrap_b < MIN_BOOTSTRAP {
            return Err(Error::invalid(format!("bootstrap_b must be >= {MIN_BOOTSTRAP}")));
        }
        Ok(())
    }

    /// Temperature for a dataset of `n` units.
    pub fn lambda_for(&self, n: usize) -> f64 {
        self.lambda.unwrap_or_else(|| default_lambda(n))
    }
}

/// `n^0.4`, which is `o(sqrt(n))`.
pub fn default_lambda(n: usize) -> f64 {
    (n as f64).powf(0.4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDecision {
    pub candidate: usize,
    pub statistic: f64,
    pub critical: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selector: SelectorKind,
    pub alpha: f64,
    pub lambda: Option<f64>,
    pub accepted: Vec<usize>,
    pub stats: Vec<CandidateDecision>,
}

impl SelectionResult {
    fn from_decisions(selector: SelectorKind, alpha: f64, lambda: Option<f64>, stats: Vec<CandidateDecision>) -> Self {
        let accepted = stats
            .iter()
            .filter(|s| s.decision == Decision::Accept)
            .map(|s| s.candidate)
            .collect();
        Self {
            selector,
            alpha,
            lambda,
            accepted,
            stats,
        }
    }

    pub fn accepts(&self, candidate: usize) -> bool {
        self.accepted.contains(&candidate)
    }
}

/// Where the outcome and propensity values used in the scores come from.
#[derive(Debug, Clone, Copy)]
pub enum NuisanceSource<'a> {
    /// Fit ridge / logistic models (cross-fitted where the selector requires it).
    Fitted(NuisanceConfig),
    /// Known per-unit values; no fitting.
    Oracle(&'a [NuisancePrediction]),
}

impl Default for NuisanceSource<'_> {
    fn default() -> Self {
        NuisanceSource::Fitted(NuisanceConfig::default())
    }
}

fn check_inputs(dataset: &Dataset, candidates: &CandidateSet, config: &SelectorConfig) -> Result<()> {
    config.validate()?;
    if candidates.p() < 2 {
        return Err(Error::invalid(format!("need at least 2 candidates, got {}", candidates.p())));
    }
    if candidates.n() != dataset.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.len(),
            found: candidates.n(),
        });
    }
    Ok(())
}

/// The split every selector derives from `config.seed`.
pub fn split_for(n: usize, config: &SelectorConfig) -> Result<SplitPlan> {
    two_way_split(n, config.inner_folds, rng::derive(config.seed, &[tag::SPLIT]))
}

/// Tensor with two-fold cross-fitted nuisances over `split`.
pub fn cross_fitted_tensor(
    dataset: &Dataset,
    candidates: &CandidateSet,
    split: &SplitPlan,
    nuisance: &NuisanceSource<'_>,
) -> Result<ScoreTensor> {
    match nuisance {
        NuisanceSource::Fitted(cfg) => {
            let models = CrossFitModels::fit(dataset, split, cfg)?;
            crate::scores::build_score_tensor(dataset, candidates, split, &models)
        }
        NuisanceSource::Oracle(preds) => {
            ScoreTensor::from_predictions(dataset, candidates, preds, Some(split.major().to_vec()))
        }
    }
}

/// Tensor whose nuisances were fitted on, and evaluated at, all units.
pub fn in_sample_tensor(dataset: &Dataset, candidates: &CandidateSet, nuisance: &NuisanceSource<'_>) -> Result<ScoreTensor> {
    match nuisance {
        NuisanceSource::Fitted(cfg) => {
            let all: Vec<usize> = (0..dataset.len()).collect();
            let model = nuisance::fit(dataset, &all, cfg)?;
            ScoreTensor::from_predictions(dataset, candidates, &model.predict_all(dataset)?, None)
        }
        NuisanceSource::Oracle(preds) => ScoreTensor::from_predictions(dataset, candidates, preds, None),
    }
}

/// Naive max-statistic decisions from a precomputed tensor.
pub fn naive_from_tensor(tensor: &ScoreTensor, config: &SelectorConfig) -> Result<SelectionResult> {
    config.validate()?;
    let p = tensor.p();
    let per_candidate = par::map_range(Execution::default(), p, |m| -> Result<CandidateDecision> {
        let (stats, corr) = naive::studentized(tensor, m)?;
        let mut rng = rng::stream(config.seed, &[tag::BOOTSTRAP, m as u64]);
        let critical = naive::max_quantile_from_correlation(&corr, config.alpha, config.bootstrap_b, &mut rng)?;
        let statistic = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(CandidateDecision {
            candidate: m,
            statistic,
            critical,
            decision: if statistic <= critical { Decision::Accept } else { Decision::Reject },
        })
    });
    let stats = per_candidate.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SelectionResult::from_decisions(SelectorKind::Naive, config.alpha, None, stats))
}

/// Bonferroni decisions from a precomputed tensor.
pub fn bonferroni_from_tensor(tensor: &ScoreTensor, config: &SelectorConfig) -> Result<SelectionResult> {
    config.validate()?;
    let p = tensor.p();
    let critical = normal_quantile(1.0 - config.alpha / (p - 1) as f64);
    let stats = (0..p)
        .map(|m| {
            let (stats, _) = naive::studentized(tensor, m)?;
            let statistic = stats.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(CandidateDecision {
                candidate: m,
                statistic,
                critical,
                decision: if statistic <= critical { Decision::Accept } else { Decision::Reject },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionResult::from_decisions(SelectorKind::Bonferroni, config.alpha, None, stats))
}

/// Weighted-test decisions for a tensor and fold layout.
pub fn weighted_from_tensor(
    kind: SelectorKind,
    tensor: &ScoreTensor,
    layout: &FoldLayout,
    config: &SelectorConfig,
) -> Result<(SelectionResult, ProposedStatistics)> {
    config.validate()?;
    let lambda = config.lambda_for(tensor.n());
    let stats = exp_weighted_statistics(tensor, layout, lambda)?;
    let critical = normal_quantile(1.0 - config.alpha);
    let decisions = stats
        .candidates
        .iter()
        .map(|c| CandidateDecision {
            candidate: c.candidate,
            statistic: c.z,
            critical,
            decision: if c.z < critical { Decision::Accept } else { Decision::Reject },
        })
        .collect();
    Ok((
        SelectionResult::from_decisions(kind, config.alpha, Some(lambda), decisions),
        stats,
    ))
}

pub fn naive_select(
    dataset: &Dataset,
    candidates: &CandidateSet,
    nuisance: &NuisanceSource<'_>,
    config: &SelectorConfig,
) -> Result<SelectionResult> {
    check_inputs(dataset, candidates, config)?;
    let split = split_for(dataset.len(), config)?;
    naive_from_tensor(&cross_fitted_tensor(dataset, candidates, &split, nuisance)?, config)
}

pub fn bonferroni_select(
    dataset: &Dataset,
    candidates: &CandidateSet,
    nuisance: &NuisanceSource<'_>,
    config: &SelectorConfig,
) -> Result<SelectionResult> {
    check_inputs(dataset, candidates, config)?;
    let split = split_for(dataset.len(), config)?;
    bonferroni_from_tensor(&cross_fitted_tensor(dataset, candidates, &split, nuisance)?, config)
}

/// The proposed test together with its intermediate statistics.
pub fn proposed_statistics(
    dataset: &Dataset,
    candidates: &CandidateSet,
    nuisance: &NuisanceSource<'_>,
    config: &SelectorConfig,
) -> Result<(SelectionResult, ProposedStatistics)> {
    check_inputs(dataset, candidates, config)?;
    let split = split_for(dataset.len(), config)?;
    let tensor = cross_fitted_tensor(dataset, candidates, &split, nuisance)?;
    weighted_from_tensor(SelectorKind::Proposed, &tensor, &FoldLayout::two_layer(&split), config)
}

pub fn proposed_select(
    dataset: &Dataset,
    candidates: &CandidateSet,
    nuisance: &NuisanceSource<'_>,
    config: &SelectorConfig,
) -> Result<SelectionResult> {
    proposed_statistics(dataset, candidates, nuisance, config).map(|(r, _)| r)
}

/// Fold layout of the single-layer ablation for `n` units.
pub fn ablation_layout(n: usize, config: &SelectorConfig) -> Result<FoldLayout> {
    let inner = single_layer_folds(n, config.inner_folds, rng::derive(config.seed, &[tag::SPLIT]))?;
    Ok(FoldLayout::single_layer(&inner, config.inner_folds))
}

pub fn single_layer_ablation_select(
    dataset: &Dataset,
    candidates: &CandidateSet,
    nuisance: &NuisanceSource<'_>,
    config: &SelectorConfig,
) -> Result<SelectionResult> {
    check_inputs(dataset, candidates, config)?;
    let tensor = in_sample_tensor(dataset, candidates, nuisance)?;
    let layout = ablation_layout(dataset.len(), config)?;
    weighted_from_tensor(SelectorKind::Ablation, &tensor, &layout, config).map(|(r, _)| r)
}

/// Run several selectors on one dataset. Naive, Bonferroni and the proposed
/// test share a single cross-fitted tensor; results follow `kinds` order.
pub fn run_selectors(
    kinds: &[SelectorKind],
    dataset: &Dataset,
    candidates: &CandidateSet,
    nuisance: &NuisanceSource<'_>,
    config: &SelectorConfig,
) -> Result<Vec<SelectionResult>> {
    run_selectors_each(kinds, dataset, candidates, nuisance, config)?
        .into_iter()
        .collect()
}

/// Like [`run_selectors`], but a failure inside one selector does not discard
/// the others. The outer error covers input validation and the shared tensor.
pub fn run_selectors_each(
    kinds: &[SelectorKind],
    dataset: &Dataset,
    candidates: &CandidateSet,
    nuisance: &NuisanceSource<'_>,
    config: &SelectorConfig,
) -> Result<Vec<Result<SelectionResult>>> {
    check_inputs(dataset, candidates, config)?;
    let split = split_for(dataset.len(), config)?;
    let shared = if kinds.iter().any(|k| *k != SelectorKind::Ablation) {
        Some(cross_fitted_tensor(dataset, candidates, &split, nuisance)?)
    } else {
        None
    };
    Ok(kinds
        .iter()
        .map(|kind| {
            let tensor = || shared.as_ref().expect("cross-fitted tensor");
            match kind {
                SelectorKind::Naive => naive_from_tensor(tensor(), config),
                SelectorKind::Bonferroni => bonferroni_from_tensor(tensor(), config),
                SelectorKind::Proposed => {
                    weighted_from_tensor(*kind, tensor(), &FoldLayout::two_layer(&split), config).map(|(r, _)| r)
                }
                SelectorKind::Ablation => single_layer_ablation_select(dataset, candidates, nuisance, config),
            }
        })
        .collect())
}
