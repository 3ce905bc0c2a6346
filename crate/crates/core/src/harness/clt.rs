//! Normal-approximation diagnostics for the pairwise relative-error estimates.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, tag, Rng};
use crate::selectors::{cross_fitted_tensor, split_for, SelectorConfig};
use crate::stats::{ks_test_normal, mean, sample_variance, KsTest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CltOptions {
    /// Bootstrap resamples per pair and dataset.
    pub resamples: usize,
    /// Threshold for Bonferroni-adjusted KS p-values.
    pub level: f64,
}

impl Default for CltOptions {
    fn default() -> Self {
        Self {
            resamples: 200,
            level: 0.05,
        }
    }
}

/// KS results for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetClt {
    /// `(r, s, KS test)` for every tested pair.
    pub pairs: Vec<(usize, usize, KsTest)>,
    /// Smallest p-value times the number of tested pairs, capped at 1.
    pub min_adjusted_p: f64,
    pub skipped: Vec<String>,
}

impl DatasetClt {
    pub fn rejects(&self, level: f64) -> bool {
        !self.pairs.is_empty() && self.min_adjusted_p < level
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub datasets: Vec<DatasetClt>,
    /// Share of datasets with some adjusted p-value below `level`.
    pub rejection_share: f64,
    pub level: f64,
    /// `(delta_hat - delta) / sqrt(V_hat / n)` of pair `(1, 0)` per dataset,
    /// with `delta` the population value of the noisy-oracle candidates.
    pub standardized: Vec<f64>,
    pub standardized_ks: KsTest,
}

/// Studentized bootstrap of each score vector's mean, KS-tested against
/// `N(0, 1)`, Bonferroni-adjusted over the vectors. Constant vectors are
/// skipped and noted.
pub fn clt_from_scores(pairs: &[(usize, usize, &[f64])], resamples: usize, rng: &mut Rng) -> DatasetClt {
    let mut tested = Vec::new();
    let mut skipped = Vec::new();
    for &(r, s, scores) in pairs {
        let n = scores.len();
        let center = mean(scores);
        if n < 2 || scores.iter().all(|&v| v == scores[0]) {
            skipped.push(format!("pair ({r}, {s}): degenerate variance"));
            continue;
        }
        let mut stats = Vec::with_capacity(resamples);
        let mut draw = vec![0.0; n];
        for _ in 0..resamples {
            for d in draw.iter_mut() {
                *d = scores[rng.random_range(0..n)];
            }
            let sd = sample_variance(&draw).sqrt();
            if sd > 0.0 {
                stats.push((mean(&draw) - center) / (sd / (n as f64).sqrt()));
            }
        }
        tested.push((r, s, ks_test_normal(&stats)));
    }
    let m = tested.len() as f64;
    let min_adjusted_p = tested
        .iter()
        .map(|(_, _, k)| (k.p_value * m).min(1.0))
        .fold(1.0, f64::min);
    DatasetClt {
        pairs: tested,
        min_adjusted_p,
        skipped,
    }
}

/// Run the bootstrap/KS diagnostic on `config.repetitions` simulated datasets.
pub fn clt_diagnostic(config: &ExperimentConfig, options: &CltOptions) -> Result<CltReport> {
    config.validate()?;
    if options.resamples < 2 {
        return Err(Error::invalid("need at least 2 bootstrap resamples"));
    }
    let population = config.noise[1].mse() - config.noise[0].mse();
    let per_dataset = par::map_range(config.execution, config.repetitions, |k| -> Result<(DatasetClt, f64)> {
        let (ds, cands, truth) = config.draw(k)?;
        let oracle = truth.oracle_nuisance();
        let sel = SelectorConfig {
            seed: config.rep_seed(k),
            ..config.selector
        };
        let split = split_for(ds.len(), &sel)?;
        let tensor = cross_fitted_tensor(&ds, &cands, &split, &config.nuisance.source(&oracle))?;
        let p = tensor.p();
        let pairs: Vec<(usize, usize, &[f64])> = (0..p)
            .flat_map(|r| (r + 1..p).map(move |s| (r, s)))
            .map(|(r, s)| (r, s, tensor.pair(r, s)))
            .collect();
        let mut rng = rng::stream(config.rep_seed(k), &[tag::BOOTSTRAP, u64::MAX]);
        let diag = clt_from_scores(&pairs, options.resamples, &mut rng);
        let scores = tensor.pair(1, 0);
        let se = (sample_variance(scores) / scores.len() as f64).sqrt();
        Ok((diag, (mean(scores) - population) / se))
    });
    let (datasets, standardized): (Vec<DatasetClt>, Vec<f64>) =
        per_dataset.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let rejection_share =
        datasets.iter().filter(|d| d.rejects(options.level)).count() as f64 / datasets.len() as f64;
    Ok(CltReport {
        standardized_ks: ks_test_normal(&standardized),
        datasets,
        rejection_share,
        level: options.level,
        standardized,
    })
}
