//! Replace-one / replace-two perturbation of the centered weighted scores
//! `K_{j,r} = Q_{j,r} - E[Q_{j,r} | Z^{(-j)}]`, pushed through the full
//! pipeline (nuisance refit, out-of-fold means, softmax weights).

use serde::{Deserialize, Serialize};

use super::NuisanceMode;
use crate::datagen::{
    sample_candidate_values, toy_model, unique_winner, Dataset, NoiseSpec, Observation, ToyDims, ToyModel, UnitTruth,
};
use crate::error::{Error, Result};
use crate::nuisance::{self, NuisanceModel, NuisancePrediction};
use crate::par::{self, Execution};
use crate::rng::{self, tag, Rng};
use crate::scores::{pair_score_from_gamma, pseudo_outcome};
use crate::selectors::{exp_weights, two_way_split, SelectorConfig, SplitPlan};
use crate::stats::{mean, ols_slope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub dims: ToyDims,
    pub noise: Vec<NoiseSpec>,
    pub nuisance: NuisanceMode,
    pub selector: SelectorConfig,
    /// Perturbation probes per grid point.
    pub probes: usize,
    /// Fresh units used to integrate out `Z_j` in the centering term.
    pub centering_draws: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            dims: ToyDims::default(),
            noise: crate::datagen::near_tie_specs(),
            nuisance: NuisanceMode::default(),
            selector: SelectorConfig::default(),
            probes: 50,
            centering_draws: 500,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub candidate: usize,
    pub n_grid: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// Largest class-wise mean of `(nabla_i K_j)^2` per grid point.
    pub delta1_sq: Vec<f64>,
    /// Largest class-wise mean of `(nabla_i nabla_k K_j)^2` per grid point.
    pub delta2_sq: Vec<f64>,
    /// Log-log slopes against `n`; `None` when some estimate is zero.
    pub slope1: Option<f64>,
    pub slope2: Option<f64>,
}

#[derive(Debug, Clone)]
struct SimUnit {
    obs: Observation,
    truth: UnitTruth,
    cands: Vec<f64>,
}

fn draw_unit(model: &ToyModel, noise: &[NoiseSpec], rng: &mut Rng) -> SimUnit {
    let (obs, truth) = model.sample_unit(rng);
    let cands = sample_candidate_values(truth.tau, noise, rng);
    SimUnit { obs, truth, cands }
}

/// Nuisance values at `units`, for scoring the block opposite to `train`.
enum Scorer {
    Fitted(NuisanceModel),
    Oracle,
}

impl Scorer {
    fn at(&self, u: &SimUnit) -> NuisancePrediction {
        match self {
            Scorer::Fitted(m) => m.predict_unchecked(&u.obs.x),
            Scorer::Oracle => NuisancePrediction {
                mu0: u.truth.mu0,
                mu1: u.truth.mu1,
                e: u.truth.e,
            },
        }
    }
}

struct Probe<'a> {
    split: &'a SplitPlan,
    fresh: &'a [SimUnit],
    r: usize,
    lambda: f64,
    mode: &'a NuisanceMode,
}

impl Probe<'_> {
    fn competitor_scores(&self, u: &SimUnit, eta: &NuisancePrediction) -> Vec<f64> {
        let gamma = pseudo_outcome(&u.obs, eta);
        (0..u.cands.len())
            .filter(|&s| s != self.r)
            .map(|s| pair_score_from_gamma(u.cands[self.r], u.cands[s], gamma))
            .collect()
    }

    /// `K_{j,r}` on the data `units`.
    fn k_value(&self, units: &[SimUnit], j: usize) -> Result<f64> {
        let block = self.split.major()[j];
        let fold = self.split.inner()[j];
        let scorer = match self.mode {
            NuisanceMode::Oracle => Scorer::Oracle,
            NuisanceMode::Fitted(cfg) => {
                let ds = Dataset::new(units.iter().map(|u| u.obs.clone()).collect())?;
                Scorer::Fitted(nuisance::fit(&ds, &self.split.major_indices(block.opposite()), cfg)?)
            }
        };
        let held_out: Vec<usize> = (0..units.len())
            .filter(|&i| self.split.major()[i] == block && self.split.inner()[i] != fold)
            .collect();
        let k = units[0].cands.len() - 1;
        let mut sums = vec![0.0; k];
        for &i in &held_out {
            let eta = scorer.at(&units[i]);
            for (acc, v) in sums.iter_mut().zip(self.competitor_scores(&units[i], &eta)) {
                *acc += v;
            }
        }
        let summary: Vec<f64> = sums.iter().map(|s| s / held_out.len() as f64).collect();
        let w = exp_weights(&summary, self.lambda);
        let q_j: f64 = self
            .competitor_scores(&units[j], &scorer.at(&units[j]))
            .iter()
            .zip(&w)
            .map(|(t, wk)| t * wk)
            .sum();
        let mut center = vec![0.0; k];
        for u in self.fresh {
            for (acc, v) in center.iter_mut().zip(self.competitor_scores(u, &scorer.at(u))) {
                *acc += v;
            }
        }
        let centered: f64 = center
            .iter()
            .zip(&w)
            .map(|(c, wk)| wk * c / self.fresh.len() as f64)
            .sum();
        Ok(q_j - centered)
    }
}

/// Pick a unit outside `j`'s inner fold, in `j`'s block (`same`) or the other one.
fn pick(split: &SplitPlan, j: usize, same: bool, exclude: &[usize], rng: &mut Rng) -> usize {
    use rand::seq::IndexedRandom;
    let block = if same { split.major()[j] } else { split.major()[j].opposite() };
    let fold = split.inner()[j];
    let pool: Vec<usize> = (0..split.len())
        .filter(|&i| split.major()[i] == block && !(same && split.inner()[i] == fold) && !exclude.contains(&i))
        .collect();
    *pool.choose(rng).expect("nonempty pool")
}

/// First- and second-order differences of one probe, with their classes.
struct ProbeOutcome {
    first_class: usize,
    first: f64,
    second_class: usize,
    second: f64,
}

fn run_probe(
    config: &StabilityConfig,
    model: &ToyModel,
    n: usize,
    probe: usize,
    r: usize,
    lambda: f64,
) -> Result<ProbeOutcome> {
    let mut rng = rng::stream(config.seed, &[tag::PROBE, n as u64, probe as u64]);
    let units: Vec<SimUnit> = (0..n).map(|_| draw_unit(model, &config.noise, &mut rng)).collect();
    let fresh: Vec<SimUnit> = (0..config.centering_draws)
        .map(|_| draw_unit(model, &config.noise, &mut rng))
        .collect();
    let split = two_way_split(n, config.selector.inner_folds, rng::derive(config.seed, &[tag::SPLIT, n as u64, probe as u64]))?;
    let same_i = probe.is_multiple_of(2);
    let same_k = (probe / 2).is_multiple_of(2);
    let j = (rng::derive(config.seed, &[tag::PROBE, n as u64, probe as u64, 1]) % n as u64) as usize;
    let i = pick(&split, j, same_i, &[j], &mut rng);
    let k = pick(&split, j, same_k, &[j, i], &mut rng);
    let rep_i = draw_unit(model, &config.noise, &mut rng);
    let rep_k = draw_unit(model, &config.noise, &mut rng);

    let p = Probe {
        split: &split,
        fresh: &fresh,
        r,
        lambda,
        mode: &config.nuisance,
    };
    let mut zi = units.clone();
    zi[i] = rep_i.clone();
    let mut zk = units.clone();
    zk[k] = rep_k.clone();
    let mut zik = zi.clone();
    zik[k] = rep_k;
    let base = p.k_value(&units, j)?;
    let ki = p.k_value(&zi, j)?;
    let kk = p.k_value(&zk, j)?;
    let kik = p.k_value(&zik, j)?;
    Ok(ProbeOutcome {
        first_class: usize::from(!same_i),
        first: base - ki,
        second_class: 2 * usize::from(!same_i) + usize::from(!same_k),
        second: base - ki - kk + kik,
    })
}

fn max_class_mean_square(values: &[(usize, f64)], classes: usize) -> f64 {
    (0..classes)
        .filter_map(|c| {
            let sq: Vec<f64> = values.iter().filter(|(k, _)| *k == c).map(|(_, v)| v * v).collect();
            (!sq.is_empty()).then(|| mean(&sq))
        })
        .fold(0.0, f64::max)
}

fn log_slope(n_grid: &[usize], values: &[f64]) -> Option<f64> {
    if values.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let x: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Some(ols_slope(&x, &y))
}

/// Estimate the first- and second-order stability measures over `n_grid`
/// for the true winner among `config.noise`.
pub fn stability_diagnostic(n_grid: &[usize], config: &StabilityConfig) -> Result<StabilityReport> {
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n grid must be strictly increasing with at least 3 points"));
    }
    if config.probes == 0 || config.centering_draws == 0 {
        return Err(Error::invalid("probes and centering_draws must be >= 1"));
    }
    config.selector.validate()?;
    let r = unique_winner(&config.noise).ok_or_else(|| Error::invalid("noise specs have no unique winner"))?;
    let model = toy_model(config.dims, config.seed)?;
    let mut delta1_sq = Vec::new();
    let mut delta2_sq = Vec::new();
    let mut lambdas = Vec::new();
    for &n in n_grid {
        let lambda = config.selector.lambda_for(n);
        let outcomes = par::map_range(config.execution, config.probes, |probe| {
            run_probe(config, &model, n, probe, r, lambda)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let first: Vec<(usize, f64)> = outcomes.iter().map(|o| (o.first_class, o.first)).collect();
        let second: Vec<(usize, f64)> = outcomes.iter().map(|o| (o.second_class, o.second)).collect();
        delta1_sq.push(max_class_mean_square(&first, 2));
        delta2_sq.push(max_class_mean_square(&second, 4));
        lambdas.push(lambda);
    }
    Ok(StabilityReport {
        candidate: r,
        n_grid: n_grid.to_vec(),
        lambdas,
        slope1: log_slope(n_grid, &delta1_sq),
        slope2: log_slope(n_grid, &delta2_sq),
        delta1_sq,
        delta2_sq,
    })
}
