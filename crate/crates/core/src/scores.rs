//! Per-unit pairwise relative-error scores.
//!
//! For candidates `r, s` and unit `i` the one-step score is
//!
//! ```text
//! t(Z_i; r, s) = tau_r^2 - tau_s^2 - 2 (tau_r - tau_s) * Gamma(Z_i)
//! Gamma(Z)     = T (Y - mu1) / e + mu1 - (1 - T)(Y - mu0) / (1 - e) - mu0
//! ```
//!
//! whose mean estimates `E[(tau_r - tau)^2] - E[(tau_s - tau)^2]`. Negative
//! values favour `r`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::{CandidateSet, Dataset, Observation};
use crate::error::{Error, Result};
use crate::nuisance::{CrossFitModels, NuisancePrediction};
use crate::par::{self, Execution};
use crate::selectors::{MajorFold, SplitPlan};

/// AIPW pseudo-outcome of one unit.
pub fn pseudo_outcome(z: &Observation, nuisance: &NuisancePrediction) -> f64 {
    let NuisancePrediction { mu0, mu1, e } = *nuisance;
    let t = f64::from(z.t);
    t * (z.y - mu1) / e + mu1 - (1.0 - t) * (z.y - mu0) / (1.0 - e) - mu0
}

#[inline]
pub fn pair_score_from_gamma(tau_r: f64, tau_s: f64, gamma: f64) -> f64 {
    tau_r * tau_r - tau_s * tau_s - 2.0 * (tau_r - tau_s) * gamma
}

pub fn pair_score(z: &Observation, tau_r: f64, tau_s: f64, nuisance: &NuisancePrediction) -> f64 {
    pair_score_from_gamma(tau_r, tau_s, pseudo_outcome(z, nuisance))
}

/// `values[(r * p + s) * n + i] = t(Z_i; r, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    p: usize,
    n: usize,
    values: Vec<f64>,
    fold_of: Option<Vec<MajorFold>>,
}

impl ScoreTensor {
    /// Build from per-unit nuisance values. `fold_of` records the major fold of
    /// each unit when the values are cross-fitted.
    pub fn from_predictions(
        dataset: &Dataset,
        candidates: &CandidateSet,
        nuisance: &[NuisancePrediction],
        fold_of: Option<Vec<MajorFold>>,
    ) -> Result<Self> {
        let n = dataset.len();
        if candidates.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: candidates.n(),
            });
        }
        if nuisance.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: nuisance.len(),
            });
        }
        if let Some(f) = &fold_of {
            if f.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: f.len(),
                });
            }
        }
        let gamma: Vec<f64> = dataset
            .observations()
            .iter()
            .zip(nuisance)
            .map(|(z, eta)| pseudo_outcome(z, eta))
            .collect();
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("non-finite pseudo-outcome; check propensities"));
        }
        let p = candidates.p();
        let pairs: Vec<(usize, usize)> = (0..p).flat_map(|r| (r + 1..p).map(move |s| (r, s))).collect();
        let upper = par::map_slice(Execution::default(), &pairs, |&(r, s)| {
            let (tr, ts) = (candidates.row(r), candidates.row(s));
            (0..n)
                .map(|i| pair_score_from_gamma(tr[i], ts[i], gamma[i]))
                .collect::<Vec<f64>>()
        });
        let mut values = vec![0.0; p * p * n];
        for (&(r, s), row) in pairs.iter().zip(upper) {
            let rs = (r * p + s) * n;
            let sr = (s * p + r) * n;
            for (i, v) in row.into_iter().enumerate() {
                values[rs + i] = v;
                values[sr + i] = -v;
            }
        }
        Ok(Self { p, n, values, fold_of })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fold_of(&self) -> Option<&[MajorFold]> {
        self.fold_of.as_deref()
    }

    pub fn get(&self, r: usize, s: usize, i: usize) -> f64 {
        self.values[(r * self.p + s) * self.n + i]
    }

    /// Scores of pair `(r, s)` over all units.
    pub fn pair(&self, r: usize, s: usize) -> &[f64] {
        let start = (r * self.p + s) * self.n;
        &self.values[start..start + self.n]
    }

    pub fn pair_mean(&self, r: usize, s: usize) -> f64 {
        self.pair(r, s).iter().sum::<f64>() / self.n as f64
    }

    /// Competitors of `m` in increasing index order.
    pub fn others(&self, m: usize) -> Vec<usize> {
        (0..self.p).filter(|&s| s != m).collect()
    }

    /// Restrict to the first `n` units.
    pub fn first_units(&self, n: usize) -> Self {
        let n = n.min(self.n);
        let mut values = Vec::with_capacity(self.p * self.p * n);
        for rs in 0..self.p * self.p {
            values.extend_from_slice(&self.values[rs * self.n..rs * self.n + n]);
        }
        Self {
            p: self.p,
            n,
            values,
            fold_of: self.fold_of.as_ref().map(|f| f[..n].to_vec()),
        }
    }

    /// Dump as `r,s,i,score` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let mut out = String::from("r,s,i,score\n");
        for r in 0..self.p {
            for s in 0..self.p {
                for i in 0..self.n {
                    out.push_str(&format!("{r},{s},{i},{}\n", self.get(r, s, i)));
                }
            }
        }
        w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Cross-fitted tensor: units in fold A are scored with the model trained on B
/// and vice versa.
pub fn build_score_tensor(
    dataset: &Dataset,
    candidates: &CandidateSet,
    split: &SplitPlan,
    models: &CrossFitModels,
) -> Result<ScoreTensor> {
    let preds = models.predictions(dataset, split)?;
    ScoreTensor::from_predictions(dataset, candidates, &preds, Some(split.major().to_vec()))
}

/// `delta[k] = mean_i t(Z_i; m, others[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaVector {
    pub reference: usize,
    pub others: Vec<usize>,
    pub delta: Vec<f64>,
}

/// Covariance of the mean score vector for reference `m`: the per-unit sample
/// covariance divided by `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub reference: usize,
    pub others: Vec<usize>,
    pub sigma: DMatrix<f64>,
}

fn check_reference(tensor: &ScoreTensor, m: usize) -> Result<()> {
    if tensor.n < 2 {
        return Err(Error::invalid(format!("need n >= 2 units, got {}", tensor.n)));
    }
    if m >= tensor.p {
        return Err(Error::invalid(format!("candidate {m} out of range (p = {})", tensor.p)));
    }
    Ok(())
}

pub fn delta_hat(tensor: &ScoreTensor, m: usize) -> Result<DeltaVector> {
    check_reference(tensor, m)?;
    let others = tensor.others(m);
    let delta = others.iter().map(|&s| tensor.pair_mean(m, s)).collect();
    Ok(DeltaVector {
        reference: m,
        others,
        delta,
    })
}

pub fn cov_hat(tensor: &ScoreTensor, m: usize) -> Result<CovarianceEstimate> {
    check_reference(tensor, m)?;
    let others = tensor.others(m);
    let k = others.len();
    let n = tensor.n;
    let centered: Vec<Vec<f64>> = others
        .iter()
        .map(|&s| {
            let xs = tensor.pair(m, s);
            let mu = xs.iter().sum::<f64>() / n as f64;
            xs.iter().map(|x| x - mu).collect()
        })
        .collect();
    let denom = (n - 1) as f64 * n as f64;
    let mut sigma = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let c = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum::<f64>() / denom;
            sigma[(a, b)] = c;
            sigma[(b, a)] = c;
        }
    }
    Ok(CovarianceEstimate {
        reference: m,
        others,
        sigma,
    })
}
