//! Outcome regressions and propensity model fitted on a training index set.
//!
//! `mu_0` and `mu_1` are ridge regressions on the control and treated units;
//! the propensity is an L2-penalized logistic regression solved by Newton's
//! method. Intercepts are never penalized. Both are smooth, strongly convex
//! empirical risk minimizers, so replacing one training unit moves predictions
//! by `O(1/n)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::{sigmoid, Dataset, Observation};
use crate::error::{Error, Result};
use crate::selectors::{MajorFold, SplitPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    /// Ridge penalty for the outcome regressions.
    pub ridge_lambda: f64,
    /// L2 penalty for the propensity model.
    pub logistic_l2: f64,
    /// When set, both penalties are multiplied by the number of units in the fit.
    pub penalty_per_unit: bool,
    /// Propensities are clipped into `[clip_eta, 1 - clip_eta]`.
    pub clip_eta: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            ridge_lambda: 1e-3,
            logistic_l2: 1e-3,
            penalty_per_unit: true,
            clip_eta: 0.05,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eta > 0.0 && self.clip_eta < 0.5) {
            return Err(Error::invalid(format!("clip_eta must lie in (0, 0.5), got {}", self.clip_eta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(self.ridge_lambda >= 0.0 && self.logistic_l2 >= 0.0) {
            return Err(Error::invalid("penalties must be nonnegative"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        Ok(())
    }

    fn effective(&self, base: f64, units: usize) -> f64 {
        if self.penalty_per_unit {
            base * units as f64
        } else {
            base
        }
    }
}

/// `intercept + coef . x`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearFit {
    pub fn zeros(d: usize) -> Self {
        Self {
            intercept: 0.0,
            coef: vec![0.0; d],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    fn from_vector(beta: &DVector<f64>) -> Self {
        Self {
            intercept: beta[0],
            coef: beta.iter().skip(1).copied().collect(),
        }
    }
}

/// Nuisance values at one unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisancePrediction {
    pub mu0: f64,
    pub mu1: f64,
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceModel {
    pub mu0: LinearFit,
    pub mu1: LinearFit,
    pub propensity: LinearFit,
    pub clip_eta: f64,
}

impl NuisanceModel {
    pub fn from_parts(mu0: LinearFit, mu1: LinearFit, propensity: LinearFit, clip_eta: f64) -> Result<Self> {
        let d = mu0.coef.len();
        for f in [&mu1, &propensity] {
            if f.coef.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: f.coef.len(),
                });
            }
        }
        if !(clip_eta > 0.0 && clip_eta < 0.5) {
            return Err(Error::invalid("clip_eta must lie in (0, 0.5)"));
        }
        Ok(Self {
            mu0,
            mu1,
            propensity,
            clip_eta,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu0.coef.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<NuisancePrediction> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> NuisancePrediction {
        let e = sigmoid(self.propensity.eval(x)).clamp(self.clip_eta, 1.0 - self.clip_eta);
        NuisancePrediction {
            mu0: self.mu0.eval(x),
            mu1: self.mu1.eval(x),
            e,
        }
    }

    /// Predictions at every unit of `dataset`.
    pub fn predict_all(&self, dataset: &Dataset) -> Result<Vec<NuisancePrediction>> {
        if dataset.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dataset.dim(),
            });
        }
        Ok(dataset.observations().iter().map(|o| self.predict_unchecked(&o.x)).collect())
    }
}

fn design(dataset: &Dataset, rows: &[usize]) -> DMatrix<f64> {
    let d = dataset.dim();
    DMatrix::from_fn(rows.len(), d + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            dataset.get(rows[i]).x[j - 1]
        }
    })
}

/// Penalty on every coordinate except the intercept.
fn add_ridge(gram: &mut DMatrix<f64>, lambda: f64) {
    for j in 1..gram.nrows() {
        gram[(j, j)] += lambda;
    }
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what}: matrix not positive definite")))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // squared ratio of Cholesky pivots bounds the reciprocal condition number
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-14 {
        return Err(Error::Singular(format!("{what}: condition estimate {:.3e}", (hi / lo).powi(2))));
    }
    let x = chol.solve(b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("{what}: non-finite solution")));
    }
    Ok(x)
}

fn fit_ridge(dataset: &Dataset, rows: &[usize], lambda: f64) -> Result<LinearFit> {
    let x = design(dataset, rows);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| dataset.get(i).y));
    let mut gram = x.tr_mul(&x);
    add_ridge(&mut gram, lambda);
    let rhs = x.tr_mul(&y);
    Ok(LinearFit::from_vector(&solve_spd(gram, &rhs, "ridge")?))
}

fn fit_logistic(dataset: &Dataset, rows: &[usize], lambda: f64, max_iter: usize, tol: f64) -> Result<LinearFit> {
    let x = design(dataset, rows);
    let t = DVector::from_iterator(rows.len(), rows.iter().map(|&i| f64::from(dataset.get(i).t)));
    let k = x.ncols();
    let mut beta = DVector::<f64>::zeros(k);
    for _ in 0..max_iter {
        let eta = &x * &beta;
        let p = eta.map(sigmoid);
        let w = p.map(|v| (v * (1.0 - v)).max(1e-12));
        let mut grad = x.tr_mul(&(&p - &t));
        let mut hess = x.tr_mul(&DMatrix::from_fn(x.nrows(), k, |i, j| x[(i, j)] * w[i]));
        for j in 1..k {
            grad[j] += lambda * beta[j];
        }
        add_ridge(&mut hess, lambda);
        let step = solve_spd(hess, &grad, "logistic Newton step")?;
        beta -= &step;
        if beta.iter().any(|v| !v.is_finite()) {
            break;
        }
        if step.amax() < tol {
            return Ok(LinearFit::from_vector(&beta));
        }
    }
    Err(Error::NotConverged { iterations: max_iter })
}

/// Fit all three nuisance functions on `indices`.
pub fn fit(dataset: &Dataset, indices: &[usize], config: &NuisanceConfig) -> Result<NuisanceModel> {
    config.validate()?;
    let d = dataset.dim();
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(format!("index {bad} out of range")));
    }
    let (treated, control): (Vec<usize>, Vec<usize>) = indices.iter().partition(|&&i| dataset.get(i).treated());
    for (arm, rows) in [(0u8, &control), (1u8, &treated)] {
        if rows.len() < d + 2 {
            return Err(Error::ArmTooSmall {
                arm,
                found: rows.len(),
                required: d + 2,
            });
        }
    }
    let mu0 = fit_ridge(dataset, &control, config.effective(config.ridge_lambda, control.len()))?;
    let mu1 = fit_ridge(dataset, &treated, config.effective(config.ridge_lambda, treated.len()))?;
    let propensity = fit_logistic(
        dataset,
        indices,
        config.effective(config.logistic_l2, indices.len()),
        config.max_iter,
        config.tol,
    )?;
    Ok(NuisanceModel {
        mu0,
        mu1,
        propensity,
        clip_eta: config.clip_eta,
    })
}

/// Predict at `x`. Thin wrapper over [`NuisanceModel::predict`].
pub fn predict(model: &NuisanceModel, x: &[f64]) -> Result<NuisancePrediction> {
    model.predict(x)
}

/// The two models of a two-fold cross-fit, named by the fold they were trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFitModels {
    pub trained_on_a: NuisanceModel,
    pub trained_on_b: NuisanceModel,
}

impl CrossFitModels {
    pub fn fit(dataset: &Dataset, split: &SplitPlan, config: &NuisanceConfig) -> Result<Self> {
        if split.len() != dataset.len() {
            return Err(Error::DimensionMismatch {
                expected: dataset.len(),
                found: split.len(),
            });
        }
        Ok(Self {
            trained_on_a: fit(dataset, &split.major_indices(MajorFold::A), config)?,
            trained_on_b: fit(dataset, &split.major_indices(MajorFold::B), config)?,
        })
    }

    /// The model to use when scoring a unit that lives in `fold`.
    pub fn for_scoring(&self, fold: MajorFold) -> &NuisanceModel {
        match fold {
            MajorFold::A => &self.trained_on_b,
            MajorFold::B => &self.trained_on_a,
        }
    }

    /// Out-of-fold predictions for every unit.
    pub fn predictions(&self, dataset: &Dataset, split: &SplitPlan) -> Result<Vec<NuisancePrediction>> {
        if split.len() != dataset.len() {
            return Err(Error::DimensionMismatch {
                expected: dataset.len(),
                found: split.len(),
            });
        }
        let d = dataset.dim();
        for m in [&self.trained_on_a, &self.trained_on_b] {
            if m.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.dim(),
                });
            }
        }
        Ok(dataset
            .observations()
            .iter()
            .zip(split.major())
            .map(|(o, &fold)| self.for_scoring(fold).predict_unchecked(&o.x))
            .collect())
    }
}

fn outcome_discrepancy(a: &NuisanceModel, b: &NuisanceModel, grid: &[Observation]) -> f64 {
    let ss: f64 = grid
        .iter()
        .map(|o| {
            let d0 = a.mu0.eval(&o.x) - b.mu0.eval(&o.x);
            let d1 = a.mu1.eval(&o.x) - b.mu1.eval(&o.x);
            d0 * d0 + d1 * d1
        })
        .sum();
    (ss / grid.len() as f64).sqrt()
}

fn check_member(indices: &[usize], r: usize) -> Result<()> {
    if !indices.contains(&r) {
        return Err(Error::invalid(format!("unit {r} is not in the training indices")));
    }
    Ok(())
}

/// Replace-one stability of the outcome regressions: root-mean-square change of
/// `(mu_0, mu_1)` over the covariates of `dataset` when training unit `r` is
/// swapped for `replacement`.
pub fn stability_probe(
    dataset: &Dataset,
    indices: &[usize],
    config: &NuisanceConfig,
    r: usize,
    replacement: Observation,
) -> Result<f64> {
    check_member(indices, r)?;
    let base = fit(dataset, indices, config)?;
    let perturbed = fit(&dataset.with_replaced(r, replacement)?, indices, config)?;
    Ok(outcome_discrepancy(&base, &perturbed, dataset.observations()))
}

/// Second-order probe: RMS over the evaluation grid of
/// `m(S) - m(S^r) - m(S^s) + m(S^{r,s})` for both outcome regressions.
pub fn stability_probe_mixed(
    dataset: &Dataset,
    indices: &[usize],
    config: &NuisanceConfig,
    (r, replacement_r): (usize, Observation),
    (s, replacement_s): (usize, Observation),
) -> Result<f64> {
    check_member(indices, r)?;
    check_member(indices, s)?;
    if r == s {
        return Err(Error::invalid("mixed probe needs two distinct units"));
    }
    let with_r = dataset.with_replaced(r, replacement_r.clone())?;
    let with_s = dataset.with_replaced(s, replacement_s.clone())?;
    let with_rs = with_r.with_replaced(s, replacement_s)?;
    let m = fit(dataset, indices, config)?;
    let mr = fit(&with_r, indices, config)?;
    let ms = fit(&with_s, indices, config)?;
    let mrs = fit(&with_rs, indices, config)?;
    let grid = dataset.observations();
    let ss: f64 = grid
        .iter()
        .map(|o| {
            let mix = |f: fn(&NuisanceModel) -> &LinearFit| {
                f(&m).eval(&o.x) - f(&mr).eval(&o.x) - f(&ms).eval(&o.x) + f(&mrs).eval(&o.x)
            };
            let a = mix(|m| &m.mu0);
            let b = mix(|m| &m.mu1);
            a * a + b * b
        })
        .sum();
    Ok((ss / grid.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_toy, ToyDims};
    use approx::assert_abs_diff_eq;

    fn exact_config() -> NuisanceConfig {
        NuisanceConfig {
            ridge_lambda: 0.0,
            logistic_l2: 1.0,
            penalty_per_unit: false,
            ..NuisanceConfig::default()
        }
    }

    /// y = 1 + 2 x_0 - x_1 (control) and y = -0.5 + 3 x_0 (treated), noiseless.
    fn linear_dataset(n: usize) -> Dataset {
        let obs = (0..n)
            .map(|i| {
                let x0 = ((i * 37) % 101) as f64 / 50.0 - 1.0;
                let x1 = ((i * 53) % 97) as f64 / 48.0 - 1.0;
                let t = u8::from(i % 3 == 0);
                let y = if t == 1 { -0.5 + 3.0 * x0 } else { 1.0 + 2.0 * x0 - x1 };
                Observation { x: vec![x0, x1], t, y }
            })
            .collect();
        Dataset::new(obs).unwrap()
    }

    #[test]
    fn recovers_ols_solution_without_penalty() {
        let ds = linear_dataset(90);
        let idx: Vec<usize> = (0..90).collect();
        let m = fit(&ds, &idx, &exact_config()).unwrap();
        assert_abs_diff_eq!(m.mu0.intercept, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.mu0.coef[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.mu0.coef[1], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.mu1.intercept, -0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(m.mu1.coef[0], 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(m.mu1.coef[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn noiseless_one_dimensional_prediction() {
        // y = 2x in both arms
        let obs: Vec<Observation> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.25;
                Observation { x: vec![x], t: (i % 2) as u8, y: 2.0 * x }
            })
            .collect();
        let ds = Dataset::new(obs).unwrap();
        let idx: Vec<usize> = (0..20).collect();
        let m = fit(&ds, &idx, &exact_config()).unwrap();
        let p = m.predict(&[3.0]).unwrap();
        assert_abs_diff_eq!(p.mu0, 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p.mu1, 6.0, epsilon = 1e-10);
    }

    #[test]
    fn zero_model_prediction() {
        let fit0 = |b: f64| LinearFit { intercept: b, coef: vec![0.0; 3] };
        let m = NuisanceModel::from_parts(fit0(1.5), fit0(-2.0), fit0(0.3), 0.05).unwrap();
        let p = predict(&m, &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(p.mu0, 1.5);
        assert_eq!(p.mu1, -2.0);
        assert_abs_diff_eq!(p.e, sigmoid(0.3), epsilon = 1e-15);
        assert!(matches!(m.predict(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn propensity_is_clipped() {
        let logit_999 = (0.999f64 / 0.001).ln();
        let m = NuisanceModel::from_parts(
            LinearFit::zeros(1),
            LinearFit::zeros(1),
            LinearFit { intercept: logit_999, coef: vec![0.0] },
            0.05,
        )
        .unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap().e, 0.95);
    }

    #[test]
    fn arm_too_small() {
        let ds = linear_dataset(90);
        let idx: Vec<usize> = (0..9).collect(); // 3 treated units, need 4
        assert!(matches!(
            fit(&ds, &idx, &NuisanceConfig::default()),
            Err(Error::ArmTooSmall { arm: 1, .. })
        ));
    }

    #[test]
    fn collinear_design_without_penalty_is_singular() {
        let obs: Vec<Observation> = (0..40)
            .map(|i| {
                let x = i as f64;
                Observation { x: vec![x, 2.0 * x], t: (i % 2) as u8, y: x }
            })
            .collect();
        let ds = Dataset::new(obs).unwrap();
        let idx: Vec<usize> = (0..40).collect();
        assert!(matches!(fit(&ds, &idx, &exact_config()), Err(Error::Singular(_))));
    }

    #[test]
    fn invalid_config() {
        let ds = linear_dataset(30);
        let idx: Vec<usize> = (0..30).collect();
        let bad = NuisanceConfig { clip_eta: 0.5, ..Default::default() };
        assert!(fit(&ds, &idx, &bad).is_err());
        let bad = NuisanceConfig { tol: 0.0, ..Default::default() };
        assert!(fit(&ds, &idx, &bad).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_clipped_on_toy_data() {
        let (ds, _) = generate_toy(400, ToyDims::default(), 5).unwrap();
        let idx: Vec<usize> = (0..400).collect();
        let cfg = NuisanceConfig::default();
        let a = fit(&ds, &idx, &cfg).unwrap();
        let b = fit(&ds, &idx, &cfg).unwrap();
        assert_eq!(a, b);
        for p in a.predict_all(&ds).unwrap() {
            assert!((0.05..=0.95).contains(&p.e));
        }
    }

    #[test]
    fn identical_replacement_has_zero_discrepancy() {
        let (ds, _) = generate_toy(300, ToyDims::default(), 8).unwrap();
        let idx: Vec<usize> = (0..300).collect();
        let d = stability_probe(&ds, &idx, &NuisanceConfig::default(), 17, ds.get(17).clone()).unwrap();
        assert_eq!(d, 0.0);
        assert!(stability_probe(&ds, &idx[..100], &NuisanceConfig::default(), 250, ds.get(0).clone()).is_err());
    }
}
