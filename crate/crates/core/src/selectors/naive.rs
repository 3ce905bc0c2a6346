//! Max-statistic selectors built on `delta_hat` / `cov_hat`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scores::{cov_hat, delta_hat, ScoreTensor};

const PSD_TOL: f64 = 1e-8;

/// Studentized pairwise statistics `S_{m,s} = delta_s / sqrt(Sigma_ss)` and the
/// correlation matrix of `delta_hat` for reference `m`.
pub(crate) fn studentized(tensor: &ScoreTensor, m: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let delta = delta_hat(tensor, m)?;
    let cov = cov_hat(tensor, m)?;
    let sd: Vec<f64> = cov.sigma.diagonal().iter().map(|v| v.sqrt()).collect();
    if let Some(k) = sd.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::DegenerateVariance(format!(
            "relative error of candidate {m} against {} has zero variance",
            cov.others[k]
        )));
    }
    let stats = delta.delta.iter().zip(&sd).map(|(d, s)| d / s).collect();
    let k = sd.len();
    let corr = DMatrix::from_fn(k, k, |a, b| cov.sigma[(a, b)] / (sd[a] * sd[b]));
    Ok((stats, corr))
}

/// Symmetric square root factor `L` with `L L^T = corr`, after symmetrizing
/// and clamping eigenvalues in `[-1e-8, 0)` to zero.
fn psd_factor(corr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (corr + corr.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOL || !min.is_finite() {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Empirical `(1 - alpha)`-quantile of `max_s G_s / sqrt(Sigma_ss)` with
/// `G ~ N(0, sigma)`, from `draws` parametric bootstrap samples.
pub fn max_gaussian_quantile(sigma: &DMatrix<f64>, alpha: f64, draws: usize, rng: &mut Rng) -> Result<f64> {
    let k = sigma.nrows();
    if k == 0 || sigma.ncols() != k {
        return Err(Error::invalid("covariance must be square and nonempty"));
    }
    let sd: Vec<f64> = sigma.diagonal().iter().map(|v| v.sqrt()).collect();
    if sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::DegenerateVariance("zero diagonal in bootstrap covariance".into()));
    }
    let corr = DMatrix::from_fn(k, k, |a, b| sigma[(a, b)] / (sd[a] * sd[b]));
    max_quantile_from_correlation(&corr, alpha, draws, rng)
}

pub(crate) fn max_quantile_from_correlation(corr: &DMatrix<f64>, alpha: f64, draws: usize, rng: &mut Rng) -> Result<f64> {
    if draws == 0 {
        return Err(Error::invalid("need at least one bootstrap draw"));
    }
    let factor = psd_factor(corr)?;
    let k = corr.nrows();
    let mut z = DVector::<f64>::zeros(k);
    let mut maxima: Vec<f64> = (0..draws)
        .map(|_| {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            (&factor * &z).max()
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    Ok(crate::stats::sorted_quantile(&maxima, 1.0 - alpha))
}
