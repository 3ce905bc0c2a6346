//! Cross-fitted, exponentially weighted winner test.
//!
//! For candidate `r`, each unit's competitor vector `t(Z_i; r, .)` is collapsed
//! to `Q_{i,r} = sum_j w_j t(Z_i; r, j)`, where the weights are a softmax of the
//! mean competitor vector over the *other* inner folds of the unit's block.
//! `S_r = sum_i Q_{i,r}` is standardized by `sqrt(n) * sd(Q)` and compared with
//! `z_{1-alpha}`.

use serde::{Deserialize, Serialize};

use super::split::MajorFold;
use super::weights::exp_weights;
use crate::error::{Error, Result};
use crate::scores::ScoreTensor;

/// Units grouped into blocks (major folds), each dealt into inner folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldLayout {
    /// `(label, cells)` per block; `cells[v]` lists the units of inner fold `v`.
    pub blocks: Vec<(Option<MajorFold>, Vec<Vec<usize>>)>,
}

impl FoldLayout {
    pub fn two_layer(plan: &super::SplitPlan) -> Self {
        let blocks = [MajorFold::A, MajorFold::B]
            .into_iter()
            .map(|m| (Some(m), (0..plan.folds()).map(|v| plan.cell(m, v)).collect()))
            .collect();
        Self { blocks }
    }

    pub fn single_layer(inner: &[usize], folds: usize) -> Self {
        let mut cells = vec![Vec::new(); folds];
        for (i, &v) in inner.iter().enumerate() {
            cells[v].push(i);
        }
        Self {
            blocks: vec![(None, cells)],
        }
    }

    fn unit_count(&self) -> usize {
        self.blocks.iter().flat_map(|(_, c)| c).map(Vec::len).sum()
    }
}

/// Weights used for the units of one inner fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldWeights {
    pub candidate: usize,
    pub block: Option<MajorFold>,
    pub fold: usize,
    pub others: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStatistic {
    pub candidate: usize,
    /// `S_r = sum_i Q_{i,r}`
    pub sum: f64,
    /// Sample standard deviation of the `Q_{i,r}`.
    pub sigma: f64,
    /// `S_r / (sqrt(n) * sigma)`
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedStatistics {
    pub lambda: f64,
    pub candidates: Vec<CandidateStatistic>,
    /// `q[r][i] = Q_{i,r}`
    pub q: Vec<Vec<f64>>,
    pub weights: Vec<FoldWeights>,
}

/// Weighted statistics for every candidate over a fold layout.
pub fn exp_weighted_statistics(tensor: &ScoreTensor, layout: &FoldLayout, lambda: f64) -> Result<ProposedStatistics> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let n = tensor.n();
    if layout.unit_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: layout.unit_count(),
        });
    }
    for (_, cells) in &layout.blocks {
        if cells.len() < 2 || cells.iter().any(|c| c.len() < super::split::MIN_CELL) {
            return Err(Error::invalid("every block needs >= 2 inner folds with >= 2 units each"));
        }
    }
    let p = tensor.p();
    let mut candidates = Vec::with_capacity(p);
    let mut q_all = Vec::with_capacity(p);
    let mut weights_all = Vec::new();
    for r in 0..p {
        let others = tensor.others(r);
        let rows: Vec<&[f64]> = others.iter().map(|&s| tensor.pair(r, s)).collect();
        let mut q = vec![0.0; n];
        for (block, cells) in &layout.blocks {
            // per-cell sums of the competitor vectors
            let sums: Vec<Vec<f64>> = cells
                .iter()
                .map(|cell| rows.iter().map(|row| cell.iter().map(|&i| row[i]).sum()).collect())
                .collect();
            for (v, cell) in cells.iter().enumerate() {
                let count: usize = cells.iter().enumerate().filter(|&(u, _)| u != v).map(|(_, c)| c.len()).sum();
                let held_out: Vec<f64> = (0..others.len())
                    .map(|k| {
                        let total: f64 = sums.iter().enumerate().filter(|&(u, _)| u != v).map(|(_, s)| s[k]).sum();
                        total / count as f64
                    })
                    .collect();
                let w = exp_weights(&held_out, lambda);
                for &i in cell {
                    q[i] = rows.iter().zip(&w).map(|(row, wk)| wk * row[i]).sum();
                }
                weights_all.push(FoldWeights {
                    candidate: r,
                    block: *block,
                    fold: v,
                    others: others.clone(),
                    weights: w,
                });
            }
        }
        let sum: f64 = q.iter().sum();
        let sigma = crate::stats::sample_variance(&q).sqrt();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::DegenerateVariance(format!(
                "weighted scores of candidate {r} have zero variance"
            )));
        }
        candidates.push(CandidateStatistic {
            candidate: r,
            sum,
            sigma,
            z: sum / ((n as f64).sqrt() * sigma),
        });
        q_all.push(q);
    }
    Ok(ProposedStatistics {
        lambda,
        candidates,
        q: q_all,
        weights: weights_all,
    })
}
