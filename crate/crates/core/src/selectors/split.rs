use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Outer fold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MajorFold {
    A,
    B,
}

impl MajorFold {
    pub fn opposite(self) -> Self {
        match self {
            MajorFold::A => MajorFold::B,
            MajorFold::B => MajorFold::A,
        }
    }
}

/// Smallest number of units allowed in one inner fold.
pub const MIN_CELL: usize = 2;

/// Two-layer partition: every unit gets a major fold and an inner fold
/// `0..folds` within it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    major: Vec<MajorFold>,
    inner: Vec<usize>,
    folds: usize,
}

impl SplitPlan {
    pub fn new(major: Vec<MajorFold>, inner: Vec<usize>, folds: usize) -> Result<Self> {
        if major.len() != inner.len() {
            return Err(Error::DimensionMismatch {
                expected: major.len(),
                found: inner.len(),
            });
        }
        if let Some(&v) = inner.iter().find(|&&v| v >= folds) {
            return Err(Error::invalid(format!("inner fold {v} out of range 0..{folds}")));
        }
        let plan = Self { major, inner, folds };
        for m in [MajorFold::A, MajorFold::B] {
            for v in 0..folds {
                let size = plan.cell(m, v).len();
                if size < MIN_CELL {
                    return Err(Error::invalid(format!(
                        "inner fold {v} of major fold {m:?} has {size} units, need at least {MIN_CELL}"
                    )));
                }
            }
        }
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.major.len()
    }

    pub fn is_empty(&self) -> bool {
        self.major.is_empty()
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn major(&self) -> &[MajorFold] {
        &self.major
    }

    pub fn inner(&self) -> &[usize] {
        &self.inner
    }

    pub fn major_indices(&self, fold: MajorFold) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.major[i] == fold).collect()
    }

    pub fn cell(&self, fold: MajorFold, v: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.major[i] == fold && self.inner[i] == v)
            .collect()
    }
}

fn check_folds(n: usize, folds: usize, blocks: usize) -> Result<()> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 inner folds, got {folds}")));
    }
    let need = blocks * folds * MIN_CELL;
    if n < need {
        return Err(Error::invalid(format!(
            "n = {n} too small for {blocks} x {folds} folds (need >= {need})"
        )));
    }
    Ok(())
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    idx
}

/// Random balanced two-layer split: major folds of sizes `floor(n/2)` and
/// `ceil(n/2)`, each dealt round-robin into `folds` inner folds.
pub fn two_way_split(n: usize, folds: usize, seed: u64) -> Result<SplitPlan> {
    check_folds(n, folds, 2)?;
    let perm = permutation(n, seed);
    let half = n / 2;
    let mut major = vec![MajorFold::A; n];
    let mut inner = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        let (fold, k) = if pos < half {
            (MajorFold::A, pos)
        } else {
            (MajorFold::B, pos - half)
        };
        major[i] = fold;
        inner[i] = k % folds;
    }
    SplitPlan::new(major, inner, folds)
}

/// Random balanced single-layer fold labels over all `n` units.
pub fn single_layer_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    check_folds(n, folds, 1)?;
    let mut inner = vec![0; n];
    for (pos, &i) in permutation(n, seed).iter().enumerate() {
        inner[i] = pos % folds;
    }
    Ok(inner)
}
