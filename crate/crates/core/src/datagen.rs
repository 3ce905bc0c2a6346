//! Data model, the linear toy data-generating process, noisy-oracle candidates,
//! and CSV ingestion.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::NuisancePrediction;
use crate::rng::{self, tag, Rng};

/// One unit `(x, t, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub t: u8,
    pub y: f64,
}

impl Observation {
    pub fn treated(&self) -> bool {
        self.t == 1
    }
}

/// A nonempty collection of observations sharing one covariate dimension, with
/// both treatment arms present.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    d: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::invalid("dataset is empty"))?;
        let d = first.x.len();
        for (i, o) in observations.iter().enumerate() {
            if o.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: o.x.len(),
                });
            }
            if o.t > 1 {
                return Err(Error::invalid(format!("unit {i}: treatment {} not in {{0,1}}", o.t)));
            }
            if !o.y.is_finite() || o.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("unit {i}: non-finite value")));
            }
        }
        let treated = observations.iter().filter(|o| o.treated()).count();
        if treated == 0 {
            return Err(Error::MissingArm { arm: 1 });
        }
        if treated == observations.len() {
            return Err(Error::MissingArm { arm: 0 });
        }
        Ok(Self { observations, d })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    /// The first `n` units. Units are exchangeable, so this is a random subsample.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(self.observations[..n.min(self.len())].to_vec())
    }

    /// Copy of the dataset with unit `i` swapped for `replacement`.
    pub fn with_replaced(&self, i: usize, replacement: Observation) -> Result<Self> {
        if replacement.x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found: replacement.x.len(),
            });
        }
        let mut observations = self.observations.clone();
        observations[i] = replacement;
        Self::new(observations)
    }
}

/// Per-unit ground truth of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyGroundTruth {
    pub tau: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub e: Vec<f64>,
}

impl ToyGroundTruth {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// True outcome means and propensities as per-unit nuisance values.
    pub fn oracle_nuisance(&self) -> Vec<NuisancePrediction> {
        (0..self.len())
            .map(|i| NuisancePrediction {
                mu0: self.mu0[i],
                mu1: self.mu1[i],
                e: self.e[i],
            })
            .collect()
    }

    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            tau: self.tau[..n].to_vec(),
            mu0: self.mu0[..n].to_vec(),
            mu1: self.mu1[..n].to_vec(),
            e: self.e[..n].to_vec(),
        }
    }

    fn push(&mut self, u: UnitTruth) {
        self.tau.push(u.tau);
        self.mu0.push(u.mu0);
        self.mu1.push(u.mu1);
        self.e.push(u.e);
    }
}

/// Truth for a single simulated unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitTruth {
    pub tau: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub e: f64,
}

/// Block sizes of the latent covariates: instruments (treatment only),
/// confounders (both), adjusters (outcome only), distractors (neither).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    pub instrument: usize,
    pub confounder: usize,
    pub adjustment: usize,
    pub distractor: usize,
}

impl ToyDims {
    pub const fn new(instrument: usize, confounder: usize, adjustment: usize, distractor: usize) -> Self {
        Self {
            instrument,
            confounder,
            adjustment,
            distractor,
        }
    }

    pub fn total(&self) -> usize {
        self.instrument + self.confounder + self.adjustment + self.distractor
    }

    fn validate(&self) -> Result<()> {
        if self.instrument == 0 || self.confounder == 0 || self.adjustment == 0 || self.distractor == 0 {
            return Err(Error::invalid("all covariate blocks must have dimension >= 1"));
        }
        Ok(())
    }
}

impl Default for ToyDims {
    fn default() -> Self {
        Self::new(2, 2, 2, 2)
    }
}

pub const PROPENSITY_CLIP: (f64, f64) = (0.1, 0.9);
const OUTCOME_NOISE_SD: f64 = 0.5;
const MAX_DRAW_ATTEMPTS: usize = 16;

/// The linear toy model with its weights fixed.
///
/// Covariates are laid out as `[I | C | A | D]`. Treatment follows
/// `pi = clip(sigmoid((I, C) . w_ic + eps), 0.1, 0.9)` with `eps ~ N(0, 1)`, and
/// the potential outcomes are `mu_t = (C, A) . w_t / (m_C + m_A) + eta_t` with
/// `eta_t ~ N(0, 0.5^2)`; the observed outcome is `mu_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub dims: ToyDims,
    pub w_ic: Vec<f64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
}

impl ToyModel {
    /// Weights iid `Uniform(-1, 1)`.
    pub fn draw(dims: ToyDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let u = Uniform::new(-1.0, 1.0).expect("valid bounds");
        let mut sample = |k: usize| -> Vec<f64> { (0..k).map(|_| u.sample(rng)).collect() };
        let w_ic = sample(dims.instrument + dims.confounder);
        let w0 = sample(dims.confounder + dims.adjustment);
        let w1 = sample(dims.confounder + dims.adjustment);
        Ok(Self { dims, w_ic, w0, w1 })
    }

    /// Mean outcome functions without the unit-level noise.
    pub fn linear_means(&self, x: &[f64]) -> (f64, f64) {
        let start = self.dims.instrument;
        let ca = &x[start..start + self.dims.confounder + self.dims.adjustment];
        let scale = ca.len() as f64;
        let dot = |w: &[f64]| ca.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / scale;
        (dot(&self.w0), dot(&self.w1))
    }

    pub fn sample_unit(&self, rng: &mut Rng) -> (Observation, UnitTruth) {
        let x: Vec<f64> = (0..self.dims.total()).map(|_| StandardNormal.sample(rng)).collect();
        let ic = &x[..self.dims.instrument + self.dims.confounder];
        let eps: f64 = StandardNormal.sample(rng);
        let logit = ic.iter().zip(&self.w_ic).map(|(a, b)| a * b).sum::<f64>() + eps;
        let e = sigmoid(logit).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
        let noise = Normal::new(0.0, OUTCOME_NOISE_SD).expect("valid sd");
        let (lin0, lin1) = self.linear_means(&x);
        let mu0 = lin0 + noise.sample(rng);
        let mu1 = lin1 + noise.sample(rng);
        let t = Bernoulli::new(e).expect("e in [0.1, 0.9]").sample(rng) as u8;
        let y = if t == 1 { mu1 } else { mu0 };
        (
            Observation { x, t, y },
            UnitTruth {
                tau: mu1 - mu0,
                mu0,
                mu1,
                e,
            },
        )
    }

    /// Draw `n` iid units; fails if either arm is empty after several attempts.
    pub fn sample(&self, n: usize, seed: u64) -> Result<(Dataset, ToyGroundTruth)> {
        for attempt in 0..MAX_DRAW_ATTEMPTS {
            let mut rng = rng::stream(seed, &[tag::DATA, 1, attempt as u64]);
            let mut obs = Vec::with_capacity(n);
            let mut truth = ToyGroundTruth {
                tau: Vec::with_capacity(n),
                mu0: Vec::with_capacity(n),
                mu1: Vec::with_capacity(n),
                e: Vec::with_capacity(n),
            };
            for _ in 0..n {
                let (o, u) = self.sample_unit(&mut rng);
                obs.push(o);
                truth.push(u);
            }
            match Dataset::new(obs) {
                Ok(ds) => return Ok((ds, truth)),
                Err(Error::MissingArm { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::DegenerateDataset {
            attempts: MAX_DRAW_ATTEMPTS,
        })
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let ez = z.exp();
        ez / (1.0 + ez)
    }
}

/// Generate a toy dataset of `n` units. Weights and units both derive from `seed`.
pub fn generate_toy(n: usize, dims: ToyDims, seed: u64) -> Result<(Dataset, ToyGroundTruth)> {
    if n < 20 {
        return Err(Error::invalid(format!("toy dataset needs n >= 20, got {n}")));
    }
    let model = toy_model(dims, seed)?;
    model.sample(n, seed)
}

/// The weights [`generate_toy`] uses for `seed`.
pub fn toy_model(dims: ToyDims, seed: u64) -> Result<ToyModel> {
    ToyModel::draw(dims, &mut rng::stream(seed, &[tag::DATA, 0]))
}

/// Gaussian perturbation `N(mean, sd^2)` added to the true effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub sd: f64,
}

impl NoiseSpec {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    /// Population MSE of `tau + noise` against `tau`.
    pub fn mse(&self) -> f64 {
        self.mean * self.mean + self.sd * self.sd
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.sd * z
    }

    fn validate(&self) -> Result<()> {
        if !(self.sd >= 0.0) || !self.mean.is_finite() || !self.sd.is_finite() {
            return Err(Error::invalid(format!("bad noise spec {self:?}")));
        }
        Ok(())
    }
}

/// Index of the unique spec with the smallest MSE, if unique.
pub fn unique_winner(specs: &[NoiseSpec]) -> Option<usize> {
    let best = specs.iter().map(NoiseSpec::mse).fold(f64::INFINITY, f64::min);
    let winners: Vec<usize> = (0..specs.len()).filter(|&r| specs[r].mse() == best).collect();
    (winners.len() == 1).then(|| winners[0])
}

/// Three near-ties (winner first) followed by four clearly inferior candidates.
pub fn competitive_and_inferior_specs() -> Vec<NoiseSpec> {
    let mut specs = vec![NoiseSpec::new(0.0, 0.1)];
    specs.extend([NoiseSpec::new(0.03, 0.1); 2]);
    specs.extend([NoiseSpec::new(0.3, 0.1); 4]);
    specs
}

/// One winner and four near-ties.
pub fn near_tie_specs() -> Vec<NoiseSpec> {
    let mut specs = vec![NoiseSpec::new(0.0, 0.1)];
    specs.extend([NoiseSpec::new(0.03, 0.1); 4]);
    specs
}

/// `p` candidate CATE predictors evaluated on the `n` units: `predictions[r][i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    predictions: Vec<Vec<f64>>,
}

impl CandidateSet {
    pub fn new(predictions: Vec<Vec<f64>>) -> Result<Self> {
        let n = predictions
            .first()
            .ok_or_else(|| Error::invalid("candidate set is empty"))?
            .len();
        for (r, row) in predictions.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("candidate {r} has non-finite predictions")));
            }
        }
        Ok(Self { predictions })
    }

    pub fn p(&self) -> usize {
        self.predictions.len()
    }

    pub fn n(&self) -> usize {
        self.predictions[0].len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.predictions[r]
    }

    pub fn get(&self, r: usize, i: usize) -> f64 {
        self.predictions[r][i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.predictions
    }

    /// The first `p` candidates.
    pub fn first_candidates(&self, p: usize) -> Result<Self> {
        Self::new(self.predictions[..p.min(self.p())].to_vec())
    }

    /// Predictions for the first `n` units only.
    pub fn first_units(&self, n: usize) -> Result<Self> {
        Self::new(self.predictions.iter().map(|r| r[..n.min(r.len())].to_vec()).collect())
    }

    /// Copy with unit `i` predictions replaced.
    pub fn with_unit_replaced(&self, i: usize, values: &[f64]) -> Self {
        let mut predictions = self.predictions.clone();
        for (row, &v) in predictions.iter_mut().zip(values) {
            row[i] = v;
        }
        Self { predictions }
    }
}

/// Noisy-oracle candidates: row `r` is `tau + N(mean_r, sd_r^2)` noise, iid
/// across units. Each row draws from its own stream, so a prefix of `specs`
/// yields a prefix of the rows.
pub fn make_candidates(truth: &ToyGroundTruth, specs: &[NoiseSpec], seed: u64) -> Result<CandidateSet> {
    if specs.is_empty() {
        return Err(Error::invalid("need at least one noise spec"));
    }
    let rows = specs
        .iter()
        .enumerate()
        .map(|(r, spec)| {
            spec.validate()?;
            let mut rng = rng::stream(seed, &[tag::CANDIDATES, r as u64]);
            Ok(truth.tau.iter().map(|tau| tau + spec.sample(&mut rng)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    CandidateSet::new(rows)
}

/// Candidate values for one fresh unit.
pub fn sample_candidate_values(tau: f64, specs: &[NoiseSpec], rng: &mut Rng) -> Vec<f64> {
    specs.iter().map(|s| tau + s.sample(rng)).collect()
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn read_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    parse_error(path, line, err.to_string())
}

/// Read a dataset CSV with header `x_0,...,x_{d-1},t,y`.
pub fn ingest_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| read_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    let d = cols.len().saturating_sub(2);
    let expected: Vec<String> = (0..d)
        .map(|k| format!("x_{k}"))
        .chain(["t".to_string(), "y".to_string()])
        .collect();
    if cols.len() < 3 || cols != expected {
        return Err(parse_error(
            path,
            1,
            format!("expected header {}, found {}", expected.join(","), cols.join(",")),
        ));
    }
    let mut observations = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| read_error(path, e))?;
        let line = record_line(&rec);
        let num = |k: usize| -> Result<f64> {
            let field = rec[k].trim();
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(path, line, format!("column {}: cannot parse {field:?}", cols[k])))
        };
        let x = (0..d).map(num).collect::<Result<Vec<f64>>>()?;
        let t_raw = num(d)?;
        let t = if t_raw == 0.0 {
            0
        } else if t_raw == 1.0 {
            1
        } else {
            return Err(parse_error(path, line, format!("treatment must be 0 or 1, found {t_raw}")));
        };
        let y = num(d + 1)?;
        observations.push(Observation { x, t, y });
    }
    Dataset::new(observations)
}

/// Read a predictions CSV with header `tau_0,...,tau_{p-1}` and exactly `n` rows.
pub fn ingest_predictions(path: impl AsRef<Path>, n: usize) -> Result<CandidateSet> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let headers = reader.headers().map_err(|e| read_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    let expected: Vec<String> = (0..cols.len()).map(|k| format!("tau_{k}")).collect();
    if cols.is_empty() || cols != expected {
        return Err(parse_error(
            path,
            1,
            format!("expected header tau_0,...,tau_{{p-1}}, found {}", cols.join(",")),
        ));
    }
    let p = cols.len();
    let mut rows = vec![Vec::with_capacity(n); p];
    for rec in reader.records() {
        let rec = rec.map_err(|e| read_error(path, e))?;
        let line = record_line(&rec);
        for (r, row) in rows.iter_mut().enumerate() {
            let field = rec[r].trim();
            let v = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_error(path, line, format!("column {}: cannot parse {field:?}", cols[r])))?;
            row.push(v);
        }
    }
    if rows[0].len() != n {
        return Err(Error::invalid(format!(
            "{}: expected {n} prediction rows, found {}",
            path.display(),
            rows[0].len()
        )));
    }
    CandidateSet::new(rows)
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let header: Vec<String> = (0..dataset.dim())
        .map(|k| format!("x_{k}"))
        .chain(["t".into(), "y".into()])
        .collect();
    let mut out = header.join(",");
    out.push('\n');
    for o in dataset.observations() {
        let fields: Vec<String> = o.x.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push_str(&format!(",{},{}\n", o.t, o.y));
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_predictions(candidates: &CandidateSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let header: Vec<String> = (0..candidates.p()).map(|r| format!("tau_{r}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..candidates.n() {
        let fields: Vec<String> = (0..candidates.p()).map(|r| candidates.get(r, i).to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
