use cate_select::datagen::{toy_model, ToyDims, ToyModel};
use cate_select::nuisance::{fit, stability_probe, stability_probe_mixed, NuisanceConfig};
use cate_select::rng;
use cate_select::stats::ols_slope;

fn model() -> ToyModel {
    toy_model(ToyDims::default(), 5).unwrap()
}

/// Root-mean-square error of the fitted treated-arm regression against the
/// linear part of the true mean, averaged over `reps` datasets.
fn mu1_error(model: &ToyModel, n: usize, reps: u64) -> f64 {
    let cfg = NuisanceConfig::default();
    let total: f64 = (0..reps)
        .map(|k| {
            let (ds, _) = model.sample(n, 1000 + k).unwrap();
            let all: Vec<usize> = (0..n).collect();
            let fitted = fit(&ds, &all, &cfg).unwrap();
            let mut rng = rng::stream(77, &[k]);
            let grid: Vec<Vec<f64>> = (0..2000).map(|_| model.sample_unit(&mut rng).0.x).collect();
            let mse = grid
                .iter()
                .map(|x| (fitted.predict(x).unwrap().mu1 - model.linear_means(x).1).powi(2))
                .sum::<f64>()
                / grid.len() as f64;
            mse.sqrt()
        })
        .sum();
    total / reps as f64
}

#[test]
fn outcome_error_halves_when_n_quadruples() {
    let m = model();
    let ratio = mu1_error(&m, 1250, 20) / mu1_error(&m, 5000, 20);
    assert!((1.0..=3.0).contains(&ratio), "ratio {ratio}");
}

fn first_order(m: &ToyModel, n: usize, reps: u64) -> f64 {
    let cfg = NuisanceConfig::default();
    (0..reps)
        .map(|k| {
            let (ds, _) = m.sample(n, 50 + k).unwrap();
            let all: Vec<usize> = (0..n).collect();
            let mut rng = rng::stream(9, &[n as u64, k]);
            let replacement = m.sample_unit(&mut rng).0;
            stability_probe(&ds, &all, &cfg, (k as usize * 7) % n, replacement).unwrap()
        })
        .sum::<f64>()
        / reps as f64
}

fn second_order(m: &ToyModel, n: usize, reps: u64) -> f64 {
    let cfg = NuisanceConfig::default();
    let ms: f64 = (0..reps)
        .map(|k| {
            let (ds, _) = m.sample(n, 90 + k).unwrap();
            let all: Vec<usize> = (0..n).collect();
            let mut rng = rng::stream(13, &[n as u64, k]);
            let a = m.sample_unit(&mut rng).0;
            let b = m.sample_unit(&mut rng).0;
            stability_probe_mixed(&ds, &all, &cfg, (1, a), (n - 2, b)).unwrap().powi(2)
        })
        .sum();
    ms / reps as f64
}

#[test]
fn replace_one_discrepancy_is_order_one_over_n() {
    let m = model();
    let ratio = first_order(&m, 500, 50) / first_order(&m, 1000, 50);
    assert!((0.8..=3.2).contains(&ratio), "ratio {ratio}");
}

#[test]
fn mixed_difference_decays_faster() {
    let m = model();
    let grid = [250usize, 500, 1000, 2000];
    let x: Vec<f64> = grid.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = grid.iter().map(|&n| second_order(&m, n, 30).ln()).collect();
    let slope = ols_slope(&x, &y);
    assert!(slope <= -1.5, "slope {slope}");
}
