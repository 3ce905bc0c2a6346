//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::Instant;

use cate_select::datagen::competitive_and_inferior_specs;
use cate_select::harness::{
    clt_diagnostic, run_experiment, stability_diagnostic, sweep, CltOptions, ExperimentConfig, ExperimentReport,
    Metric, NuisanceMode, StabilityConfig, SweepAxis,
};
use cate_select::rng;
use cate_select::scores::{cov_hat, delta_hat};
use cate_select::selectors::{cross_fitted_tensor, exp_weights, max_gaussian_quantile, split_for, SelectorKind};
use cate_select::stats::{ks_test_normal, mean, normal_quantile, sample_variance, sorted_quantile};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

const ALPHA: f64 = 0.10;
/// Sample size for the power sweeps; the competitive gap is only 0.0009.
const POWER_N: usize = 50_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn fwer_bound(reps: usize) -> f64 {
    ALPHA + 2.0 * (ALPHA * (1.0 - ALPHA) / reps as f64).sqrt()
}

fn near_ties(reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        repetitions: reps,
        ..ExperimentConfig::near_ties()
    }
}

fn fwer_of(report: &ExperimentReport, kind: SelectorKind) -> f64 {
    report.summary(kind).unwrap().fwer.mean
}

fn criterion_1_2(report: &ExperimentReport, kind: SelectorKind) -> Outcome {
    let bound = fwer_bound(200);
    let fwer = fwer_of(report, kind);
    Outcome {
        pass: fwer <= bound,
        detail: format!("{} FWER {fwer:.3} (bound {bound:.3}, 200 reps, n=2000)", kind.name()),
    }
}

fn criterion_3() -> Outcome {
    let report = run_experiment(&ExperimentConfig {
        selectors: vec![SelectorKind::Proposed, SelectorKind::Ablation],
        ..near_ties(100)
    })
    .unwrap();
    let proposed = fwer_of(&report, SelectorKind::Proposed);
    let ablation = fwer_of(&report, SelectorKind::Ablation);
    let diff = report
        .paired_difference(SelectorKind::Ablation, SelectorKind::Proposed, Metric::Fwer)
        .unwrap();
    let pass = ablation > proposed && ((diff.mean > 0.0 && diff.excludes_zero()) || (ablation > ALPHA && proposed <= ALPHA));
    Outcome {
        pass,
        detail: format!(
            "ablation FWER {ablation:.3}, proposed {proposed:.3}, diff {:.3} CI [{:.3}, {:.3}]",
            diff.mean, diff.ci_low, diff.ci_high
        ),
    }
}

struct PowerPoint {
    p: usize,
    gap: cate_select::stats::Estimate,
    naive: cate_select::stats::Estimate,
    proposed: cate_select::stats::Estimate,
}

fn power_sweep() -> Vec<PowerPoint> {
    let config = ExperimentConfig {
        n: POWER_N,
        repetitions: 200,
        selectors: vec![SelectorKind::Naive, SelectorKind::Proposed],
        ..ExperimentConfig::competitive_and_inferior()
    };
    sweep(&config, SweepAxis::CandidateCount, &[3.0, 5.0, 6.0, 7.0])
        .unwrap()
        .into_iter()
        .map(|pt| PowerPoint {
            p: pt.value as usize,
            gap: pt
                .report
                .paired_difference(SelectorKind::Naive, SelectorKind::Proposed, Metric::Anws)
                .unwrap(),
            naive: pt.report.summary(SelectorKind::Naive).unwrap().anws,
            proposed: pt.report.summary(SelectorKind::Proposed).unwrap().anws,
        })
        .collect()
}

fn criterion_4(points: &[PowerPoint]) -> Outcome {
    let at = |p| points.iter().find(|pt| pt.p == p).unwrap();
    let gaps: Vec<String> = [5, 6, 7]
        .iter()
        .map(|&p| {
            let g = &at(p).gap;
            format!("p={p}: {:.3} [{:.3}, {:.3}]", g.mean, g.ci_low, g.ci_high)
        })
        .collect();
    let positive = [5, 6, 7].iter().all(|&p| at(p).gap.mean > 0.0);
    let pass = positive && at(7).gap.excludes_zero() && at(7).gap.mean >= at(5).gap.mean;
    Outcome {
        pass,
        detail: format!("ANWS gap naive-proposed {} (n={POWER_N}, 200 reps)", gaps.join(", ")),
    }
}

fn criterion_5(points: &[PowerPoint]) -> Outcome {
    let at = |p| points.iter().find(|pt| pt.p == p).unwrap();
    let (lo, hi) = (at(3), at(7));
    let prop_rise = hi.proposed.mean - lo.proposed.mean;
    let naive_rise = hi.naive.mean - lo.naive.mean;
    let prop_tol = 2.0 * hi.proposed.half_width();
    let naive_tol = 2.0 * hi.naive.half_width();
    Outcome {
        pass: prop_rise < prop_tol && naive_rise > naive_tol,
        detail: format!(
            "p=3->7 ANWS rise: proposed {prop_rise:.3} (< {prop_tol:.3}), naive {naive_rise:.3} (> {naive_tol:.3})"
        ),
    }
}

fn criterion_6() -> Outcome {
    let config = ExperimentConfig {
        n: 100_000,
        noise: competitive_and_inferior_specs(),
        nuisance: NuisanceMode::Oracle,
        repetitions: 100,
        ..ExperimentConfig::default()
    };
    let p = config.noise.len();
    let mut covered = vec![0usize; p * p];
    for k in 0..config.repetitions {
        let (ds, cands, truth) = config.draw(k).unwrap();
        let oracle = truth.oracle_nuisance();
        let split = split_for(ds.len(), &config.selector).unwrap();
        let tensor = cross_fitted_tensor(&ds, &cands, &split, &config.nuisance.source(&oracle)).unwrap();
        for m in 0..p {
            let d = delta_hat(&tensor, m).unwrap();
            let c = cov_hat(&tensor, m).unwrap();
            for (idx, &s) in d.others.iter().enumerate() {
                let population = config.noise[m].mse() - config.noise[s].mse();
                if (d.delta[idx] - population).abs() < 4.0 * c.sigma[(idx, idx)].sqrt() {
                    covered[m * p + s] += 1;
                }
            }
        }
    }
    let worst = (0..p)
        .flat_map(|m| (0..p).filter(move |&s| s != m).map(move |s| m * p + s))
        .map(|i| covered[i])
        .min()
        .unwrap();
    let share = worst as f64 / config.repetitions as f64;
    Outcome {
        pass: share >= 0.95,
        detail: format!("worst pair coverage of 4-sigma band {share:.2} over 100 reps, n=1e5, {p} candidates"),
    }
}

fn criterion_7() -> Outcome {
    let config = near_ties(500);
    let population = config.noise[1].mse() - config.noise[0].mse();
    let standardized: Vec<f64> = (0..config.repetitions)
        .map(|k| {
            let (ds, cands, truth) = config.draw(k).unwrap();
            let oracle = truth.oracle_nuisance();
            let split = split_for(ds.len(), &config.selector).unwrap();
            let tensor = cross_fitted_tensor(&ds, &cands, &split, &config.nuisance.source(&oracle)).unwrap();
            let scores = tensor.pair(1, 0);
            (mean(scores) - population) / (sample_variance(scores) / scores.len() as f64).sqrt()
        })
        .collect();
    let ks = ks_test_normal(&standardized);
    let clt = clt_diagnostic(&near_ties(100), &CltOptions::default()).unwrap();
    Outcome {
        pass: ks.p_value > 0.01 && clt.rejection_share <= 0.12,
        detail: format!(
            "standardized pair KS p={:.3} (500 reps), adjusted-KS rejection share {:.3} (100 datasets)",
            ks.p_value, clt.rejection_share
        ),
    }
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_8() -> Outcome {
    let rep = stability_diagnostic(&[500, 1000, 2000, 4000], &StabilityConfig::default()).unwrap();
    let s1 = rep.slope1.unwrap_or(f64::NAN);
    let s2 = rep.slope2.unwrap_or(f64::NAN);
    Outcome {
        pass: s1 <= -0.7 && s2 <= -1.5,
        detail: format!(
            "slope log D1^2 {s1:.3} (<= -0.7), slope log D2^2 {s2:.3} (<= -1.5); D1^2 {}, D2^2 {}",
            sci(&rep.delta1_sq),
            sci(&rep.delta2_sq)
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut rng = rng::stream(2024, &[1]);
    let critical = max_gaussian_quantile(&DMatrix::identity(6, 6), ALPHA, 5000, &mut rng).unwrap();
    let mut mc_rng = rng::stream(2024, &[2]);
    let mut maxima: Vec<f64> = (0..100_000)
        .map(|_| (0..6).map(|_| StandardNormal.sample(&mut mc_rng)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    maxima.sort_by(f64::total_cmp);
    let reference = sorted_quantile(&maxima, 1.0 - ALPHA);
    let exact = normal_quantile((1.0 - ALPHA).powf(1.0 / 6.0));
    Outcome {
        pass: (critical - reference).abs() < 0.05,
        detail: format!("critical {critical:.4}, MC quantile {reference:.4} (B=1e5), closed form {exact:.4}"),
    }
}

fn criterion_10() -> Outcome {
    let mut rng = rng::stream(10, &[]);
    let mut simplex = 0.0f64;
    let mut shift = 0.0f64;
    for _ in 0..2000 {
        let k = rng.random_range(1..10);
        let delta: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let lambda = rng.random_range(0.0..200.0);
        let c = rng.random_range(-50.0..50.0);
        let w = exp_weights(&delta, lambda);
        assert!(w.iter().all(|&x| x >= 0.0));
        simplex = simplex.max((w.iter().sum::<f64>() - 1.0).abs());
        let moved: Vec<f64> = delta.iter().map(|d| d + c).collect();
        let w2 = exp_weights(&moved, lambda);
        shift = shift.max(w.iter().zip(&w2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let config = near_ties(3);
    let (ds, cands, truth) = config.draw(0).unwrap();
    let oracle = truth.oracle_nuisance();
    let split = split_for(ds.len(), &config.selector).unwrap();
    let tensor = cross_fitted_tensor(&ds, &cands, &split, &config.nuisance.source(&oracle)).unwrap();
    let mut antisym = 0.0f64;
    for r in 0..tensor.p() {
        for s in 0..tensor.p() {
            for i in 0..tensor.n() {
                antisym = antisym.max((tensor.get(r, s, i) + tensor.get(s, r, i)).abs());
            }
        }
    }
    let a = serde_json::to_string(&run_experiment(&config).unwrap()).unwrap();
    let b = serde_json::to_string(&run_experiment(&config).unwrap()).unwrap();
    let pass = simplex <= 1e-12 && shift <= 1e-12 && antisym == 0.0 && a == b;
    Outcome {
        pass,
        detail: format!(
            "simplex err {simplex:.1e}, shift err {shift:.1e}, antisymmetry err {antisym:.1e}, seed determinism {}",
            a == b
        ),
    }
}

fn report(id: usize, name: &str, started: Instant, outcome: Outcome, failed: &mut Vec<usize>) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    println!(
        "[{tag}] criterion {id:>2} {name}: {} ({:.1}s)",
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
    if !outcome.pass {
        failed.push(id);
    }
}

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let mut failed = Vec::new();

    if wanted(1) || wanted(2) {
        let t = Instant::now();
        let rep = run_experiment(&ExperimentConfig {
            selectors: vec![SelectorKind::Naive, SelectorKind::Proposed],
            ..near_ties(200)
        })
        .unwrap();
        if wanted(1) {
            report(1, "proposed FWER control", t, criterion_1_2(&rep, SelectorKind::Proposed), &mut failed);
        }
        if wanted(2) {
            report(2, "naive FWER control", t, criterion_1_2(&rep, SelectorKind::Naive), &mut failed);
        }
    }
    if wanted(3) {
        let t = Instant::now();
        report(3, "split ablation inflates FWER", t, criterion_3(), &mut failed);
    }
    if wanted(4) || wanted(5) {
        let t = Instant::now();
        let points = power_sweep();
        if wanted(4) {
            report(4, "power gap grows with p", t, criterion_4(&points), &mut failed);
        }
        if wanted(5) {
            report(5, "sweep stability", t, criterion_5(&points), &mut failed);
        }
    }
    let rest: [(usize, &str, fn() -> Outcome); 5] = [
        (6, "oracle delta coverage", criterion_6),
        (7, "CLT calibration", criterion_7),
        (8, "stability slopes", criterion_8),
        (9, "bootstrap max quantile", criterion_9),
        (10, "exactness properties", criterion_10),
    ];
    for (id, name, run) in rest {
        if wanted(id) {
            let t = Instant::now();
            report(id, name, t, run(), &mut failed);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
