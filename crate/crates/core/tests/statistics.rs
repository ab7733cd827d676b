//! Statistical behaviour of the estimators and the Monte Carlo harness.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tomobench::estimators::{invert, qdt, Estimator};
use tomobench::experiments::{run_sweep, ExperimentConfig};
use tomobench::quantum::{bloch_from_state, born_probs, depolarize, gell_mann_basis, haar_pure, DensityMatrix};
use tomobench::simulation::{
    aggregate, generate_patterns, generate_probe_set, inverse_condition_number, probe_probabilities,
    random_square_root_measurement, run_trial, sample_measurement_with_condition, sample_poisson_frequencies,
    RngStream, TrialSetup,
};
use tomobench::TomoError;

fn random_state(d: usize, mix: f64, rng: &mut ChaCha8Rng) -> DensityMatrix<f64> {
    depolarize(&DensityMatrix::from_ket(&haar_pure(d, rng)), mix).unwrap()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn ols_is_unbiased_and_gls_is_no_worse() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let basis = gell_mann_basis::<f64>(3).unwrap();
    let (povm, design) = random_square_root_measurement(&basis, 15, &mut rng).unwrap();
    let rho = random_state(3, 0.1, &mut rng);
    let truth = bloch_from_state(&rho, &basis).unwrap().into_coords();
    let p = born_probs(&rho, &povm).unwrap();
    let n = 400;
    let draws = 4000;
    let mut ols_est = Vec::with_capacity(draws);
    let (mut se_ols, mut se_gls) = (Vec::new(), Vec::new());
    for _ in 0..draws {
        let f: DVector<f64> = sample_poisson_frequencies(&p, n, &mut rng);
        let a = invert(design.full(), &f, Estimator::Ols, n).unwrap();
        let g = invert(design.full(), &f, Estimator::Gls, n).unwrap();
        se_ols.push((1..9).map(|k| (a[k] - truth[k]).powi(2)).sum::<f64>());
        se_gls.push((1..9).map(|k| (g[k] - truth[k]).powi(2)).sum::<f64>());
        ols_est.push(a);
    }
    for k in 1..9 {
        let coord: Vec<f64> = ols_est.iter().map(|r| r[k]).collect();
        let (mean, se) = mean_and_se(&coord);
        assert!((mean - truth[k]).abs() <= 3.5 * se, "coordinate {k}: {mean} vs {} (se {se})", truth[k]);
    }
    let (mo, _) = mean_and_se(&se_ols);
    let (mg, _) = mean_and_se(&se_gls);
    assert!(mg <= mo, "GLS mse {mg} > OLS mse {mo}");
}

#[test]
fn detector_tomography_error_falls_like_inverse_root_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let basis = gell_mann_basis::<f64>(3).unwrap();
    let (povm, design) = random_square_root_measurement(&basis, 12, &mut rng).unwrap();
    let probe_counts = [20usize, 40, 80, 160, 320, 640];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &m in &probe_counts {
        let mut total = 0.0;
        let reps = 30;
        for _ in 0..reps {
            let (r_mat, probes) = generate_probe_set(&basis, m, 0.0, &mut rng).unwrap();
            let f_mat = generate_patterns(&povm, &probes, 200, &mut rng).unwrap();
            total += (qdt(&f_mat, &r_mat).unwrap() - design.full()).norm();
        }
        xs.push((m as f64).ln());
        ys.push((total / reps as f64).ln());
    }
    let (mx, my) = (xs.iter().sum::<f64>() / 6.0, ys.iter().sum::<f64>() / 6.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((-0.7..=-0.3).contains(&slope), "log-log slope {slope}");
}

#[test]
fn mean_pattern_matches_born_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let basis = gell_mann_basis::<f64>(2).unwrap();
    let (povm, _) = random_square_root_measurement(&basis, 5, &mut rng).unwrap();
    let (_, probes) = generate_probe_set(&basis, 4, 0.0, &mut rng).unwrap();
    let probs = probe_probabilities(&povm, &probes).unwrap();
    let n = 50;
    let reps = 1000;
    let samples: Vec<DMatrix<f64>> = (0..reps)
        .map(|_| generate_patterns(&povm, &probes, n, &mut rng).unwrap().matrix().clone())
        .collect();
    for j in 0..5 {
        for a in 0..4 {
            let xs: Vec<f64> = samples.iter().map(|s| s[(j, a)]).collect();
            let (mean, se) = mean_and_se(&xs);
            let p = probs[(j, a)];
            // Poisson oracle for the standard error of the mean.
            let oracle_se = (p / n as f64 / reps as f64).sqrt();
            assert!((mean - p).abs() <= 3.0 * oracle_se.max(se), "F[{j},{a}] = {mean} vs {p}");
        }
    }
}

fn setup(d: usize, m: usize, probes: usize, n: u64, seed: u64) -> TrialSetup<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = gell_mann_basis::<f64>(d).unwrap();
    let (povm, _) = random_square_root_measurement(&basis, m, &mut rng).unwrap();
    let rho = random_state(d, 0.1, &mut rng);
    let (_, probe_states) = generate_probe_set(&basis, probes, 0.0, &mut rng).unwrap();
    TrialSetup::new(basis, povm, rho, &probe_states, n).unwrap()
}

#[test]
fn noiseless_regime_recovers_the_state() {
    let s = setup(3, 12, 30, 1_000_000_000, 9);
    for i in 0..5 {
        let o = run_trial(&s, i, &RngStream::new(1, i as u64)).unwrap();
        assert!(o.squared_error_dqst < 1e-6, "{}", o.squared_error_dqst);
        assert!(o.squared_error_dpt < 1e-6, "{}", o.squared_error_dpt);
        assert!(o.fidelity_dqst > 0.999 && o.fidelity_dpt > 0.999);
    }
}

#[test]
fn square_probe_sets_give_identical_errors() {
    for d in [2, 3] {
        let s = setup(d, d * d + 2, d * d, 500, 13 + d as u64);
        for i in 0..10 {
            let o = run_trial(&s, i, &RngStream::new(2, i as u64)).unwrap();
            assert!((o.squared_error_dqst - o.squared_error_dpt).abs() <= 1e-10);
        }
    }
}

#[test]
fn aggregation_is_order_independent_and_exact_for_repeats() {
    let s = setup(2, 4, 8, 300, 21);
    let root = RngStream::root(77);
    let outcomes: Vec<_> = (0..40).map(|i| run_trial(&s, i, &root.derive(i as u64)).unwrap()).collect();
    let mut shuffled = outcomes.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let a = aggregate(outcomes, 40, 0, 0.1, None).unwrap();
    let b = aggregate(shuffled, 40, 0, 0.1, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));

    // Two trials on the same stream are identical, so the spread is zero.
    let same: Vec<_> = (0..2)
        .map(|i| {
            let mut o = run_trial(&s, 0, &root).unwrap();
            o.index = i;
            o
        })
        .collect();
    let r = aggregate(same, 2, 0, 0.1, None).unwrap();
    assert_eq!(r.mse_dqst.se, 0.0);
    assert_eq!(r.fidelity_dpt.se, 0.0);
}

#[test]
fn conditioned_sampling_is_easy_at_the_mode_and_exhausts_in_the_tail() {
    let basis = gell_mann_basis::<f64>(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut ics: Vec<f64> = (0..10_000)
        .map(|_| inverse_condition_number(&random_square_root_measurement(&basis, 12, &mut rng).unwrap().1).unwrap())
        .collect();
    ics.sort_by(f64::total_cmp);
    // Histogram oracle: the fullest of 40 bins.
    let (lo, hi) = (ics[0], ics[ics.len() - 1]);
    let width = (hi - lo) / 40.0;
    let mut counts = [0usize; 40];
    for &x in &ics {
        counts[(((x - lo) / width) as usize).min(39)] += 1;
    }
    let peak = (0..40).max_by_key(|&b| counts[b]).unwrap();
    let mode = lo + (peak as f64 + 0.5) * width;

    let accepted = sample_measurement_with_condition(&basis, 12, mode, width / 2.0, 200, &mut rng).unwrap();
    let ic = inverse_condition_number(&accepted.1).unwrap();
    assert!((ic - mode).abs() <= width / 2.0);

    let beyond = (hi + 0.05).min(0.999);
    match sample_measurement_with_condition(&basis, 12, beyond, width / 2.0, 200, &mut rng) {
        Err(TomoError::SamplingExhausted { attempts, max_seen, .. }) => {
            assert_eq!(attempts, 200);
            assert!(max_seen < beyond);
        }
        other => panic!("expected exhaustion, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn bias_vanishes_without_noise() {
    let mut c = ExperimentConfig::fig2();
    c.d = 2;
    c.m = 4;
    c.probe_grid = vec![4];
    c.event_grid = vec![1_000_000_000];
    c.trials = 10;
    c.bootstrap_resamples = 10;
    let run = run_sweep(&c).unwrap();
    let bias = run.points[0].result.bias.unwrap();
    assert!(bias.value < 1e-4, "bias {}", bias.value);
}

#[test]
fn bias_shrinks_with_the_event_budget() {
    let mut c = ExperimentConfig::fig2();
    c.d = 3;
    c.m = 12;
    c.probe_grid = vec![60];
    c.event_grid = vec![300, 30_000];
    c.trials = 60;
    c.bootstrap_resamples = 50;
    let run = run_sweep(&c).unwrap();
    let b: Vec<f64> = run.points.iter().map(|p| p.result.bias.unwrap().value).collect();
    assert!(b[1] < b[0], "bias {b:?}");
    assert!(run.points.iter().all(|p| p.result.bias.unwrap().bootstrap_se > 0.0));
}
