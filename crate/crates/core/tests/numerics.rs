//! Cross-module numerical identities, checked against independent oracles.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tomobench::estimators::{design_matrix, dpt_estimate, dqst_estimate, fisher_matrix, PatternMatrix};
use tomobench::matlin::{condition_number, inv_sqrt_psd, pinv};
use tomobench::quantum::{
    bloch_from_state, born_probs, depolarize, gell_mann_basis, haar_pure, square_root_povm, state_from_bloch,
    DensityMatrix, Ket, Povm,
};
use tomobench::simulation::{generate_patterns, generate_probe_set, random_square_root_measurement};
use tomobench::{Complex, ComplexMatrix};

fn random_state(d: usize, rng: &mut ChaCha8Rng) -> DensityMatrix<f64> {
    let mix = rng.random_range(0.0..0.6);
    depolarize(&DensityMatrix::from_ket(&haar_pure(d, rng)), mix).unwrap()
}

#[test]
fn condition_number_matches_gram_eigenvalues() {
    let basis = gell_mann_basis::<f64>(6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let (_, design) = random_square_root_measurement(&basis, 40, &mut rng).unwrap();
        let a = design.traceless();
        let gram = a.transpose() * &a;
        let eig = gram.symmetric_eigenvalues();
        let oracle = (eig.max() / eig.min()).sqrt();
        let kappa = condition_number(&a).unwrap();
        assert!((kappa - oracle).abs() <= 1e-8 * oracle, "{kappa} vs {oracle}");
    }
}

#[test]
fn inverse_square_root_whitens_a_haar_gram_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let kets: Vec<Ket<f64>> = (0..40).map(|_| haar_pure(6, &mut rng)).collect();
    let gram = kets
        .iter()
        .fold(ComplexMatrix::zeros(6, 6), |acc, k| acc + k.projector());
    let w = inv_sqrt_psd(&gram, 1e-12).unwrap();
    let whitened = &w * &gram * &w;
    assert!((whitened - ComplexMatrix::identity(6, 6)).camax() < 1e-9);
}

#[test]
fn born_probabilities_are_linear_in_bloch_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in [2, 3, 6] {
        let basis = gell_mann_basis::<f64>(d).unwrap();
        let (povm, design) = random_square_root_measurement(&basis, 2 * d * d, &mut rng).unwrap();
        let rho = random_state(d, &mut rng);
        let p = born_probs(&rho, &povm).unwrap();
        let r = bloch_from_state(&rho, &basis).unwrap();
        assert!((design.probabilities(&r) - p).amax() < 1e-10);
    }
}

#[test]
fn single_precision_pipeline_agrees_with_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let kets: Vec<Ket<f64>> = (0..9).map(|_| haar_pure(3, &mut rng)).collect();
    let kets32: Vec<Ket<f32>> = kets
        .iter()
        .map(|k| Ket::new(k.amplitudes().map(|z| Complex::new(z.re as f32, z.im as f32))).unwrap())
        .collect();
    let a64 = design_matrix(&square_root_povm(&kets, 1e-12).unwrap(), &gell_mann_basis(3).unwrap()).unwrap();
    let a32 = design_matrix(&square_root_povm(&kets32, 1e-5).unwrap(), &gell_mann_basis(3).unwrap()).unwrap();
    let gap = (a64.full().map(|x| x as f32) - a32.full()).amax();
    assert!(gap < 1e-5, "f32/f64 design gap {gap}");
}

fn relabel(povm: &Povm<f64>, perm: &[usize]) -> Povm<f64> {
    Povm::new(perm.iter().map(|&j| povm.elements()[j].clone()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pseudoinverse_satisfies_penrose_conditions(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9, dup in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = DMatrix::from_fn(rows, cols, |_, _| Complex::new(rng.random_range(-1.0f64..1.0), rng.random_range(-1.0f64..1.0)));
        if dup && cols > 1 {
            let c = a.column(0).into_owned();
            a.set_column(cols - 1, &c);
        }
        let x = pinv(&a).unwrap();
        let ax = &a * &x;
        let xa = &x * &a;
        prop_assert!((&ax * &a - &a).norm() < 1e-9);
        prop_assert!((&xa * &x - &x).norm() < 1e-9 * x.norm().max(1.0));
        prop_assert!((&ax - ax.adjoint()).norm() < 1e-9);
        prop_assert!((&xa - xa.adjoint()).norm() < 1e-9);
    }

    #[test]
    fn bloch_round_trip(seed in any::<u64>(), d in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = gell_mann_basis::<f64>(d).unwrap();
        let rho = random_state(d, &mut rng);
        let back = state_from_bloch(&bloch_from_state(&rho, &basis).unwrap(), &basis).unwrap();
        prop_assert!((back - rho.matrix()).camax() < 1e-12);
    }

    #[test]
    fn dqst_equals_dpt_for_square_full_rank_probes(seed in any::<u64>(), d in 2usize..4, extra in 0usize..4, noisy in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = gell_mann_basis::<f64>(d).unwrap();
        let m = d * d + extra;
        let (povm, _) = random_square_root_measurement(&basis, m, &mut rng).unwrap();
        let (r_mat, probes) = generate_probe_set(&basis, d * d, 0.0, &mut rng).unwrap();
        let f_mat = if noisy {
            generate_patterns(&povm, &probes, 500, &mut rng).unwrap()
        } else {
            let cols: Vec<DVector<f64>> = probes.iter().map(|s| born_probs(s, &povm).unwrap()).collect();
            PatternMatrix::new(DMatrix::from_columns(&cols)).unwrap()
        };
        let f = born_probs(&random_state(d, &mut rng), &povm).unwrap();
        let s = dqst_estimate(&f_mat, &r_mat, &f).unwrap();
        let p = dpt_estimate(&r_mat, &f_mat, &f).unwrap();
        prop_assert!((s - p).amax() <= 1e-8);
    }

    #[test]
    fn fisher_is_invariant_under_outcome_relabeling(seed in any::<u64>(), n in 1u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = gell_mann_basis::<f64>(3).unwrap();
        let (povm, design) = random_square_root_measurement(&basis, 12, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..12).collect();
        for i in (1..12).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = relabel(&povm, &perm);
        let rho = random_state(3, &mut rng);
        let f1 = fisher_matrix(&design, &born_probs(&rho, &povm).unwrap(), n).unwrap();
        let design2 = design_matrix(&shuffled, &basis).unwrap();
        let f2 = fisher_matrix(&design2, &born_probs(&rho, &shuffled).unwrap(), n).unwrap();
        let scale = f1.matrix().norm();
        prop_assert!((f1.matrix() - f2.matrix()).norm() <= 1e-12 * scale);
    }
}

#[test]
fn pauli_coordinates_of_the_ground_state() {
    let basis = gell_mann_basis::<f64>(2).unwrap();
    let r = bloch_from_state(&DensityMatrix::from_ket(&Ket::basis(2, 0)), &basis).unwrap();
    // Direct traces: Tr(|0><0| I/sqrt2) = Tr(|0><0| sz/sqrt2) = 1/sqrt2.
    let s = 0.5f64.sqrt();
    let oracle: Vec<f64> = basis
        .elements()
        .iter()
        .map(|g| g[(0, 0)].re)
        .collect();
    assert_abs_diff_eq!(r.coords().as_slice(), oracle.as_slice(), epsilon = 1e-15);
    assert_abs_diff_eq!(r.coords()[0], s, epsilon = 1e-15);
}
