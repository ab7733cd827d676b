//! Fast invariant suites behind `tomobench selftest`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tomobench::estimators::{design_matrix, dpt_estimate, dqst_estimate, fisher_matrix, crlb, PatternMatrix, ProbeMatrix};
use tomobench::matlin::pinv;
use tomobench::quantum::{
    bloch_from_state, born_probs, depolarize, fidelity, gell_mann_basis, haar_pure, haar_unitary, state_from_bloch,
    DensityMatrix,
};
use tomobench::simulation::{
    generate_patterns, generate_probe_set, random_square_root_measurement, sample_poisson_frequencies, RngStream,
};
use tomobench::{Complex, ComplexMatrix, TomoError};

type Check = std::result::Result<String, String>;

fn err(e: TomoError) -> String {
    e.to_string()
}

fn random_state(d: usize, rng: &mut ChaCha8Rng) -> Result<DensityMatrix<f64>, String> {
    let mix = rng.random_range(0.0..0.5);
    depolarize(&DensityMatrix::from_ket(&haar_pure(d, rng)), mix).map_err(err)
}

fn dqst_dpt_equivalence(stream: &RngStream) -> Check {
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| -> Result<f64, String> {
            let mut rng = stream.derive(i).rng();
            let d = 2 + (i % 2) as usize;
            let basis = gell_mann_basis::<f64>(d).map_err(err)?;
            let m = d * d + (i % 3) as usize;
            let (povm, _) = random_square_root_measurement(&basis, m, &mut rng).map_err(err)?;
            let (r_mat, probes) = generate_probe_set(&basis, d * d, 0.0, &mut rng).map_err(err)?;
            let f_mat = if i % 2 == 0 {
                generate_patterns(&povm, &probes, 1000, &mut rng).map_err(err)?
            } else {
                let mut p = DMatrix::zeros(m, d * d);
                for (a, s) in probes.iter().enumerate() {
                    p.set_column(a, &born_probs(s, &povm).map_err(err)?);
                }
                PatternMatrix::new(p).map_err(err)?
            };
            let truth = random_state(d, &mut rng)?;
            let f: DVector<f64> = sample_poisson_frequencies(&born_probs(&truth, &povm).map_err(err)?, 1000, &mut rng);
            let s = dqst_estimate(&f_mat, &r_mat, &f).map_err(err)?;
            let p = dpt_estimate(&r_mat, &f_mat, &f).map_err(err)?;
            Ok((s - p).amax())
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    if worst <= 1e-8 {
        Ok(format!("100 setups, max |r_s - r_p| = {worst:.2e}"))
    } else {
        Err(format!("max |r_s - r_p| = {worst:.2e} > 1e-8"))
    }
}

fn penrose(stream: &RngStream) -> Check {
    let mut rng = stream.rng();
    let mut worst = 0.0f64;
    for k in 0..40 {
        let (r, c) = (rng.random_range(1..9), rng.random_range(1..9));
        let mut a = ComplexMatrix::from_fn(r, c, |_, _| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        if k % 4 == 0 && c > 1 {
            let col = a.column(0).into_owned();
            a.set_column(c - 1, &col);
        }
        let x = pinv(&a).map_err(err)?;
        let scale = a.norm().max(1.0) * x.norm().max(1.0);
        let defects = [
            (&a * &x * &a - &a).norm(),
            (&x * &a * &x - &x).norm(),
            (&a * &x - (&a * &x).adjoint()).norm(),
            (&x * &a - (&x * &a).adjoint()).norm(),
        ];
        worst = defects.iter().fold(worst, |w, &d| w.max(d / scale));
    }
    if worst <= 1e-9 {
        Ok(format!("40 matrices, worst relative defect {worst:.2e}"))
    } else {
        Err(format!("Penrose defect {worst:.2e} > 1e-9"))
    }
}

fn povm_completeness(stream: &RngStream) -> Check {
    let basis = gell_mann_basis::<f64>(6).map_err(err)?;
    let mut rng = stream.rng();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (povm, _) = random_square_root_measurement(&basis, 40, &mut rng).map_err(err)?;
        let id = ComplexMatrix::identity(6, 6);
        worst = worst.max((povm.completeness_sum() - id).camax());
        for e in povm.elements() {
            let min = e.clone().symmetric_eigenvalues().min();
            worst = worst.max(-min);
        }
    }
    if worst <= 1e-10 {
        Ok(format!("20 measurements at d=6, m=40, worst defect {worst:.2e}"))
    } else {
        Err(format!("completeness/positivity defect {worst:.2e} > 1e-10"))
    }
}

fn bloch_round_trip(stream: &RngStream) -> Check {
    let mut rng = stream.rng();
    let mut worst = 0.0f64;
    for d in 2..=6 {
        let basis = gell_mann_basis::<f64>(d).map_err(err)?;
        for _ in 0..10 {
            let rho = random_state(d, &mut rng)?;
            let back = state_from_bloch(&bloch_from_state(&rho, &basis).map_err(err)?, &basis).map_err(err)?;
            worst = worst.max((back - rho.matrix()).camax());
        }
    }
    if worst <= 1e-12 {
        Ok(format!("50 states, d = 2..6, worst {worst:.2e}"))
    } else {
        Err(format!("round trip error {worst:.2e} > 1e-12"))
    }
}

fn fidelity_invariance(stream: &RngStream) -> Check {
    let mut rng = stream.rng();
    let mut worst = 0.0f64;
    for d in 2..=5 {
        for _ in 0..10 {
            let (a, b) = (random_state(d, &mut rng)?, random_state(d, &mut rng)?);
            let u = haar_unitary::<f64, _>(d, &mut rng);
            let f0 = fidelity(&a, &b).map_err(err)?;
            let f1 = fidelity(&a.conjugated_by(&u), &b.conjugated_by(&u)).map_err(err)?;
            worst = worst.max((f0 - f1).abs());
        }
    }
    if worst <= 1e-9 {
        Ok(format!("40 pairs, worst {worst:.2e}"))
    } else {
        Err(format!("fidelity changed by {worst:.2e} under a unitary"))
    }
}

fn fisher_scaling(stream: &RngStream) -> Check {
    let mut rng = stream.rng();
    let basis = gell_mann_basis::<f64>(3).map_err(err)?;
    for _ in 0..10 {
        let (povm, _) = random_square_root_measurement(&basis, 12, &mut rng).map_err(err)?;
        let design = design_matrix(&povm, &basis).map_err(err)?;
        let p = born_probs(&random_state(3, &mut rng)?, &povm).map_err(err)?;
        let k = rng.random_range(1..10_000u64);
        let f1 = fisher_matrix(&design, &p, k).map_err(err)?;
        let f2 = fisher_matrix(&design, &p, 2 * k).map_err(err)?;
        if f2.matrix() != f1.matrix().scale(2.0) {
            return Err(format!("Fisher(2N) != 2 Fisher(N) at N = {k}"));
        }
        let (c1, c2) = (crlb(&f1).map_err(err)?, crlb(&f2).map_err(err)?);
        if c2 != c1 / 2.0 {
            return Err(format!("crlb(2N) = {c2:e} but crlb(N)/2 = {:e}", c1 / 2.0));
        }
    }
    Ok("10 instances at d=3, exact".into())
}

fn probe_matrix_consistency(stream: &RngStream) -> Check {
    let mut rng = stream.rng();
    let basis = gell_mann_basis::<f64>(4).map_err(err)?;
    let (r_mat, states) = generate_probe_set(&basis, 30, 0.2, &mut rng).map_err(err)?;
    let rebuilt = ProbeMatrix::from_bloch_vectors(
        &states
            .iter()
            .map(|s| bloch_from_state(s, &basis))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?,
    )
    .map_err(err)?;
    let gap = (r_mat.matrix() - rebuilt.matrix()).amax();
    let first_row = r_mat.matrix().row(0).iter().fold(0.0f64, |w, &x| w.max((x - 0.5).abs()));
    if gap == 0.0 && first_row <= 1e-12 {
        Ok("identity component 1/sqrt(d) on every probe".into())
    } else {
        Err(format!("probe matrix mismatch {gap:.2e}, identity row defect {first_row:.2e}"))
    }
}

type Suite = (&'static str, fn(&RngStream) -> Check);

const SUITES: [Suite; 7] = [
    ("eq8-equivalence", dqst_dpt_equivalence),
    ("penrose-conditions", penrose),
    ("povm-completeness", povm_completeness),
    ("bloch-round-trip", bloch_round_trip),
    ("fidelity-unitary-invariance", fidelity_invariance),
    ("fisher-crlb-scaling", fisher_scaling),
    ("probe-matrix", probe_matrix_consistency),
];

/// Runs every suite, printing one line each. Returns whether all passed.
pub fn run_all(seed: u64) -> bool {
    println!("selftest with seed {seed}");
    let root = RngStream::root(seed);
    let mut all = true;
    for (k, (name, suite)) in SUITES.iter().enumerate() {
        let start = Instant::now();
        let outcome = suite(&root.derive(k as u64 + 1));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                all = false;
                println!("FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    println!("{}", if all { "all suites passed" } else { "some suites FAILED" });
    all
}
