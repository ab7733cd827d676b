//! Poissonian data generation, single tomography trials and their Monte Carlo
//! aggregation.
//!
//! Randomness is keyed, never shared: every consumer derives its own
//! [`RngStream`] from `(master_seed, stream_index, purpose)`. Trials run in
//! parallel on the current rayon pool and are reduced in trial-index order,
//! so results do not depend on the worker count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::estimators::{
    crlb, design_matrix, dpt_estimate_with, dqst_estimate_with, effective_dpt_design, fisher_matrix,
    DesignMatrix, Estimator, PatternMatrix, ProbeMatrix,
};
use crate::matlin::{condition_number, frobenius_norm, trace_norm, RealMatrix};
use crate::quantum::{
    bloch_from_state, born_probs, depolarize, fidelity, haar_pure, project_to_physical, root_fidelity,
    square_root_povm, state_from_bloch, BlochVector, DensityMatrix, GeneratorBasis, Ket, Povm,
};
use crate::scalar::Real;

/// Purpose tags mixed into stream indices.
pub mod purpose {
    pub const MEASUREMENT: u64 = 1;
    pub const TRUE_STATE: u64 = 2;
    pub const PROBES: u64 = 3;
    pub const PATTERNS: u64 = 4;
    pub const SIGNAL: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const PREPASS: u64 = 8;
    pub const CONDITIONED: u64 = 9;
    pub const SWEEP_POINT: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Addressable random stream: a ChaCha8 generator keyed by `master_seed` and
/// positioned on stream `stream_index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        RngStream {
            master_seed,
            stream_index,
        }
    }

    /// Root stream of a run.
    pub fn root(master_seed: u64) -> Self {
        Self::new(master_seed, 0)
    }

    /// Child stream for `tag`; distinct tags give distinct stream indices.
    pub fn derive(&self, tag: u64) -> Self {
        let index = splitmix64(splitmix64(self.stream_index) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
        RngStream::new(self.master_seed, index)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

/// Independent `N_j ~ Poisson(N p_j)` per outcome, returned as `N_j / N`.
pub fn sample_poisson_frequencies<T: Real, R: Rng + ?Sized>(
    p: &DVector<T>,
    n_events: u64,
    rng: &mut R,
) -> DVector<T> {
    let n = n_events as f64;
    p.map(|pj| {
        let rate = pj.to_f64_lossy() * n;
        let count = if rate > 0.0 {
            Poisson::new(rate).expect("finite positive rate").sample(rng)
        } else {
            0.0
        };
        T::lit(count / n)
    })
}

/// `M` Haar-random pure probes, each depolarized by `admixture`.
pub fn generate_probe_set<T: Real, R: Rng + ?Sized>(
    basis: &GeneratorBasis<T>,
    count: usize,
    admixture: T,
    rng: &mut R,
) -> Result<(ProbeMatrix<T>, Vec<DensityMatrix<T>>)> {
    if count == 0 {
        return Err(TomoError::invalid("probe set needs at least one probe"));
    }
    let d = basis.dim();
    let states = (0..count)
        .map(|_| depolarize(&DensityMatrix::from_ket(&haar_pure(d, rng)), admixture))
        .collect::<Result<Vec<_>>>()?;
    let blochs = states
        .iter()
        .map(|s| bloch_from_state(s, basis))
        .collect::<Result<Vec<_>>>()?;
    Ok((ProbeMatrix::from_bloch_vectors(&blochs)?, states))
}

/// Born probabilities of each probe, one column per probe (`m x M`).
pub fn probe_probabilities<T: Real>(povm: &Povm<T>, probes: &[DensityMatrix<T>]) -> Result<RealMatrix<T>> {
    let mut out = DMatrix::zeros(povm.outcomes(), probes.len());
    for (a, rho) in probes.iter().enumerate() {
        out.set_column(a, &born_probs(rho, povm)?);
    }
    Ok(out)
}

/// Poisson patterns from precomputed probe probabilities.
pub fn sample_patterns<T: Real, R: Rng + ?Sized>(
    probabilities: &RealMatrix<T>,
    n_events: u64,
    rng: &mut R,
) -> Result<PatternMatrix<T>> {
    let mut out = DMatrix::zeros(probabilities.nrows(), probabilities.ncols());
    for a in 0..probabilities.ncols() {
        let p = probabilities.column(a).into_owned();
        out.set_column(a, &sample_poisson_frequencies(&p, n_events, rng));
    }
    PatternMatrix::new(out)
}

/// Column `a` is the measured frequency vector of probe `a`.
pub fn generate_patterns<T: Real, R: Rng + ?Sized>(
    povm: &Povm<T>,
    probes: &[DensityMatrix<T>],
    n_events_per_probe: u64,
    rng: &mut R,
) -> Result<PatternMatrix<T>> {
    sample_patterns(&probe_probabilities(povm, probes)?, n_events_per_probe, rng)
}

/// How reconstructed states are compared with the true state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityMeasure {
    /// `Tr sqrt(sqrt(rho) sigma sqrt(rho))`
    #[default]
    Root,
    /// The square of [`FidelityMeasure::Root`].
    UhlmannJozsa,
}

impl FidelityMeasure {
    pub fn evaluate<T: Real>(self, rho: &DensityMatrix<T>, sigma: &DensityMatrix<T>) -> Result<T> {
        match self {
            FidelityMeasure::Root => root_fidelity(rho, sigma),
            FidelityMeasure::UhlmannJozsa => fidelity(rho, sigma),
        }
    }
}

/// Matrix norm used to report the bias of the effective DPT design matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasNorm {
    #[default]
    Frobenius,
    Trace,
}

impl BiasNorm {
    pub fn evaluate<T: Real>(self, m: &RealMatrix<T>) -> Result<T> {
        match self {
            BiasNorm::Frobenius => Ok(frobenius_norm(m)),
            BiasNorm::Trace => trace_norm(m),
        }
    }
}

/// Everything held fixed across the trials of one Monte Carlo run.
#[derive(Clone, Debug)]
pub struct TrialSetup<T: Real> {
    basis: GeneratorBasis<T>,
    povm: Povm<T>,
    design: DesignMatrix<T>,
    true_state: DensityMatrix<T>,
    true_bloch: BlochVector<T>,
    signal_probabilities: DVector<T>,
    probes: ProbeMatrix<T>,
    probe_probabilities: RealMatrix<T>,
    pub n_events: u64,
    /// Events recorded per probe pattern.
    pub pattern_events: u64,
    pub estimator: Estimator,
    pub fidelity: FidelityMeasure,
    /// Keep the per-trial effective DPT design matrix (needed for bias).
    pub retain_design: bool,
}

impl<T: Real> TrialSetup<T> {
    /// Same event budget for the signal and for every probe pattern.
    pub fn new(
        basis: GeneratorBasis<T>,
        povm: Povm<T>,
        true_state: DensityMatrix<T>,
        probe_states: &[DensityMatrix<T>],
        n_events: u64,
    ) -> Result<Self> {
        if n_events == 0 {
            return Err(TomoError::invalid("event budget must be positive"));
        }
        let design = design_matrix(&povm, &basis)?;
        let true_bloch = bloch_from_state(&true_state, &basis)?;
        let signal_probabilities = born_probs(&true_state, &povm)?;
        let blochs = probe_states
            .iter()
            .map(|s| bloch_from_state(s, &basis))
            .collect::<Result<Vec<_>>>()?;
        let probes = ProbeMatrix::from_bloch_vectors(&blochs)?;
        let probe_probabilities = probe_probabilities(&povm, probe_states)?;
        Ok(TrialSetup {
            basis,
            povm,
            design,
            true_state,
            true_bloch,
            signal_probabilities,
            probes,
            probe_probabilities,
            n_events,
            pattern_events: n_events,
            estimator: Estimator::Ols,
            fidelity: FidelityMeasure::Root,
            retain_design: false,
        })
    }

    pub fn basis(&self) -> &GeneratorBasis<T> {
        &self.basis
    }

    pub fn povm(&self) -> &Povm<T> {
        &self.povm
    }

    pub fn design(&self) -> &DesignMatrix<T> {
        &self.design
    }

    pub fn true_state(&self) -> &DensityMatrix<T> {
        &self.true_state
    }

    pub fn true_bloch(&self) -> &BlochVector<T> {
        &self.true_bloch
    }

    pub fn signal_probabilities(&self) -> &DVector<T> {
        &self.signal_probabilities
    }

    pub fn probes(&self) -> &ProbeMatrix<T> {
        &self.probes
    }

    pub fn probe_probabilities(&self) -> &RealMatrix<T> {
        &self.probe_probabilities
    }

    /// CRLB of QST with the true design matrix at this setup's event budget.
    pub fn crlb(&self) -> Result<T> {
        crlb(&fisher_matrix(&self.design, &self.signal_probabilities, self.n_events)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome<T: Real> {
    pub index: usize,
    pub squared_error_dqst: T,
    pub squared_error_dpt: T,
    pub fidelity_dqst: T,
    pub fidelity_dpt: T,
    pub estimated_design_dpt: Option<RealMatrix<T>>,
}

/// Squared error over the traceless coordinates; index 0 is ignored.
pub fn traceless_squared_error<T: Real>(truth: &DVector<T>, estimate: &DVector<T>) -> T {
    (1..truth.len()).fold(T::zero(), |acc, k| {
        let e = truth[k] - estimate[k];
        acc + e * e
    })
}

/// Physical state for a linear estimate: the estimated identity component
/// is replaced by its known value `1/sqrt(d)`, then the result is projected.
pub fn physical_estimate<T: Real>(estimate: &DVector<T>, basis: &GeneratorBasis<T>) -> Result<DensityMatrix<T>> {
    let mut coords = estimate.clone();
    coords[0] = T::from_count(basis.dim()).sqrt().recip();
    project_to_physical(&state_from_bloch(&BlochVector::new(coords)?, basis)?)
}

/// One data acquisition: fresh patterns and fresh signal data, both
/// estimators, errors and fidelities.
pub fn run_trial<T: Real>(setup: &TrialSetup<T>, index: usize, stream: &RngStream) -> Result<TrialOutcome<T>> {
    let attach = |e: TomoError| TomoError::TrialFailed {
        trial: index,
        source: Box::new(e),
    };
    let patterns = sample_patterns(
        &setup.probe_probabilities,
        setup.pattern_events,
        &mut stream.derive(purpose::PATTERNS).rng(),
    )
    .map_err(attach)?;
    let f = sample_poisson_frequencies(
        &setup.signal_probabilities,
        setup.n_events,
        &mut stream.derive(purpose::SIGNAL).rng(),
    );

    let r_dqst = dqst_estimate_with(&patterns, &setup.probes, &f, setup.estimator, setup.n_events).map_err(attach)?;
    let r_dpt = dpt_estimate_with(&setup.probes, &patterns, &f, setup.estimator, setup.n_events).map_err(attach)?;

    let truth = setup.true_bloch.coords();
    let fid = |r: &DVector<T>| -> Result<T> {
        let rho = physical_estimate(r, &setup.basis)?;
        setup.fidelity.evaluate(&setup.true_state, &rho)
    };
    let estimated_design_dpt = if setup.retain_design {
        Some(effective_dpt_design(&setup.probes, &patterns).map_err(attach)?)
    } else {
        None
    };
    Ok(TrialOutcome {
        index,
        squared_error_dqst: traceless_squared_error(truth, &r_dqst),
        squared_error_dpt: traceless_squared_error(truth, &r_dpt),
        fidelity_dqst: fid(&r_dqst).map_err(attach)?,
        fidelity_dpt: fid(&r_dpt).map_err(attach)?,
        estimated_design_dpt,
    })
}

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Summed in slice order; the standard error uses the `n - 1` variance.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanSe {
                mean: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return MeanSe { mean, se: f64::NAN };
        }
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        MeanSe {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub norm: BiasNorm,
    /// `|| mean(A_p) - A ||`
    pub value: f64,
    /// Standard deviation of the bias over bootstrap resamples of the trials.
    pub bootstrap_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub mse_dqst: MeanSe,
    pub mse_dpt: MeanSe,
    pub fidelity_dqst: MeanSe,
    pub fidelity_dpt: MeanSe,
    pub trials_requested: usize,
    pub trials_used: usize,
    pub trials_failed: usize,
    pub crlb: f64,
    pub bias: Option<BiasEstimate>,
}

#[derive(Clone, Debug)]
pub struct MonteCarloConfig<T: Real> {
    pub setup: TrialSetup<T>,
    pub stream: RngStream,
    pub bias_norm: BiasNorm,
    /// Resamples for the bootstrap standard error of the bias (0 disables it).
    pub bootstrap_resamples: usize,
}

impl<T: Real> MonteCarloConfig<T> {
    pub fn new(setup: TrialSetup<T>, stream: RngStream) -> Self {
        MonteCarloConfig {
            setup,
            stream,
            bias_norm: BiasNorm::Frobenius,
            bootstrap_resamples: 200,
        }
    }
}

/// Collects trial results, aborting when more than 1% of trials failed with
/// a degenerate-data error. Other errors abort immediately.
pub fn collect_trials<T: Real>(results: Vec<Result<TrialOutcome<T>>>) -> Result<(Vec<TrialOutcome<T>>, usize)> {
    let trials = results.len();
    let mut ok = Vec::with_capacity(trials);
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => ok.push(o),
            Err(e) if e.is_degenerate() => failures.push(e),
            Err(e) => return Err(e),
        }
    }
    if failures.len() * 100 > trials {
        return Err(TomoError::TooManyFailures {
            failed: failures.len(),
            trials,
            first: failures[0].to_string(),
        });
    }
    for e in &failures {
        log::warn!("excluding {e}");
    }
    Ok((ok, failures.len()))
}

fn mean_design<T: Real>(designs: &[&RealMatrix<T>], picks: impl Iterator<Item = usize>) -> RealMatrix<T> {
    let (r, c) = designs[0].shape();
    let mut sum = DMatrix::zeros(r, c);
    let mut count = 0usize;
    for i in picks {
        sum += designs[i];
        count += 1;
    }
    sum.unscale(T::from_count(count))
}

/// Reduces trial outcomes in index order, independent of their input order.
pub fn aggregate<T: Real>(
    mut outcomes: Vec<TrialOutcome<T>>,
    trials_requested: usize,
    trials_failed: usize,
    crlb: f64,
    bias_reference: Option<(&RealMatrix<T>, BiasNorm, RngStream, usize)>,
) -> Result<AggregateResult> {
    outcomes.sort_by_key(|o| o.index);
    let col = |f: fn(&TrialOutcome<T>) -> T| -> Vec<f64> { outcomes.iter().map(|o| f(o).to_f64_lossy()).collect() };
    let mse_dqst = MeanSe::of(&col(|o| o.squared_error_dqst));
    let mse_dpt = MeanSe::of(&col(|o| o.squared_error_dpt));
    let fidelity_dqst = MeanSe::of(&col(|o| o.fidelity_dqst));
    let fidelity_dpt = MeanSe::of(&col(|o| o.fidelity_dpt));

    let bias = match bias_reference {
        Some((reference, norm, stream, resamples)) => {
            let designs: Vec<&RealMatrix<T>> = outcomes
                .iter()
                .filter_map(|o| o.estimated_design_dpt.as_ref())
                .collect();
            if designs.len() != outcomes.len() || designs.is_empty() {
                return Err(TomoError::invalid("bias requested but trials did not retain design matrices"));
            }
            let n = designs.len();
            let value = norm.evaluate(&(mean_design(&designs, 0..n) - reference))?.to_f64_lossy();
            let boot: Vec<f64> = (0..resamples)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream.derive(b as u64).rng();
                    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    norm.evaluate(&(mean_design(&designs, picks.into_iter()) - reference))
                        .map(|v| v.to_f64_lossy())
                })
                .collect::<Result<_>>()?;
            let bootstrap_se = if boot.len() >= 2 {
                MeanSe::of(&boot).se * (boot.len() as f64).sqrt()
            } else {
                f64::NAN
            };
            Some(BiasEstimate {
                norm,
                value,
                bootstrap_se,
            })
        }
        None => None,
    };

    Ok(AggregateResult {
        mse_dqst,
        mse_dpt,
        fidelity_dqst,
        fidelity_dpt,
        trials_requested,
        trials_used: outcomes.len(),
        trials_failed,
        crlb,
        bias,
    })
}

/// Runs `trials` independent trials on the current rayon pool and aggregates
/// them. Bias of the effective DPT design is reported when the setup retains
/// design matrices.
pub fn monte_carlo<T: Real>(config: &MonteCarloConfig<T>, trials: usize) -> Result<AggregateResult> {
    if trials < 2 {
        return Err(TomoError::invalid("Monte Carlo needs at least 2 trials"));
    }
    let setup = &config.setup;
    let crlb_value = setup.crlb()?.to_f64_lossy();
    let trial_root = config.stream.derive(purpose::TRIAL);
    let results: Vec<Result<TrialOutcome<T>>> = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(setup, i, &trial_root.derive(i as u64)))
        .collect();
    let (outcomes, failed) = collect_trials(results)?;
    let bias_reference = setup.retain_design.then(|| {
        (
            setup.design.full(),
            config.bias_norm,
            config.stream.derive(purpose::BOOTSTRAP),
            config.bootstrap_resamples,
        )
    });
    aggregate(outcomes, trials, failed, crlb_value, bias_reference)
}

/// `1 / kappa` of the traceless design columns (0 when rank deficient).
pub fn inverse_condition_number<T: Real>(design: &DesignMatrix<T>) -> Result<T> {
    let kappa = condition_number(&design.traceless())?;
    Ok(if kappa.is_finite() { kappa.recip() } else { T::zero() })
}

/// Square-root measurement of `m` Haar-random kets with its design matrix.
pub fn random_square_root_measurement<T: Real, R: Rng + ?Sized>(
    basis: &GeneratorBasis<T>,
    m: usize,
    rng: &mut R,
) -> Result<(Povm<T>, DesignMatrix<T>)> {
    let d = basis.dim();
    let kets: Vec<Ket<T>> = (0..m).map(|_| haar_pure(d, rng)).collect();
    let povm = square_root_povm(&kets, crate::matlin::default_rel_tol(d, d))?;
    let design = design_matrix(&povm, basis)?;
    Ok((povm, design))
}

/// Rejection-samples random square-root measurements until the inverse
/// condition number of the traceless design lands within `window` of
/// `target`.
pub fn sample_measurement_with_condition<T: Real, R: Rng + ?Sized>(
    basis: &GeneratorBasis<T>,
    m: usize,
    target_inv_cond: f64,
    window: f64,
    max_attempts: usize,
    rng: &mut R,
) -> Result<(Povm<T>, DesignMatrix<T>)> {
    if !(target_inv_cond > 0.0 && target_inv_cond < 1.0) {
        return Err(TomoError::invalid(format!("target 1/kappa {target_inv_cond} outside (0, 1)")));
    }
    if !(window > 0.0) {
        return Err(TomoError::invalid("window must be positive"));
    }
    let mut min_seen = f64::INFINITY;
    let mut max_seen = f64::NEG_INFINITY;
    for _ in 0..max_attempts {
        let (povm, design) = match random_square_root_measurement(basis, m, rng) {
            Ok(x) => x,
            Err(TomoError::DegenerateMeasurement { .. }) => continue,
            Err(e) => return Err(e),
        };
        let ic = inverse_condition_number(&design)?.to_f64_lossy();
        min_seen = min_seen.min(ic);
        max_seen = max_seen.max(ic);
        if (ic - target_inv_cond).abs() <= window {
            return Ok((povm, design));
        }
    }
    Err(TomoError::SamplingExhausted {
        attempts: max_attempts,
        min_seen,
        max_seen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::PatternMatrix;
    use crate::quantum::gell_mann_basis;
    use approx::assert_abs_diff_eq;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = RngStream::root(42);
        let a: Vec<u64> = (0..4).map(|_| 0).scan(s.derive(3).rng(), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(s.derive(3).rng(), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(s.derive(4).rng(), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(s.derive(1).derive(2), s.derive(2).derive(1));
    }

    #[test]
    fn zero_rate_outcome_never_fires() {
        let mut rng = RngStream::root(1).rng();
        let p = DVector::from_vec(vec![1.0, 0.0]);
        for _ in 0..50 {
            let f: DVector<f64> = sample_poisson_frequencies(&p, 100, &mut rng);
            assert_eq!(f[1], 0.0);
            assert!(((f[0] * 100.0).round() - f[0] * 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn law_of_large_numbers() {
        let mut rng = RngStream::root(2).rng();
        let p = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let n = 1_000_000u64;
        let f = sample_poisson_frequencies(&p, n, &mut rng);
        let bound = 5.0 * (0.5 / n as f64).sqrt();
        assert!((f - p).amax() <= bound);
    }

    #[test]
    fn poisson_frequency_moments() {
        // Oracle: E f_j = p_j, Var f_j = p_j / N.
        let mut rng = RngStream::root(3).rng();
        let p = DVector::from_vec(vec![0.1, 0.9]);
        let n = 50u64;
        let draws = 100_000;
        let samples: Vec<DVector<f64>> = (0..draws).map(|_| sample_poisson_frequencies(&p, n, &mut rng)).collect();
        for j in 0..2 {
            let xs: Vec<f64> = samples.iter().map(|f| f[j]).collect();
            let m = MeanSe::of(&xs);
            assert!((m.mean - p[j]).abs() < 3.0 * m.se, "mean {} vs {}", m.mean, p[j]);
            let var = xs.iter().map(|x| (x - m.mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let expected = p[j] / n as f64;
            // Var of the sample variance for Poisson/N^2: (mu + 2 mu^2)/N^4 per draw.
            let mu = p[j] * n as f64;
            let var_se = ((mu + 2.0 * mu * mu) / (draws as f64)).sqrt() / (n * n) as f64;
            assert!((var - expected).abs() < 3.0 * var_se, "var {var} vs {expected}");
        }
    }

    #[test]
    fn probe_set_properties() {
        let basis = gell_mann_basis::<f64>(3).unwrap();
        let (r, states) = generate_probe_set(&basis, 9, 0.0, &mut RngStream::root(5).rng()).unwrap();
        assert_eq!(states.len(), 9);
        assert_eq!(crate::matlin::numerical_rank(&r.traceless(), 1e-10).unwrap(), 8);
        let (again, _) = generate_probe_set(&basis, 9, 0.0, &mut RngStream::root(5).rng()).unwrap();
        assert_eq!(r, again);
        for a in 0..9 {
            assert_abs_diff_eq!(r.matrix()[(0, a)], 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        }

        let (mixed, _) = generate_probe_set(&basis, 4, 1.0, &mut RngStream::root(6).rng()).unwrap();
        assert!(mixed.traceless().amax() < 1e-15);
    }

    #[test]
    fn patterns_approach_born_probabilities() {
        let basis = gell_mann_basis::<f64>(2).unwrap();
        let mut rng = RngStream::root(7).rng();
        let (povm, design) = random_square_root_measurement(&basis, 5, &mut rng).unwrap();
        let (r, states) = generate_probe_set(&basis, 6, 0.0, &mut rng).unwrap();
        let f: PatternMatrix<f64> = generate_patterns(&povm, &states, 100_000_000, &mut rng).unwrap();
        assert!((f.matrix() - design.full() * r.matrix()).amax() < 1e-3);
    }

    #[test]
    fn condition_window_one_accepts_first_draw() {
        let basis = gell_mann_basis::<f64>(3).unwrap();
        let mut a = RngStream::root(9).rng();
        let mut b = RngStream::root(9).rng();
        let (_, accepted) = sample_measurement_with_condition(&basis, 12, 0.5, 1.0, 1, &mut a).unwrap();
        let (_, first) = random_square_root_measurement(&basis, 12, &mut b).unwrap();
        assert_eq!(accepted, first);
    }

    #[test]
    fn condition_sampling_exhaustion_reports_range() {
        let basis = gell_mann_basis::<f64>(3).unwrap();
        let err = sample_measurement_with_condition(&basis, 12, 0.999, 1e-4, 20, &mut RngStream::root(1).rng())
            .unwrap_err();
        match err {
            TomoError::SamplingExhausted {
                attempts,
                min_seen,
                max_seen,
            } => {
                assert_eq!(attempts, 20);
                assert!(min_seen <= max_seen && max_seen < 0.999);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn mean_se_of_constant_is_zero() {
        let m = MeanSe::of(&[2.5, 2.5]);
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.se, 0.0);
    }
}
