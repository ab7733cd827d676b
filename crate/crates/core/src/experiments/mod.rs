//! Figure-level experiments: `(N, M)` sweeps on one fixed setup (fig1,
//! fig2, custom) and condition-number bins over fresh setups (fig3).

mod config;
mod output;
pub mod plot;
mod table;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind, DEFAULT_SEED, DESK_TRIALS, FULL_SCALE_TRIALS, META_ONLY_KEYS};
pub use output::{charts, version_string, write_results, RunMeta};
pub use table::{format_sig12, round_sig12, ResultRow, ResultTable, CSV_HEADER};

use crate::error::{Result, TomoError};
use crate::estimators::DesignMatrix;
use crate::quantum::{depolarize, gell_mann_basis, haar_pure, DensityMatrix, GeneratorBasis, Povm};
use crate::simulation::{
    aggregate, collect_trials, generate_probe_set, inverse_condition_number, monte_carlo, purpose,
    random_square_root_measurement, run_trial, sample_measurement_with_condition, AggregateResult, MeanSe,
    MonteCarloConfig, RngStream, TrialOutcome, TrialSetup,
};

/// The measurement and true state shared by every point of a sweep.
#[derive(Clone, Debug)]
pub struct FixedSetup {
    pub basis: GeneratorBasis<f64>,
    pub povm: Povm<f64>,
    pub design: DesignMatrix<f64>,
    pub true_state: DensityMatrix<f64>,
}

fn draw_true_state<R: rand::Rng + ?Sized>(d: usize, admixture: f64, rng: &mut R) -> Result<DensityMatrix<f64>> {
    depolarize(&DensityMatrix::from_ket(&haar_pure(d, rng)), admixture)
}

/// Draws the fixed measurement and true state from `master_seed`. Fig1 and
/// fig2 with equal `d`, `m` and seed get the same measurement.
pub fn fixed_setup(config: &ExperimentConfig) -> Result<FixedSetup> {
    let basis = gell_mann_basis(config.d)?;
    let root = RngStream::root(config.master_seed);
    let mut rng = root.derive(purpose::MEASUREMENT).rng();
    let (povm, design) = loop {
        match random_square_root_measurement(&basis, config.m, &mut rng) {
            Err(TomoError::DegenerateMeasurement { .. }) => continue,
            other => break other?,
        }
    };
    let true_state = draw_true_state(config.d, config.admixture_signal, &mut root.derive(purpose::TRUE_STATE).rng())?;
    Ok(FixedSetup {
        basis,
        povm,
        design,
        true_state,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n_events: u64,
    pub probes: usize,
    pub result: AggregateResult,
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub setup: FixedSetup,
    /// Row-major over `N_grid` then `M_grid`.
    pub points: Vec<SweepPoint>,
}

/// Monte Carlo at every `(N, M)` of the grid. Probe sets depend on `M` only,
/// so all `N` panels see the same probes.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepRun> {
    config.validate()?;
    let setup = fixed_setup(config)?;
    let root = RngStream::root(config.master_seed);
    let grid: Vec<(u64, usize)> = config
        .event_grid
        .iter()
        .flat_map(|&n| config.probe_grid.iter().map(move |&m| (n, m)))
        .collect();
    let points = grid
        .par_iter()
        .map(|&(n, m)| {
            let mut rng = root.derive(purpose::PROBES).derive(m as u64).rng();
            let (_, probe_states) = generate_probe_set(&setup.basis, m, config.admixture_probes, &mut rng)?;
            let mut trial =
                TrialSetup::new(setup.basis.clone(), setup.povm.clone(), setup.true_state.clone(), &probe_states, n)?;
            trial.pattern_events = config.pattern_events_for(n);
            trial.estimator = config.estimator;
            trial.fidelity = config.fidelity;
            trial.retain_design = true;
            let stream = root.derive(purpose::SWEEP_POINT).derive(n).derive(m as u64);
            let mut mc = MonteCarloConfig::new(trial, stream);
            mc.bias_norm = config.bias_norm;
            mc.bootstrap_resamples = config.bootstrap_resamples;
            let result = monte_carlo(&mc, config.trials)?;
            log::info!(
                "N={n} M={m}: mse dqst {:.4e} dpt {:.4e} crlb {:.4e}",
                result.mse_dqst.mean,
                result.mse_dpt.mean,
                result.crlb
            );
            Ok(SweepPoint {
                n_events: n,
                probes: m,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepRun { setup, points })
}

impl SweepRun {
    pub fn table(&self, kind: ExperimentKind) -> ResultTable {
        ResultTable::new(
            self.points
                .iter()
                .map(|p| row_from(kind, "M", p.probes as f64, p.n_events, p.probes, &p.result))
                .collect(),
        )
    }

    pub fn point(&self, n_events: u64, probes: usize) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.n_events == n_events && p.probes == probes)
    }
}

fn row_from(kind: ExperimentKind, coord: &str, value: f64, n: u64, m: usize, r: &AggregateResult) -> ResultRow {
    ResultRow {
        sweep_kind: kind.as_str().to_owned(),
        coord_name: coord.to_owned(),
        coord_value: value,
        n_events: n,
        probes: m,
        mse_dqst: r.mse_dqst.mean,
        mse_dqst_se: r.mse_dqst.se,
        mse_dpt: r.mse_dpt.mean,
        mse_dpt_se: r.mse_dpt.se,
        crlb: r.crlb,
        fid_dqst: r.fidelity_dqst.mean,
        fid_dpt: r.fidelity_dpt.mean,
        bias: r.bias.map_or(f64::NAN, |b| b.value),
        trials_used: r.trials_used,
    }
}

fn unavailable_row(kind: ExperimentKind, coord: &str, value: f64, n: u64, m: usize) -> ResultRow {
    ResultRow {
        sweep_kind: kind.as_str().to_owned(),
        coord_name: coord.to_owned(),
        coord_value: value,
        n_events: n,
        probes: m,
        mse_dqst: f64::NAN,
        mse_dqst_se: f64::NAN,
        mse_dpt: f64::NAN,
        mse_dpt_se: f64::NAN,
        crlb: f64::NAN,
        fid_dqst: f64::NAN,
        fid_dpt: f64::NAN,
        bias: f64::NAN,
        trials_used: 0,
    }
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.kind == kind {
        Ok(())
    } else {
        Err(TomoError::Config(format!(
            "expected a {} config, got {}",
            kind.as_str(),
            config.kind.as_str()
        )))
    }
}

pub fn run_fig1(config: &ExperimentConfig) -> Result<ResultTable> {
    expect_kind(config, ExperimentKind::Fig1)?;
    Ok(run_sweep(config)?.table(ExperimentKind::Fig1))
}

pub fn run_fig2(config: &ExperimentConfig) -> Result<ResultTable> {
    expect_kind(config, ExperimentKind::Fig2)?;
    Ok(run_sweep(config)?.table(ExperimentKind::Fig2))
}

pub fn run_fig3(config: &ExperimentConfig) -> Result<ResultTable> {
    expect_kind(config, ExperimentKind::Fig3)?;
    Ok(run_fig3_bins(config)?.table())
}

/// Inverse condition numbers of `draws` unconditioned measurements.
pub fn prepass_inverse_conditions(basis: &GeneratorBasis<f64>, m: usize, draws: usize, master_seed: u64) -> Result<Vec<f64>> {
    let root = RngStream::root(master_seed).derive(purpose::PREPASS);
    let mut out: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.derive(i as u64).rng();
            loop {
                match random_square_root_measurement(basis, m, &mut rng) {
                    Err(TomoError::DegenerateMeasurement { .. }) => continue,
                    other => return inverse_condition_number(&other?.1),
                }
            }
        })
        .collect::<Result<_>>()?;
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Linear interpolation between order statistics of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Evenly spaced bin centres between the 5th and 95th percentiles.
pub fn auto_inv_cond_grid(sorted: &[f64], bins: usize) -> Vec<f64> {
    let lo = percentile(sorted, 0.05);
    let hi = percentile(sorted, 0.95);
    if bins == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..bins)
        .map(|b| lo + (hi - lo) * b as f64 / (bins - 1) as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fig3Bin {
    pub target: f64,
    pub n_events: u64,
    pub probes: usize,
    /// `1/kappa` of each accepted measurement, in trial order.
    pub accepted_inv_cond: Vec<f64>,
    /// `None` when rejection sampling was exhausted.
    pub result: Option<AggregateResult>,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Fig3Run {
    pub targets: Vec<f64>,
    pub bins: Vec<Fig3Bin>,
    pub diagnostics: Vec<String>,
}

impl Fig3Run {
    pub fn table(&self) -> ResultTable {
        ResultTable::new(
            self.bins
                .iter()
                .map(|b| match &b.result {
                    Some(r) => row_from(ExperimentKind::Fig3, "inv_cond", b.target, b.n_events, b.probes, r),
                    None => unavailable_row(ExperimentKind::Fig3, "inv_cond", b.target, b.n_events, b.probes),
                })
                .collect(),
        )
    }
}

struct ConditionedSample {
    outcome: TrialOutcome<f64>,
    inv_cond: f64,
    crlb: f64,
}

fn conditioned_sample(
    config: &ExperimentConfig,
    basis: &GeneratorBasis<f64>,
    target: f64,
    n: u64,
    m: usize,
    index: usize,
    stream: &RngStream,
) -> Result<ConditionedSample> {
    let (povm, design) = sample_measurement_with_condition(
        basis,
        config.m,
        target,
        config.window,
        config.max_attempts,
        &mut stream.derive(purpose::MEASUREMENT).rng(),
    )?;
    let inv_cond = inverse_condition_number(&design)?;
    let true_state = draw_true_state(config.d, config.admixture_signal, &mut stream.derive(purpose::TRUE_STATE).rng())?;
    let (_, probes) = generate_probe_set(basis, m, config.admixture_probes, &mut stream.derive(purpose::PROBES).rng())?;
    let mut setup = TrialSetup::new(basis.clone(), povm, true_state, &probes, n)?;
    setup.pattern_events = config.pattern_events_for(n);
    setup.estimator = config.estimator;
    setup.fidelity = config.fidelity;
    let crlb = setup.crlb().map_err(|e| TomoError::TrialFailed {
        trial: index,
        source: Box::new(e),
    })?;
    let outcome = run_trial(&setup, index, &stream.derive(purpose::TRIAL))?;
    Ok(ConditionedSample { outcome, inv_cond, crlb })
}

fn exhausted(e: &TomoError) -> bool {
    matches!(e, TomoError::SamplingExhausted { .. })
}

fn run_bin(config: &ExperimentConfig, basis: &GeneratorBasis<f64>, target: f64, n: u64, m: usize, stream: &RngStream) -> Result<Fig3Bin> {
    let mut bin = Fig3Bin {
        target,
        n_events: n,
        probes: m,
        accepted_inv_cond: Vec::new(),
        result: None,
        diagnostic: None,
    };
    let sample = |k: usize| conditioned_sample(config, basis, target, n, m, k, &stream.derive(k as u64));
    // A hopeless target is detected from the first measurement alone.
    let first = sample(0);
    let mut results = vec![first];
    if !matches!(&results[0], Err(e) if exhausted(e)) {
        results.extend((1..config.trials).into_par_iter().map(sample).collect::<Vec<_>>());
    }
    if let Some(Err(e)) = results.iter().find(|r| matches!(r, Err(e) if exhausted(e))) {
        let msg = format!("fig3 bin 1/kappa={target:.6} (N={n}, M={m}) unavailable: {e}");
        log::warn!("{msg}");
        bin.diagnostic = Some(msg);
        return Ok(bin);
    }
    let mut extras = vec![(f64::NAN, f64::NAN); config.trials];
    let outcomes = results
        .into_iter()
        .map(|r| {
            r.map(|s| {
                extras[s.outcome.index] = (s.inv_cond, s.crlb);
                s.outcome
            })
        })
        .collect();
    let (outcomes, failed) = collect_trials(outcomes)?;
    let mut used: Vec<usize> = outcomes.iter().map(|o| o.index).collect();
    used.sort_unstable();
    bin.accepted_inv_cond = used.iter().map(|&i| extras[i].0).collect();
    let crlb = MeanSe::of(&used.iter().map(|&i| extras[i].1).collect::<Vec<_>>()).mean;
    bin.result = Some(aggregate(outcomes, config.trials, failed, crlb, None)?);
    Ok(bin)
}

/// Fig3 with per-bin detail. Every accepted measurement gets a fresh true
/// state and probe set and contributes one trial. Bins run in order; the
/// measurements within a bin run in parallel.
pub fn run_fig3_bins(config: &ExperimentConfig) -> Result<Fig3Run> {
    config.validate()?;
    let basis = gell_mann_basis(config.d)?;
    let mut diagnostics = Vec::new();
    let targets = if config.inv_cond_grid.is_empty() {
        let pre = prepass_inverse_conditions(&basis, config.m, config.prepass_draws, config.master_seed)?;
        let grid = auto_inv_cond_grid(&pre, config.inv_cond_bins);
        diagnostics.push(format!(
            "pre-pass of {} draws: 1/kappa in [{:.6}, {:.6}], bins at {:?}",
            pre.len(),
            pre[0],
            pre[pre.len() - 1],
            grid.iter().map(|&g| round_sig12(g)).collect::<Vec<_>>()
        ));
        grid
    } else {
        config.inv_cond_grid.clone()
    };
    let root = RngStream::root(config.master_seed).derive(purpose::CONDITIONED);
    let mut bins = Vec::new();
    for &n in &config.event_grid {
        for &m in &config.probe_grid {
            for (b, &target) in targets.iter().enumerate() {
                let stream = root.derive(n).derive(m as u64).derive(b as u64);
                let bin = run_bin(config, &basis, target, n, m, &stream)?;
                if let Some(msg) = &bin.diagnostic {
                    diagnostics.push(msg.clone());
                }
                bins.push(bin);
            }
        }
    }
    Ok(Fig3Run {
        targets,
        bins,
        diagnostics,
    })
}

/// A finished run, ready for [`write_results`].
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub diagnostics: Vec<String>,
    pub elapsed_seconds: f64,
}

/// Runs the experiment selected by `config.kind` on the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let (table, diagnostics) = match config.kind {
        ExperimentKind::Fig3 => {
            let run = run_fig3_bins(config)?;
            (run.table(), run.diagnostics)
        }
        kind => (run_sweep(config)?.table(kind), Vec::new()),
    };
    Ok(ExperimentOutput {
        table,
        diagnostics,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults_for(kind);
        c.d = 2;
        c.m = 4;
        c.probe_grid = vec![4, 8];
        c.event_grid = vec![200, 400];
        c.trials = 20;
        c.bootstrap_resamples = 20;
        c.master_seed = 11;
        c.prepass_draws = 50;
        c.inv_cond_bins = 2;
        c.window = 0.05;
        c.max_attempts = 2000;
        c
    }

    #[test]
    fn sweep_has_one_row_per_grid_point_and_constant_crlb_per_n() {
        let t = run_fig1(&small(ExperimentKind::Fig1)).unwrap();
        assert_eq!(t.len(), 4);
        for n in [200, 400] {
            let c: Vec<f64> = t.rows.iter().filter(|r| r.n_events == n).map(|r| r.crlb).collect();
            assert_eq!(c[0], c[1]);
        }
        assert!(t.rows.iter().all(|r| r.trials_used == 20 && r.bias.is_finite()));
    }

    #[test]
    fn fig1_and_fig2_share_the_measurement() {
        let a = fixed_setup(&small(ExperimentKind::Fig1)).unwrap();
        let b = fixed_setup(&small(ExperimentKind::Fig2)).unwrap();
        assert_eq!(a.design.full(), b.design.full());
        assert_eq!(a.true_state.matrix(), b.true_state.matrix());
    }

    #[test]
    fn wrong_kind_is_rejected() {
        assert!(run_fig2(&small(ExperimentKind::Fig1)).is_err());
    }

    #[test]
    fn fig3_accepts_within_window_and_flags_hopeless_bins() {
        let mut c = small(ExperimentKind::Fig3);
        c.probe_grid = vec![8];
        c.event_grid = vec![500];
        let run = run_fig3_bins(&c).unwrap();
        assert_eq!(run.bins.len(), 2);
        for bin in &run.bins {
            assert!(bin.accepted_inv_cond.iter().all(|ic| (ic - bin.target).abs() <= c.window));
        }

        c.inv_cond_grid = vec![0.999];
        c.max_attempts = 20;
        let run = run_fig3_bins(&c).unwrap();
        assert!(run.bins[0].result.is_none());
        let row = &run.table().rows[0];
        assert!(row.mse_dqst.is_nan() && row.trials_used == 0);
        assert_eq!(run.diagnostics.len(), 1);
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.05), 0.2);
        let g = auto_inv_cond_grid(&v, 3);
        assert_eq!(g.len(), 3);
        assert!((g[2] - 3.8).abs() < 1e-12);
    }
}
