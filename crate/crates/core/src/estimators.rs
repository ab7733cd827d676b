//! Linear-inversion estimators (OLS, GLS, detector-assisted QST, data-pattern
//! tomography) and the Poissonian Fisher information / Cramer-Rao bound.
//!
//! Everything works in the augmented `d^2`-coordinate system: column 0 of a
//! design matrix and row 0 of a probe matrix carry the identity component.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::matlin::{pinv, trace_of_product, RealMatrix};
use crate::quantum::{BlochVector, GeneratorBasis, Povm};
use crate::scalar::Real;

/// Probabilities at or below this value make the Fisher weights `1/p_j` unusable.
pub const P_FLOOR: f64 = 1e-12;

/// Linear inversion used for the final state-fitting step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Ols,
    Gls,
}

/// `A_jk = Re Tr(Pi_j Gamma_k)`, an `m x d^2` real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix<T: Real> {
    dim: usize,
    full: RealMatrix<T>,
}

impl<T: Real> DesignMatrix<T> {
    /// Wraps an explicit `m x d^2` matrix.
    pub fn from_full(full: RealMatrix<T>) -> Result<Self> {
        let n = full.ncols();
        let dim = (n as f64).sqrt().round() as usize;
        if dim < 2 || dim * dim != n || full.nrows() == 0 {
            return Err(TomoError::invalid(format!("design matrix has {n} columns, not d^2")));
        }
        Ok(DesignMatrix { dim, full })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> usize {
        self.full.nrows()
    }

    pub fn full(&self) -> &RealMatrix<T> {
        &self.full
    }

    /// Columns `1..d^2-1`.
    pub fn traceless(&self) -> RealMatrix<T> {
        self.full.columns(1, self.full.ncols() - 1).into_owned()
    }

    /// `A r` for an augmented coordinate vector.
    pub fn probabilities(&self, r: &BlochVector<T>) -> DVector<T> {
        &self.full * r.coords()
    }
}

pub fn design_matrix<T: Real>(povm: &Povm<T>, basis: &GeneratorBasis<T>) -> Result<DesignMatrix<T>> {
    if povm.dim() != basis.dim() {
        return Err(TomoError::invalid(format!(
            "POVM dimension {} vs basis dimension {}",
            povm.dim(),
            basis.dim()
        )));
    }
    let elements = povm.elements();
    let gammas = basis.elements();
    let full = DMatrix::from_fn(elements.len(), gammas.len(), |j, k| {
        trace_of_product(&elements[j], &gammas[k]).re
    });
    Ok(DesignMatrix {
        dim: basis.dim(),
        full,
    })
}

/// Augmented Bloch vectors of `M` known probe states as columns (`d^2 x M`).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeMatrix<T: Real> {
    matrix: RealMatrix<T>,
}

impl<T: Real> ProbeMatrix<T> {
    pub fn from_bloch_vectors(vectors: &[BlochVector<T>]) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(TomoError::invalid("probe set is empty"));
        };
        let rows = first.coords().len();
        if vectors.iter().any(|v| v.coords().len() != rows) {
            return Err(TomoError::invalid("probe Bloch vectors have mixed dimensions"));
        }
        let matrix = DMatrix::from_fn(rows, vectors.len(), |k, a| vectors[a].coords()[k]);
        Ok(ProbeMatrix { matrix })
    }

    pub fn from_matrix(matrix: RealMatrix<T>) -> Result<Self> {
        let n = matrix.nrows();
        let d = (n as f64).sqrt().round() as usize;
        if d < 2 || d * d != n || matrix.ncols() == 0 {
            return Err(TomoError::invalid("probe matrix must have d^2 rows and >= 1 column"));
        }
        Ok(ProbeMatrix { matrix })
    }

    pub fn matrix(&self) -> &RealMatrix<T> {
        &self.matrix
    }

    pub fn probes(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn dim(&self) -> usize {
        (self.matrix.nrows() as f64).sqrt().round() as usize
    }

    pub fn traceless(&self) -> RealMatrix<T> {
        self.matrix.rows(1, self.matrix.nrows() - 1).into_owned()
    }

    /// Keeps the first `count` probes.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.probes() {
            return Err(TomoError::invalid(format!("cannot keep {count} of {} probes", self.probes())));
        }
        Ok(ProbeMatrix {
            matrix: self.matrix.columns(0, count).into_owned(),
        })
    }
}

/// Measured frequency vectors ("patterns") of the probes, one per column (`m x M`).
#[derive(Clone, Debug, PartialEq)]
pub struct PatternMatrix<T: Real> {
    matrix: RealMatrix<T>,
}

impl<T: Real> PatternMatrix<T> {
    pub fn new(matrix: RealMatrix<T>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(TomoError::invalid("pattern matrix is empty"));
        }
        if matrix.iter().any(|&x| !x.is_finite() || x < T::zero()) {
            return Err(TomoError::invalid("pattern frequencies must be finite and non-negative"));
        }
        Ok(PatternMatrix { matrix })
    }

    pub fn matrix(&self) -> &RealMatrix<T> {
        &self.matrix
    }

    pub fn outcomes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn probes(&self) -> usize {
        self.matrix.ncols()
    }
}

fn ensure_len(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(TomoError::invalid(format!("{what}: expected length {expected}, got {got}")))
    }
}

/// `A^+ f`
pub fn ols<T: Real>(a: &RealMatrix<T>, f: &DVector<T>) -> Result<DVector<T>> {
    ensure_len(a.nrows(), f.len(), "frequency vector")?;
    Ok(pinv(a)? * f)
}

/// `(C^{-1} A)^+ C^{-1} f` with `cov = C C^T` (Cholesky factor).
pub fn gls<T: Real>(a: &RealMatrix<T>, f: &DVector<T>, cov: &RealMatrix<T>) -> Result<DVector<T>> {
    ensure_len(a.nrows(), f.len(), "frequency vector")?;
    if cov.shape() != (f.len(), f.len()) {
        return Err(TomoError::invalid("covariance shape does not match data"));
    }
    let asym = (cov - cov.transpose()).norm();
    if asym > T::tol(1e-10) * cov.norm().max(T::one()) {
        return Err(TomoError::invalid("covariance is not symmetric"));
    }
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| TomoError::invalid("covariance is not positive definite"))?;
    let l = chol.l();
    let whitened_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| TomoError::invalid("singular covariance factor"))?;
    let whitened_f = l
        .solve_lower_triangular(f)
        .ok_or_else(|| TomoError::invalid("singular covariance factor"))?;
    Ok(pinv(&whitened_a)? * whitened_f)
}

/// Plug-in Poisson covariance `diag(max(f_j, 1/(10N))) / N`.
pub fn poisson_covariance<T: Real>(f: &DVector<T>, n_events: u64) -> RealMatrix<T> {
    let n = T::lit(n_events as f64);
    let floor = (T::lit(10.0) * n).recip();
    DMatrix::from_diagonal(&f.map(|x| x.max(floor) / n))
}

/// Solves `a r = f` with the chosen linear inversion.
pub fn invert<T: Real>(a: &RealMatrix<T>, f: &DVector<T>, estimator: Estimator, n_events: u64) -> Result<DVector<T>> {
    match estimator {
        Estimator::Ols => ols(a, f),
        Estimator::Gls => gls(a, f, &poisson_covariance(f, n_events)),
    }
}

fn ensure_probe_counts<T: Real>(f_mat: &PatternMatrix<T>, r_mat: &ProbeMatrix<T>) -> Result<()> {
    if f_mat.probes() != r_mat.probes() {
        return Err(TomoError::invalid(format!(
            "{} patterns for {} probes",
            f_mat.probes(),
            r_mat.probes()
        )));
    }
    Ok(())
}

/// Detector tomography: `A_s = F R^+`.
pub fn qdt<T: Real>(f_mat: &PatternMatrix<T>, r_mat: &ProbeMatrix<T>) -> Result<RealMatrix<T>> {
    ensure_probe_counts(f_mat, r_mat)?;
    Ok(f_mat.matrix() * pinv(r_mat.matrix())?)
}

/// Detector-assisted QST with OLS: `(F R^+)^+ f`.
pub fn dqst_estimate<T: Real>(
    f_mat: &PatternMatrix<T>,
    r_mat: &ProbeMatrix<T>,
    f: &DVector<T>,
) -> Result<DVector<T>> {
    dqst_estimate_with(f_mat, r_mat, f, Estimator::Ols, 1)
}

/// Detector-assisted QST with a selectable final inversion.
pub fn dqst_estimate_with<T: Real>(
    f_mat: &PatternMatrix<T>,
    r_mat: &ProbeMatrix<T>,
    f: &DVector<T>,
    estimator: Estimator,
    n_events: u64,
) -> Result<DVector<T>> {
    ensure_len(f_mat.outcomes(), f.len(), "frequency vector")?;
    let a_s = qdt(f_mat, r_mat)?;
    invert(&a_s, f, estimator, n_events)
}

/// Minimum-norm least-squares fit `x = F^+ f` of the data by the patterns.
pub fn dpt_coefficients<T: Real>(f_mat: &PatternMatrix<T>, f: &DVector<T>) -> Result<DVector<T>> {
    ols(f_mat.matrix(), f)
}

/// Data-pattern estimate `R F^+ f`.
pub fn dpt_estimate<T: Real>(
    r_mat: &ProbeMatrix<T>,
    f_mat: &PatternMatrix<T>,
    f: &DVector<T>,
) -> Result<DVector<T>> {
    dpt_estimate_with(r_mat, f_mat, f, Estimator::Ols, 1)
}

/// Data-pattern estimate with a selectable fit. When there are fewer
/// outcomes than probes the fit is underdetermined and GLS equals OLS.
pub fn dpt_estimate_with<T: Real>(
    r_mat: &ProbeMatrix<T>,
    f_mat: &PatternMatrix<T>,
    f: &DVector<T>,
    estimator: Estimator,
    n_events: u64,
) -> Result<DVector<T>> {
    ensure_probe_counts(f_mat, r_mat)?;
    let x = invert(f_mat.matrix(), f, estimator, n_events)?;
    Ok(r_mat.matrix() * x)
}

/// Effective measurement matrix of data-pattern tomography, `(R F^+)^+`.
pub fn effective_dpt_design<T: Real>(r_mat: &ProbeMatrix<T>, f_mat: &PatternMatrix<T>) -> Result<RealMatrix<T>> {
    ensure_probe_counts(f_mat, r_mat)?;
    pinv(&(r_mat.matrix() * pinv(f_mat.matrix())?))
}

/// Fisher information of product-Poisson counts, over the traceless
/// coordinates. Stored per event so that scaling by `N` is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherMatrix<T: Real> {
    per_event: RealMatrix<T>,
    n_events: u64,
}

impl<T: Real> FisherMatrix<T> {
    /// `N A^T diag(1/p) A` on the traceless columns.
    pub fn matrix(&self) -> RealMatrix<T> {
        self.per_event.scale(T::lit(self.n_events as f64))
    }

    pub fn per_event(&self) -> &RealMatrix<T> {
        &self.per_event
    }

    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    /// Number of free parameters, `d^2 - 1`.
    pub fn parameters(&self) -> usize {
        self.per_event.nrows()
    }

    pub fn with_events(&self, n_events: u64) -> Self {
        FisherMatrix {
            per_event: self.per_event.clone(),
            n_events,
        }
    }
}

pub fn fisher_matrix<T: Real>(a: &DesignMatrix<T>, p: &DVector<T>, n_events: u64) -> Result<FisherMatrix<T>> {
    ensure_len(a.outcomes(), p.len(), "probability vector")?;
    if n_events == 0 {
        return Err(TomoError::invalid("event budget must be positive"));
    }
    let floor = T::lit(P_FLOOR);
    if let Some((j, &pj)) = p.iter().enumerate().find(|(_, &pj)| !(pj > floor)) {
        return Err(TomoError::SingularStatistics {
            outcome: j,
            probability: pj.to_f64_lossy(),
        });
    }
    let at = a.traceless();
    let mut weighted = at.clone();
    for (j, &pj) in p.iter().enumerate() {
        weighted.row_mut(j).unscale_mut(pj);
    }
    let mut per_event = at.transpose() * weighted;
    // Exact symmetry.
    let n = per_event.nrows();
    for i in 0..n {
        for k in i + 1..n {
            let v = (per_event[(i, k)] + per_event[(k, i)]) * T::lit(0.5);
            per_event[(i, k)] = v;
            per_event[(k, i)] = v;
        }
    }
    Ok(FisherMatrix { per_event, n_events })
}

/// `Tr(F^{-1})`. Refuses singular Fisher matrices instead of pseudoinverting.
pub fn crlb<T: Real>(fisher: &FisherMatrix<T>) -> Result<T> {
    let m = fisher.per_event();
    let scale = m.diagonal().iter().copied().fold(T::zero(), |a, b| a.max(b));
    if !(scale > T::zero()) {
        return Err(TomoError::InformationallyIncomplete);
    }
    let chol = Cholesky::new(m.clone()).ok_or(TomoError::InformationallyIncomplete)?;
    // A Cholesky factor exists for numerically singular matrices too; reject
    // pivots that vanish relative to the largest diagonal entry.
    let l = chol.l_dirty();
    let min_pivot = (0..m.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(scale, |a, b| a.min(b));
    if min_pivot <= scale * T::tol(1e-13) {
        return Err(TomoError::InformationallyIncomplete);
    }
    let inverse = chol.inverse();
    Ok(inverse.trace() / T::lit(fisher.n_events() as f64))
}
