//! Dense real/complex matrix numerics: SVD pseudoinverse, condition numbers,
//! norms, and functional calculus on Hermitian PSD matrices.

use nalgebra::{ComplexField, DMatrix, SymmetricEigen, SVD};
use num_traits::Zero;

use crate::error::{Result, TomoError};
use crate::scalar::{Complex, Real};

pub type RealMatrix<T> = DMatrix<T>;
pub type ComplexMatrix<T> = DMatrix<Complex<T>>;

const MAX_SWEEPS: usize = 10_000;
const JACOBI_SWEEPS: usize = 100;

/// Relative tolerance used to validate Hermiticity of constructed inputs.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// `max(rows, cols) * eps`, the usual SVD rank cutoff.
pub fn default_rel_tol<T: Real>(rows: usize, cols: usize) -> T {
    T::from_count(rows.max(cols)) * T::machine_epsilon()
}

pub(crate) fn ensure_finite<N: ComplexField>(m: &DMatrix<N>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.clone().is_finite()) {
        Ok(())
    } else {
        Err(TomoError::invalid(format!("{what} has non-finite entries")))
    }
}

/// Thin SVD `m = u diag(sigma) v_t` with `sigma` in decreasing order.
struct Svd<N: ComplexField> {
    u: DMatrix<N>,
    sigma: Vec<N::RealField>,
    v_t: DMatrix<N>,
}

impl<N> Svd<N>
where
    N: ComplexField,
    N::RealField: Real,
{
    fn is_accurate(&self, m: &DMatrix<N>) -> bool {
        let k = self.sigma.len();
        let tol = N::RealField::from_count(64 * (m.nrows().max(m.ncols()) + 1)) * N::RealField::machine_epsilon();
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        let scale = m.norm();
        let recomposed = (us * &self.v_t - m).norm() <= tol * scale;
        let cutoff = tol * self.sigma.first().copied().unwrap_or(N::RealField::zero());
        let kept: Vec<usize> = (0..k).filter(|&j| self.sigma[j] > cutoff).collect();
        let orthonormal = kept.iter().all(|&i| {
            kept.iter().all(|&j| {
                let g = self.u.column(i).dotc(&self.u.column(j));
                let h = self.v_t.row(i).conjugate().dot(&self.v_t.row(j));
                let target = if i == j { N::one() } else { N::zero() };
                (g - target.clone()).modulus() <= tol && (h - target).modulus() <= tol
            })
        });
        recomposed && orthonormal
    }
}

fn nalgebra_svd<N>(m: &DMatrix<N>) -> Option<Svd<N>>
where
    N: ComplexField,
    N::RealField: Real,
{
    let d = SVD::try_new(
        m.clone(),
        true,
        true,
        N::RealField::machine_epsilon() * N::RealField::lit(5.0),
        MAX_SWEEPS,
    )?;
    Some(Svd {
        u: d.u?,
        sigma: d.singular_values.iter().copied().collect(),
        v_t: d.v_t?,
    })
}

/// One-sided (Hestenes) Jacobi SVD. Slower than bidiagonalization but
/// reliable on exactly rank-deficient input.
fn jacobi_svd<N>(m: &DMatrix<N>) -> Result<Svd<N>>
where
    N: ComplexField,
    N::RealField: Real,
{
    if m.nrows() < m.ncols() {
        let t = jacobi_svd(&m.adjoint())?;
        return Ok(Svd {
            u: t.v_t.adjoint(),
            sigma: t.sigma,
            v_t: t.u.adjoint(),
        });
    }
    let n = m.ncols();
    let eps = N::RealField::machine_epsilon();
    let mut w = m.clone();
    let mut v = DMatrix::<N>::identity(n, n);
    let mut converged = false;
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dotc(&w.column(q));
                let g = gamma.clone().modulus();
                if g == N::RealField::zero() || g <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotate the phase out of the off-diagonal, then a real rotation.
                let phase = gamma.unscale(g).conjugate();
                for mat in [&mut w, &mut v] {
                    for x in mat.column_mut(q).iter_mut() {
                        *x = x.clone() * phase.clone();
                    }
                }
                let zeta = (beta - alpha) / (g + g);
                let one = N::RealField::lit(1.0);
                let t = zeta.signum() / (zeta.abs() + (one + zeta * zeta).sqrt());
                let c = (one + t * t).sqrt().recip();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    let cp = mat.column(p).into_owned();
                    let cq = mat.column(q).into_owned();
                    mat.set_column(p, &(cp.scale(c) - cq.scale(s)));
                    mat.set_column(q, &(cp.scale(s) + cq.scale(c)));
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(TomoError::NumericalFailure("Jacobi SVD did not converge".into()));
    }
    let mut order: Vec<(N::RealField, usize)> = (0..n).map(|j| (w.column(j).norm(), j)).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite norms"));
    let mut u = DMatrix::<N>::zeros(m.nrows(), n);
    let mut v_t = DMatrix::<N>::zeros(n, n);
    for (k, &(s, j)) in order.iter().enumerate() {
        if s > N::RealField::zero() {
            u.set_column(k, &w.column(j).unscale(s));
        }
        v_t.set_row(k, &v.column(j).adjoint());
    }
    Ok(Svd {
        u,
        sigma: order.into_iter().map(|(s, _)| s).collect(),
        v_t,
    })
}

/// nalgebra's bidiagonal SVD, validated; it occasionally returns wrong
/// factors for exactly rank-deficient matrices, in which case the Jacobi
/// SVD is used instead.
fn svd<N>(m: &DMatrix<N>) -> Result<Svd<N>>
where
    N: ComplexField,
    N::RealField: Real,
{
    match nalgebra_svd(m) {
        Some(d) if d.is_accurate(m) => Ok(d),
        _ => {
            log::debug!("falling back to Jacobi SVD for a {}x{} matrix", m.nrows(), m.ncols());
            jacobi_svd(m)
        }
    }
}

/// Singular values of `m`, in decreasing order.
pub fn singular_values<N>(m: &DMatrix<N>) -> Result<Vec<N::RealField>>
where
    N: ComplexField,
    N::RealField: Real,
{
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    Ok(svd(m)?.sigma)
}

/// Moore-Penrose pseudoinverse via SVD.
///
/// Singular values below `rel_tol * sigma_max` are treated as zero. Works for
/// real and complex matrices (conjugate transpose in the complex case).
pub fn pseudoinverse<N>(m: &DMatrix<N>, rel_tol: N::RealField) -> Result<DMatrix<N>>
where
    N: ComplexField,
    N::RealField: Real,
{
    if m.is_empty() {
        return Err(TomoError::invalid("pseudoinverse of an empty matrix"));
    }
    ensure_finite(m, "matrix")?;
    if !(rel_tol >= N::RealField::zero()) {
        return Err(TomoError::invalid("rel_tol must be non-negative"));
    }
    let Svd { u, sigma, v_t } = svd(m)?;
    let sigma_max = sigma.iter().copied().fold(N::RealField::zero(), nalgebra::RealField::max);
    let cutoff = rel_tol * sigma_max;

    // M+ = V diag(1/s) U^H, restricted to the retained singular values.
    let mut out = DMatrix::<N>::zeros(m.ncols(), m.nrows());
    for (i, &s) in sigma.iter().enumerate() {
        if s <= cutoff || s == N::RealField::zero() {
            continue;
        }
        let inv = N::from_real(s.recip());
        let v_col = v_t.row(i).adjoint();
        let u_col = u.column(i);
        out.ger(inv, &v_col, &u_col.conjugate(), N::one());
    }
    Ok(out)
}

/// Pseudoinverse with the default cutoff `max(rows, cols) * eps`.
pub fn pinv<N>(m: &DMatrix<N>) -> Result<DMatrix<N>>
where
    N: ComplexField,
    N::RealField: Real,
{
    pseudoinverse(m, default_rel_tol(m.nrows(), m.ncols()))
}

/// `sigma_max / sigma_min`, or `+inf` when the matrix is rank deficient at
/// the default cutoff.
pub fn condition_number<N>(m: &DMatrix<N>) -> Result<N::RealField>
where
    N: ComplexField,
    N::RealField: Real,
{
    condition_number_with_tol(m, default_rel_tol(m.nrows(), m.ncols()))
}

pub fn condition_number_with_tol<N>(m: &DMatrix<N>, rel_tol: N::RealField) -> Result<N::RealField>
where
    N: ComplexField,
    N::RealField: Real,
{
    let s = singular_values(m)?;
    let (Some(&max), Some(&min)) = (s.first(), s.last()) else {
        return Err(TomoError::invalid("condition number of an empty matrix"));
    };
    if max == N::RealField::zero() {
        return Err(TomoError::invalid("condition number of the zero matrix"));
    }
    if min <= rel_tol * max {
        return Ok(<N::RealField as Real>::lit(f64::INFINITY));
    }
    Ok(max / min)
}

pub fn frobenius_norm<N>(m: &DMatrix<N>) -> N::RealField
where
    N: ComplexField,
{
    m.norm()
}

/// Sum of singular values (trace-class norm).
pub fn trace_norm<N>(m: &DMatrix<N>) -> Result<N::RealField>
where
    N: ComplexField,
    N::RealField: Real,
{
    Ok(singular_values(m)?
        .into_iter()
        .fold(N::RealField::zero(), |a, b| a + b))
}

/// Relative anti-Hermitian part `||H - H^H||_F / ||H||_F` (0 for the zero matrix).
pub fn hermiticity_defect<T: Real>(h: &ComplexMatrix<T>) -> T {
    let scale = h.norm();
    if scale == T::zero() {
        return T::zero();
    }
    (h - h.adjoint()).norm() / scale
}

pub(crate) fn ensure_hermitian<T: Real>(h: &ComplexMatrix<T>, tol: f64, what: &str) -> Result<()> {
    if !h.is_square() {
        return Err(TomoError::invalid(format!("{what} is not square")));
    }
    ensure_finite(h, what)?;
    let defect = hermiticity_defect(h);
    if defect > T::tol(tol) {
        return Err(TomoError::invalid(format!(
            "{what} is not Hermitian (relative defect {defect:e})"
        )));
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix, symmetrized first.
pub fn hermitian_eigen<T: Real>(h: &ComplexMatrix<T>) -> Result<SymmetricEigen<Complex<T>, nalgebra::Dyn>> {
    let sym = (h + h.adjoint()).scale(T::lit(0.5));
    SymmetricEigen::try_new(sym, T::machine_epsilon(), MAX_SWEEPS)
        .ok_or_else(|| TomoError::NumericalFailure("Hermitian eigensolver did not converge".into()))
}

/// Applies `f` to the spectrum of a Hermitian matrix: `V f(Lambda) V^H`.
pub fn hermitian_map<T: Real>(
    eig: &SymmetricEigen<Complex<T>, nalgebra::Dyn>,
    mut f: impl FnMut(T) -> T,
) -> ComplexMatrix<T> {
    let n = eig.eigenvalues.len();
    let mut out = ComplexMatrix::<T>::zeros(n, n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        let w = f(lambda);
        if w == T::zero() {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        out.ger(Complex::new(w, T::zero()), &v, &v.conjugate(), Complex::new(T::one(), T::zero()));
    }
    out
}

/// `H^{-1/2}` on the support of a Hermitian PSD matrix.
///
/// Eigenvalues below `rel_tol * lambda_max` map to zero, so the result times
/// `H` times the result is the projector onto the retained eigenspace.
pub fn inv_sqrt_psd<T: Real>(h: &ComplexMatrix<T>, rel_tol: T) -> Result<ComplexMatrix<T>> {
    ensure_hermitian(h, HERMITIAN_TOL, "matrix")?;
    let eig = hermitian_eigen(h)?;
    let lambda_max = eig.eigenvalues.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let neg_floor = -T::tol(HERMITIAN_TOL) * lambda_max.max(T::one());
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < neg_floor) {
        return Err(TomoError::invalid(format!(
            "matrix has a negative eigenvalue {bad:e}"
        )));
    }
    let cutoff = rel_tol * lambda_max;
    Ok(hermitian_map(&eig, |l| {
        if l > cutoff && l > T::zero() {
            l.sqrt().recip()
        } else {
            T::zero()
        }
    }))
}

/// Principal square root of a Hermitian PSD matrix; small negative
/// eigenvalues from rounding are clipped to zero.
pub fn sqrt_psd<T: Real>(h: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    let eig = hermitian_eigen(h)?;
    Ok(hermitian_map(&eig, |l| if l > T::zero() { l.sqrt() } else { T::zero() }))
}

/// `Tr(A B)` without forming the product.
pub fn trace_of_product<T: Real>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Complex<T> {
    let mut acc = Complex::new(T::zero(), T::zero());
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank<N>(m: &DMatrix<N>, rel_tol: N::RealField) -> Result<usize>
where
    N: ComplexField,
    N::RealField: Real,
{
    let s = singular_values(m)?;
    let Some(&max) = s.first() else {
        return Ok(0);
    };
    Ok(s.iter().filter(|&&x| x > rel_tol * max && x > N::RealField::zero()).count())
}
