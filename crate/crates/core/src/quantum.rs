//! States, measurements and the operator basis used to coordinatize them.
//!
//! Every Hermitian operator on a `d`-dimensional space is expanded in the
//! orthonormal basis `Gamma_0 = I/sqrt(d), Gamma_1, ..., Gamma_{d^2-1}`,
//! where the `Gamma_k` for `k >= 1` are the normalized generalized Gell-Mann
//! matrices. Keeping the identity component at index 0 makes `p = A r` an
//! exact linear identity.

use nalgebra::{ComplexField, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TomoError};
use crate::matlin::{
    ensure_hermitian, hermitian_eigen, hermitian_map, inv_sqrt_psd, numerical_rank, sqrt_psd,
    trace_of_product, ComplexMatrix, HERMITIAN_TOL,
};
use crate::scalar::{Complex, Real};

fn c<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

fn identity<T: Real>(d: usize) -> ComplexMatrix<T> {
    ComplexMatrix::identity(d, d)
}

/// Orthonormal Hermitian operator basis, identity component first.
///
/// Ordering: `I/sqrt(d)`, then the symmetric pairs `(j, k)` with `j < k` in
/// lexicographic order, then the antisymmetric pairs in the same order, then
/// the `d - 1` diagonal generators. Every element satisfies
/// `Tr(Gamma_k Gamma_l) = delta_kl`.
#[derive(Clone, Debug)]
pub struct GeneratorBasis<T: Real> {
    dim: usize,
    elements: Vec<ComplexMatrix<T>>,
}

/// Builds the generalized Gell-Mann basis for dimension `d >= 2`.
pub fn gell_mann_basis<T: Real>(d: usize) -> Result<GeneratorBasis<T>> {
    if d < 2 {
        return Err(TomoError::invalid(format!("basis dimension must be >= 2, got {d}")));
    }
    let zero = T::zero();
    let inv_sqrt2 = T::lit(0.5).sqrt();
    let mut elements = Vec::with_capacity(d * d);
    elements.push(identity::<T>(d).scale(T::from_count(d).sqrt().recip()));

    for j in 0..d {
        for k in j + 1..d {
            let mut g = ComplexMatrix::zeros(d, d);
            g[(j, k)] = c(inv_sqrt2, zero);
            g[(k, j)] = c(inv_sqrt2, zero);
            elements.push(g);
        }
    }
    for j in 0..d {
        for k in j + 1..d {
            let mut g = ComplexMatrix::zeros(d, d);
            g[(j, k)] = c(zero, -inv_sqrt2);
            g[(k, j)] = c(zero, inv_sqrt2);
            elements.push(g);
        }
    }
    for l in 1..d {
        let norm = T::from_count(l * (l + 1)).sqrt().recip();
        let mut g = ComplexMatrix::zeros(d, d);
        for j in 0..l {
            g[(j, j)] = c(norm, zero);
        }
        g[(l, l)] = c(-T::from_count(l) * norm, zero);
        elements.push(g);
    }
    debug_assert_eq!(elements.len(), d * d);
    Ok(GeneratorBasis { dim: d, elements })
}

impl<T: Real> GeneratorBasis<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of elements including the identity component, `d^2`.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[ComplexMatrix<T>] {
        &self.elements
    }

    pub fn gamma0(&self) -> &ComplexMatrix<T> {
        &self.elements[0]
    }

    /// The `d^2 - 1` traceless generators.
    pub fn traceless(&self) -> &[ComplexMatrix<T>] {
        &self.elements[1..]
    }

    /// `Re Tr(H Gamma_k)` for every `k`.
    pub fn coordinates(&self, h: &ComplexMatrix<T>) -> DVector<T> {
        DVector::from_iterator(
            self.len(),
            self.elements.iter().map(|g| trace_of_product(h, g).re),
        )
    }

    /// `sum_k coords[k] Gamma_k`.
    pub fn expand(&self, coords: &DVector<T>) -> ComplexMatrix<T> {
        let mut out = ComplexMatrix::zeros(self.dim, self.dim);
        for (g, &x) in self.elements.iter().zip(coords.iter()) {
            out += g.scale(x);
        }
        out
    }
}

/// Normalized pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket<T: Real> {
    amplitudes: DVector<Complex<T>>,
}

impl<T: Real> Ket<T> {
    /// Normalizes `amplitudes`; fails on the zero vector.
    pub fn new(amplitudes: DVector<Complex<T>>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > T::zero()) || amplitudes.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(TomoError::invalid("ket must be finite and nonzero"));
        }
        Ok(Ket {
            amplitudes: amplitudes.unscale(norm),
        })
    }

    /// Computational basis vector `|j>` of dimension `d`.
    pub fn basis(d: usize, j: usize) -> Self {
        let mut v = DVector::zeros(d);
        v[j] = c(T::one(), T::zero());
        Ket { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex<T>> {
        &self.amplitudes
    }

    /// `|psi><psi|`
    pub fn projector(&self) -> ComplexMatrix<T> {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// Haar-random pure state: a normalized vector of i.i.d. standard complex
/// Gaussians.
pub fn haar_pure<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> Ket<T> {
    loop {
        let v = DVector::from_fn(d, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(T::lit(re), T::lit(im))
        });
        if let Ok(k) = Ket::new(v) {
            return k;
        }
    }
}

/// Hermitian, unit-trace, positive semidefinite `d x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix<T: Real> {
    matrix: ComplexMatrix<T>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn new(matrix: ComplexMatrix<T>) -> Result<Self> {
        ensure_hermitian(&matrix, HERMITIAN_TOL, "density matrix")?;
        let tol = T::tol(HERMITIAN_TOL);
        let trace = matrix.trace();
        if (trace.re - T::one()).abs() > tol || trace.im.abs() > tol {
            return Err(TomoError::invalid(format!(
                "density matrix trace is {}, expected 1",
                trace
            )));
        }
        let eig = hermitian_eigen(&matrix)?;
        if let Some(&l) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
            return Err(TomoError::invalid(format!(
                "density matrix has negative eigenvalue {l:e}"
            )));
        }
        Ok(DensityMatrix { matrix })
    }

    pub fn from_ket(ket: &Ket<T>) -> Self {
        DensityMatrix {
            matrix: ket.projector(),
        }
    }

    pub fn maximally_mixed(d: usize) -> Self {
        DensityMatrix {
            matrix: identity::<T>(d).unscale(T::from_count(d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix<T> {
        self.matrix
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<T>> {
        let mut ev: Vec<T> = hermitian_eigen(&self.matrix)?.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        Ok(ev)
    }

    /// `U rho U^H`
    pub fn conjugated_by(&self, u: &ComplexMatrix<T>) -> Self {
        DensityMatrix {
            matrix: u * &self.matrix * u.adjoint(),
        }
    }
}

/// `(1 - lambda) rho + lambda I/d`.
pub fn depolarize<T: Real>(rho: &DensityMatrix<T>, lambda: T) -> Result<DensityMatrix<T>> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(TomoError::invalid(format!("admixture {lambda} outside [0, 1]")));
    }
    let d = rho.dim();
    let mixed = identity::<T>(d).scale(lambda / T::from_count(d));
    Ok(DensityMatrix {
        matrix: rho.matrix.scale(T::one() - lambda) + mixed,
    })
}

/// Positive operator-valued measure: PSD elements summing to the identity.
#[derive(Clone, Debug)]
pub struct Povm<T: Real> {
    dim: usize,
    elements: Vec<ComplexMatrix<T>>,
}

impl<T: Real> Povm<T> {
    pub fn new(elements: Vec<ComplexMatrix<T>>) -> Result<Self> {
        let Some(first) = elements.first() else {
            return Err(TomoError::invalid("POVM needs at least one element"));
        };
        let d = first.nrows();
        let tol = T::tol(HERMITIAN_TOL);
        let mut sum = ComplexMatrix::<T>::zeros(d, d);
        for (j, e) in elements.iter().enumerate() {
            if e.shape() != (d, d) {
                return Err(TomoError::invalid(format!("POVM element {j} has wrong shape")));
            }
            ensure_hermitian(e, HERMITIAN_TOL, "POVM element")?;
            let eig = hermitian_eigen(e)?;
            if eig.eigenvalues.iter().any(|&l| l < -tol) {
                return Err(TomoError::invalid(format!("POVM element {j} is not PSD")));
            }
            sum += e;
        }
        let defect = (sum - identity::<T>(d)).iter().map(|x| x.modulus()).fold(T::zero(), |a, b| a.max(b));
        if defect > tol {
            return Err(TomoError::invalid(format!(
                "POVM elements sum to identity only within {defect:e}"
            )));
        }
        Ok(Povm { dim: d, elements })
    }

    /// Projective measurement in the computational basis.
    pub fn computational(d: usize) -> Self {
        Povm {
            dim: d,
            elements: (0..d).map(|j| Ket::<T>::basis(d, j).projector()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[ComplexMatrix<T>] {
        &self.elements
    }

    /// Sum of all elements (the identity, up to rounding).
    pub fn completeness_sum(&self) -> ComplexMatrix<T> {
        self.elements
            .iter()
            .fold(ComplexMatrix::zeros(self.dim, self.dim), |acc, e| acc + e)
    }
}

/// Square-root ("pretty good") measurement of a ket family:
/// `Pi_j = G^{-1/2} |phi_j><phi_j| G^{-1/2}` with `G = sum_j |phi_j><phi_j|`.
pub fn square_root_povm<T: Real>(kets: &[Ket<T>], rel_tol: T) -> Result<Povm<T>> {
    let Some(first) = kets.first() else {
        return Err(TomoError::invalid("square-root measurement needs at least one ket"));
    };
    let d = first.dim();
    if kets.iter().any(|k| k.dim() != d) {
        return Err(TomoError::invalid("kets have mixed dimensions"));
    }
    let mut frame = ComplexMatrix::<T>::zeros(d, d);
    for k in kets {
        frame += k.projector();
    }
    let rank = numerical_rank(&frame, rel_tol)?;
    if rank < d {
        return Err(TomoError::DegenerateMeasurement { rank, dim: d });
    }
    let g = inv_sqrt_psd(&frame, rel_tol)?;
    let elements = kets
        .iter()
        .map(|k| {
            let v = &g * k.amplitudes();
            &v * v.adjoint()
        })
        .collect();
    Ok(Povm { dim: d, elements })
}

/// Coordinates of an operator in a [`GeneratorBasis`], identity component at
/// index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochVector<T: Real> {
    coords: DVector<T>,
}

impl<T: Real> BlochVector<T> {
    /// Wraps `d^2` coordinates; the length must be a perfect square >= 4.
    pub fn new(coords: DVector<T>) -> Result<Self> {
        let n = coords.len();
        let d = (n as f64).sqrt().round() as usize;
        if d < 2 || d * d != n {
            return Err(TomoError::invalid(format!("{n} is not a valid Bloch vector length")));
        }
        Ok(BlochVector { coords })
    }

    pub fn dim(&self) -> usize {
        (self.coords.len() as f64).sqrt().round() as usize
    }

    pub fn coords(&self) -> &DVector<T> {
        &self.coords
    }

    pub fn into_coords(self) -> DVector<T> {
        self.coords
    }

    /// Coordinates `1..d^2-1` (the traceless part).
    pub fn traceless(&self) -> DVector<T> {
        self.coords.rows(1, self.coords.len() - 1).into_owned()
    }
}

fn ensure_dims(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(TomoError::invalid(format!("{what}: dimension {a} vs {b}")))
    }
}

/// `coords[k] = Tr(rho Gamma_k)`.
pub fn bloch_from_state<T: Real>(rho: &DensityMatrix<T>, basis: &GeneratorBasis<T>) -> Result<BlochVector<T>> {
    ensure_dims(rho.dim(), basis.dim(), "state vs basis")?;
    Ok(BlochVector {
        coords: basis.coordinates(rho.matrix()),
    })
}

/// `sum_k coords[k] Gamma_k`. Unit trace and Hermitian, but not necessarily
/// positive, so the raw matrix is returned.
pub fn state_from_bloch<T: Real>(v: &BlochVector<T>, basis: &GeneratorBasis<T>) -> Result<ComplexMatrix<T>> {
    ensure_dims(v.coords.len(), basis.len(), "Bloch vector vs basis")?;
    Ok(basis.expand(&v.coords))
}

/// Born-rule outcome probabilities `Re Tr(rho Pi_j)`; tiny negatives from
/// rounding are clipped to zero.
pub fn born_probs<T: Real>(rho: &DensityMatrix<T>, povm: &Povm<T>) -> Result<DVector<T>> {
    ensure_dims(rho.dim(), povm.dim(), "state vs POVM")?;
    let clip = -T::tol(HERMITIAN_TOL);
    let mut p = DVector::zeros(povm.outcomes());
    for (j, e) in povm.elements().iter().enumerate() {
        let pj = trace_of_product(rho.matrix(), e).re;
        if pj < clip {
            return Err(TomoError::invalid(format!("outcome {j} has negative probability {pj:e}")));
        }
        p[j] = pj.max(T::zero());
    }
    Ok(p)
}

fn ensure_psd_for_fidelity<T: Real>(rho: &DensityMatrix<T>) -> Result<()> {
    let tol = T::tol(1e-9);
    if rho.eigenvalues()?.iter().any(|&l| l < -tol) {
        return Err(TomoError::invalid("fidelity of a non-PSD matrix"));
    }
    Ok(())
}

/// `Tr sqrt(sqrt(rho) sigma sqrt(rho))`, clamped to `[0, 1]`.
pub fn root_fidelity<T: Real>(rho: &DensityMatrix<T>, sigma: &DensityMatrix<T>) -> Result<T> {
    ensure_dims(rho.dim(), sigma.dim(), "fidelity arguments")?;
    ensure_psd_for_fidelity(rho)?;
    ensure_psd_for_fidelity(sigma)?;
    let s = sqrt_psd(rho.matrix())?;
    let inner = &s * sigma.matrix() * &s;
    let eig = hermitian_eigen(&inner)?;
    let tr = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > T::zero())
        .fold(T::zero(), |acc, &l| acc + l.sqrt());
    Ok(tr.min(T::one()).max(T::zero()))
}

/// Uhlmann-Jozsa fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn fidelity<T: Real>(rho: &DensityMatrix<T>, sigma: &DensityMatrix<T>) -> Result<T> {
    let f = root_fidelity(rho, sigma)?;
    Ok(f * f)
}

/// Nearest-looking physical state: symmetrize, clip negative eigenvalues to
/// zero, renormalize the trace.
pub fn project_to_physical<T: Real>(h: &ComplexMatrix<T>) -> Result<DensityMatrix<T>> {
    ensure_hermitian(h, HERMITIAN_TOL, "matrix")?;
    let eig = hermitian_eigen(h)?;
    let total = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > T::zero())
        .fold(T::zero(), |a, &b| a + b);
    if !(total > T::zero()) {
        return Err(TomoError::DegenerateProjection);
    }
    let matrix = hermitian_map(&eig, |l| if l > T::zero() { l / total } else { T::zero() });
    Ok(DensityMatrix { matrix })
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the phase
/// correction on the diagonal of R.
pub fn haar_unitary<T: Real, R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexMatrix<T> {
    let z = DMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(T::lit(re), T::lit(im))
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let diag = r[(j, j)];
        let n = diag.modulus();
        if n > T::zero() {
            let phase = diag.unscale(n);
            for i in 0..d {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}
