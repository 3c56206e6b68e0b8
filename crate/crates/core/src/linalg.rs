//! Small dense linear-algebra helpers shared by the simulator, the QITE
//! solver and the exact-diagonalization oracle.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Haar-random `dim × dim` unitary from the QR decomposition of a complex
/// Gaussian matrix with the phases of `R`'s diagonal divided out.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let mut g = || -> f64 { StandardNormal.sample(&mut *rng) };
    let z = CMat::from_fn(dim, dim, |_, _| Complex64::new(g(), g()));
    let qr = z.qr();
    let (q, r) = (qr.q(), qr.r());
    let fix = CMat::from_diagonal(&CVec::from_fn(dim, |j, _| r[(j, j)] / r[(j, j)].norm()));
    q * fix
}

/// Kronecker product `a ⊗ b` (`a` acts on the more significant index bits).
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues in ascending
/// order; eigenvectors are the columns of the returned matrix.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    // Symmetrize so that round-off in the input cannot leak into the solver.
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `exp(factor * h)` for Hermitian `h`.
pub fn exp_hermitian(h: &CMat, factor: Complex64) -> CMat {
    let (values, vectors) = hermitian_eigen(h);
    let n = h.nrows();
    let mut scaled = vectors.clone();
    for (j, lambda) in values.iter().enumerate() {
        let e = (factor * lambda).exp();
        for i in 0..n {
            scaled[(i, j)] *= e;
        }
    }
    scaled * vectors.adjoint()
}

/// Largest entry modulus of a complex matrix.
pub trait MaxAbs {
    fn max_abs(&self) -> f64;
}

impl MaxAbs for CMat {
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

/// Largest entry of `|U†U − I|`.
pub fn unitarity_error(u: &CMat) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    let prod = u.adjoint() * u;
    let mut worst: f64 = 0.0;
    for i in 0..prod.nrows() {
        for j in 0..prod.ncols() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((prod[(i, j)] - target).norm());
        }
    }
    worst
}

/// Largest entry of `|M − M†|`.
pub fn hermiticity_error(m: &CMat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Square root of a positive semidefinite Hermitian matrix. Eigenvalues at
/// round-off level relative to the largest are treated as zero.
pub fn psd_sqrt(m: &CMat) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let n = m.nrows();
    let floor = values.iter().fold(0.0f64, |a, v| a.max(v.abs())) * 1e-13;
    let mut scaled = vectors.clone();
    for (j, lambda) in values.iter().enumerate() {
        let s = if *lambda > floor { lambda.sqrt() } else { 0.0 };
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `(a + shift·I) x = b` by conjugate gradients from a zero initial
/// guess. Stops when the residual norm drops to `tol` or after `max_iter`
/// iterations.
pub fn conjugate_gradient(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    shift: f64,
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let apply = |v: &DVector<f64>| a * v + v * shift;
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    if rr.sqrt() <= tol {
        return CgOutcome { x, residual: rr.sqrt(), iterations, converged: true };
    }
    while iterations < max_iter {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        iterations += 1;
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= tol {
            break;
        }
        let beta = rr_new / rr;
        p = &r + &p * beta;
        rr = rr_new;
    }
    // Report the true residual rather than the recursively updated one.
    let residual = (b - apply(&x)).norm();
    CgOutcome { x, residual, iterations, converged: residual <= tol.max(1e-14) * 10.0 }
}

/// Minimum-norm least-squares solution of `(a + shift·I) x = b` via SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, shift: f64) -> DVector<f64> {
    let n = a.nrows();
    let shifted = a + DMatrix::<f64>::identity(n, n) * shift;
    let svd = shifted.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12 * n as f64;
    svd.solve(b, eps.max(1e-300)).unwrap_or_else(|_| DVector::zeros(n))
}
