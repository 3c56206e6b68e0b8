//! Two-qubit Cartan (KAK) decomposition
//! `U = e^{iφ} (A₁⊗B₁) exp(i(a XX + b YY + c ZZ)) (A₂⊗B₂)` via the magic
//! basis, and synthesis into CNOTs plus `U3` gates.
//!
//! In a Kronecker product `A⊗B`, `A` acts on qubit 1 and `B` on qubit 0.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{kron, unitarity_error, CMat, I, ONE, ZERO};
use crate::statesim::{u3_matrix, Circuit, Gate};

const COEFF_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct KakDecomposition {
    /// Interaction coefficients `(a, b, c)`, each reduced into `(−π/4, π/4]`.
    pub interaction: [f64; 3],
    /// Local factors after the core, `(on qubit 1, on qubit 0)`.
    pub before: (CMat, CMat),
    pub after: (CMat, CMat),
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn magic() -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_row_slice(
        4,
        4,
        &[
            c(s, 0.0),
            ZERO,
            ZERO,
            c(0.0, s),
            ZERO,
            c(0.0, s),
            c(s, 0.0),
            ZERO,
            ZERO,
            c(0.0, s),
            c(-s, 0.0),
            ZERO,
            c(s, 0.0),
            ZERO,
            ZERO,
            c(0.0, -s),
        ],
    )
}

fn pauli(k: usize) -> CMat {
    match k {
        0 => CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        1 => CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        _ => CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    }
}

/// Splits `K = A⊗B` into its factors, both normalized to unit determinant.
fn split_local(k: &CMat) -> (CMat, CMat) {
    let mut best = (0, 0, -1.0);
    for i in 0..2 {
        for j in 0..2 {
            let norm = k.view((2 * i, 2 * j), (2, 2)).norm();
            if norm > best.2 {
                best = (i, j, norm);
            }
        }
    }
    let block: CMat = k.view((2 * best.0, 2 * best.1), (2, 2)).into_owned();
    let b = &block / block.determinant().sqrt();
    let mut a = CMat::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            let blk = k.view((2 * i, 2 * j), (2, 2));
            a[(i, j)] = (blk * b.adjoint()).trace() / c(2.0, 0.0);
        }
    }
    (a, b)
}

/// Real orthogonal `P` with `det P = 1` diagonalizing the complex symmetric
/// unitary `m`.
fn diagonalize_symmetric_unitary(m: &CMat) -> Result<DMatrix<f64>> {
    let re = m.map(|z| z.re);
    let im = m.map(|z| z.im);
    let mut rng = ChaCha8Rng::seed_from_u64(0x006b_616b);
    for _ in 0..16 {
        let (x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mix = &re * x + &im * y;
        let mix = (&mix + mix.transpose()) * 0.5;
        let mut p = mix.symmetric_eigen().eigenvectors;
        if p.determinant() < 0.0 {
            p.column_mut(0).neg_mut();
        }
        let pc = p.map(|v| c(v, 0.0));
        let d = pc.transpose() * m * &pc;
        let off = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|(i, j)| i != j).fold(0.0f64, |w, (i, j)| {
            w.max(d[(i, j)].norm())
        });
        if off < 1e-11 {
            return Ok(p);
        }
    }
    Err(Error::InvalidArgument("failed to diagonalize the magic-basis form".into()))
}

pub fn kak_decompose(u: &CMat) -> Result<KakDecomposition> {
    if u.nrows() != 4 || u.ncols() != 4 {
        return Err(Error::InvalidArgument("KAK needs a 4x4 unitary".into()));
    }
    let err = unitarity_error(u);
    if err > 1e-10 {
        return Err(Error::NonUnitary(err));
    }
    let su = u / u.determinant().powf(0.25);
    let bm = magic();
    let up = bm.adjoint() * &su * &bm;
    let m2 = up.transpose() * &up;
    let p = diagonalize_symmetric_unitary(&m2)?;
    let pc = p.map(|v| c(v, 0.0));
    let d = pc.transpose() * &m2 * &pc;
    let mut theta: Vec<f64> = (0..4).map(|j| d[(j, j)].arg() / 2.0).collect();
    let phase_diag = |theta: &[f64]| CMat::from_diagonal(&nalgebra::DVector::from_fn(4, |j, _| Complex64::from_polar(1.0, theta[j])));
    let mut k1 = &up * &pc * phase_diag(&theta).adjoint();
    if k1.determinant().re < 0.0 {
        theta[0] += PI;
        k1 = &up * &pc * phase_diag(&theta).adjoint();
    }
    // θ_j = a λˣˣ_j + b λʸʸ_j + c λᶻᶻ_j + g, with λ the magic-basis
    // eigenvalues of the three interaction terms.
    let mut sys = Matrix4::<f64>::zeros();
    for (col, k) in (0..3).enumerate() {
        let diag = bm.adjoint() * kron(&pauli(k), &pauli(k)) * &bm;
        for j in 0..4 {
            sys[(j, col)] = diag[(j, j)].re;
        }
    }
    for j in 0..4 {
        sys[(j, 3)] = 1.0;
    }
    let coef = sys
        .lu()
        .solve(&Vector4::from_fn(|j, _| theta[j]))
        .ok_or_else(|| Error::InvalidArgument("singular magic-basis system".into()))?;
    let k1 = &bm * k1 * bm.adjoint();
    let mut k2 = &bm * pc.transpose() * bm.adjoint();
    let mut interaction = [0.0; 3];
    for k in 0..3 {
        let steps = (coef[k] / FRAC_PI_2).round();
        let reduced = coef[k] - steps * FRAC_PI_2;
        let (steps, reduced) = if reduced <= -PI / 4.0 + 1e-12 { (steps - 1.0, reduced + FRAC_PI_2) } else { (steps, reduced) };
        interaction[k] = reduced;
        if (steps as i64).rem_euclid(2) == 1 {
            k2 = kron(&pauli(k), &pauli(k)) * k2;
        }
    }
    Ok(KakDecomposition { interaction, before: split_local(&k2), after: split_local(&k1) })
}

/// Writes a single-qubit unitary as `e^{iα} U3(θ, φ, λ)`; returns `None` when
/// it is the identity up to phase.
fn to_u3(m: &CMat, qubit: usize) -> Option<Gate> {
    let (a00, a01, a10, a11) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let theta = 2.0 * a10.norm().atan2(a00.norm());
    let eps = 1e-14;
    let (phi, lambda) = if a00.norm() > eps && a10.norm() > eps {
        let alpha = a00.arg();
        (a10.arg() - alpha, (-a01).arg() - alpha)
    } else if a10.norm() <= eps {
        (0.0, a11.arg() - a00.arg())
    } else {
        (0.0, (-a01).arg() - a10.arg())
    };
    let wrap = |x: f64| (x + PI).rem_euclid(2.0 * PI) - PI;
    if theta.abs() < 1e-13 && wrap(phi + lambda).abs() < 1e-13 {
        return None;
    }
    Some(Gate::U3 { qubit, theta, phi, lambda })
}

fn rz(t: f64) -> CMat {
    CMat::from_row_slice(2, 2, &[Complex64::from_polar(1.0, -t / 2.0), ZERO, ZERO, Complex64::from_polar(1.0, t / 2.0)])
}

fn rx(t: f64) -> CMat {
    let (s, co) = (t / 2.0).sin_cos();
    CMat::from_row_slice(2, 2, &[c(co, 0.0), c(0.0, -s), c(0.0, -s), c(co, 0.0)])
}

fn ry(t: f64) -> CMat {
    u3_matrix(t, 0.0, 0.0)
}

impl KakDecomposition {
    /// Number of interaction coefficients that are not multiples of π/2.
    pub fn nonzero_interactions(&self) -> usize {
        self.interaction.iter().filter(|x| x.abs() > COEFF_TOL).count()
    }

    /// Whether the core fits into two CNOTs.
    pub fn two_cnot_exact(&self) -> bool {
        self.nonzero_interactions() <= 2
    }

    /// Circuit with the fewest CNOTs (0, 2 or 3) reproducing the
    /// decomposed unitary up to global phase.
    pub fn circuit(&self) -> Circuit {
        let [a, b, cc] = self.interaction;
        // (pre on q1, pre on q0), core gates, (post on q1, post on q0)
        let mut pre = (self.before.0.clone(), self.before.1.clone());
        let mut post = (self.after.0.clone(), self.after.1.clone());
        let mut core: Vec<Gate> = Vec::new();
        let local = |q: usize, m: CMat| to_u3(&m, q);
        match self.nonzero_interactions() {
            0 => {}
            1 | 2 => {
                // CNOT₀₁ (Rx₀(θ) Rz₁(φ)) CNOT₀₁ = exp(−iθ/2 XX) exp(−iφ/2 ZZ),
                // with a local Clifford V mapping the pair (XX, ZZ) onto the
                // nonzero pair.
                let (first, second, v) = if b.abs() <= COEFF_TOL {
                    (a, cc, CMat::identity(2, 2))
                } else if a.abs() <= COEFF_TOL {
                    (b, cc, rz(FRAC_PI_2))
                } else {
                    (a, b, rx(-FRAC_PI_2))
                };
                pre = (v.adjoint() * pre.0, v.adjoint() * pre.1);
                post = (post.0 * &v, post.1 * &v);
                core.push(Gate::Cnot { control: 0, target: 1 });
                core.extend(local(0, rx(-2.0 * first)));
                core.extend(local(1, rz(-2.0 * second)));
                core.push(Gate::Cnot { control: 0, target: 1 });
            }
            _ => {
                pre.1 = rz(FRAC_PI_2) * pre.1;
                post.0 *= rz(-FRAC_PI_2);
                core.push(Gate::Cnot { control: 0, target: 1 });
                core.extend(local(0, ry(-2.0 * a - FRAC_PI_2)));
                core.extend(local(1, rz(-2.0 * cc - FRAC_PI_2)));
                core.push(Gate::Cnot { control: 1, target: 0 });
                core.extend(local(0, ry(2.0 * b + FRAC_PI_2)));
                core.push(Gate::Cnot { control: 0, target: 1 });
            }
        }
        if core.is_empty() {
            pre = (&post.0 * &pre.0, &post.1 * &pre.1);
            post = (CMat::identity(2, 2), CMat::identity(2, 2));
        }
        let mut circ = Circuit::new(2);
        let gates = local(0, pre.1)
            .into_iter()
            .chain(local(1, pre.0))
            .chain(core)
            .chain(local(0, post.1))
            .chain(local(1, post.0));
        for g in gates {
            circ.push(g).expect("two-qubit gate");
        }
        circ
    }
}

/// `min_φ max |U − e^{iφ} C|` over entries, with `φ` from the trace overlap.
pub fn reconstruction_error(u: &CMat, circuit: &Circuit) -> Result<f64> {
    let cm = circuit.unitary()?;
    let overlap = (cm.adjoint() * u).trace();
    let phase = if overlap.norm() > 1e-300 { overlap / overlap.norm() } else { ONE };
    Ok((u - cm * phase).iter().fold(0.0, |w, z| w.max(z.norm())))
}
