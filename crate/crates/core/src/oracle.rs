//! Exact-diagonalization references for thermal averages, imaginary-time
//! evolution, correlation functions and transition amplitudes.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, CMat, CVec, ZERO};
use crate::pauli::{PauliString, PauliSum};
use crate::statesim::StateVector;

pub const MAX_ORACLE_QUBITS: usize = 10;

/// Frequencies closer than this are merged in `transition_amplitudes`.
pub const DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl EigenSystem {
    pub fn of(h: &PauliSum) -> Result<Self> {
        if h.n_qubits() > MAX_ORACLE_QUBITS {
            return Err(Error::TooLarge { n: h.n_qubits(), limit: MAX_ORACLE_QUBITS });
        }
        let (values, vectors) = hermitian_eigen(&h.to_matrix()?);
        Ok(EigenSystem { values, vectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Boltzmann weights `e^{-β(E_i - E_0)}`, shifted to avoid overflow.
    pub fn boltzmann(&self, beta: f64) -> Vec<f64> {
        let e0 = self.values[0];
        self.values.iter().map(|e| (-beta * (e - e0)).exp()).collect()
    }

    /// `W† O W`: the operator in the eigenbasis.
    pub fn in_eigenbasis(&self, o: &CMat) -> CMat {
        self.vectors.adjoint() * o * &self.vectors
    }

    /// Dense `e^{-iHt}`.
    pub fn propagator(&self, t: f64) -> CMat {
        self.function(|e| Complex64::from_polar(1.0, -e * t))
    }

    /// `f(H)` for a scalar function of the eigenvalues.
    pub fn function<F: Fn(f64) -> Complex64>(&self, f: F) -> CMat {
        let mut scaled = self.vectors.clone();
        let n = self.dim();
        for (j, e) in self.values.iter().enumerate() {
            let v = f(*e);
            for i in 0..n {
                scaled[(i, j)] *= v;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// `Tr(e^{-βH} O) / Tr(e^{-βH})`.
pub fn exact_thermal(o: &PauliSum, h: &PauliSum, beta: f64) -> Result<f64> {
    let es = EigenSystem::of(h)?;
    exact_thermal_with(&es, o, beta)
}

pub fn exact_thermal_with(es: &EigenSystem, o: &PauliSum, beta: f64) -> Result<f64> {
    let om = es.in_eigenbasis(&o.to_matrix()?);
    let w = es.boltzmann(beta);
    let z: f64 = w.iter().sum();
    let num: f64 = w.iter().enumerate().map(|(i, wi)| wi * om[(i, i)].re).sum();
    Ok(num / z)
}

/// `e^{-τH}|ψ⟩ / ‖e^{-τH}|ψ⟩‖`.
pub fn exact_ite(psi0: &StateVector, h: &PauliSum, tau: f64) -> Result<StateVector> {
    let es = EigenSystem::of(h)?;
    exact_ite_with(&es, psi0, tau)
}

pub fn exact_ite_with(es: &EigenSystem, psi0: &StateVector, tau: f64) -> Result<StateVector> {
    let e0 = es.values[0];
    let m = es.function(|e| Complex64::new((-tau * (e - e0)).exp(), 0.0));
    psi0.apply_matrix_normalized(&m)
}

/// `‖e^{-τH}|ψ⟩‖²`, unshifted.
pub fn ite_norm_sq(es: &EigenSystem, psi0: &StateVector, tau: f64) -> f64 {
    let amps = CVec::from_column_slice(psi0.amplitudes());
    let coeffs = es.vectors.adjoint() * amps;
    coeffs.iter().zip(&es.values).map(|(c, e)| c.norm_sqr() * (-2.0 * tau * e).exp()).sum()
}

/// `Tr(e^{-βH} e^{iHt} U e^{-iHt} V) / Tr(e^{-βH})`.
pub fn exact_corr(u: &PauliString, v: &PauliString, h: &PauliSum, beta: f64, t: f64) -> Result<Complex64> {
    let es = EigenSystem::of(h)?;
    Ok(exact_corr_series_with(&es, u, v, beta, &[t])?[0])
}

/// The same correlation function over a list of times.
pub fn exact_corr_series_with(
    es: &EigenSystem,
    u: &PauliString,
    v: &PauliString,
    beta: f64,
    times: &[f64],
) -> Result<Vec<Complex64>> {
    let um = es.in_eigenbasis(&u.to_matrix()?);
    let vm = es.in_eigenbasis(&v.to_matrix()?);
    let w = es.boltzmann(beta);
    let z: f64 = w.iter().sum();
    let n = es.dim();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let mut acc = ZERO;
        for i in 0..n {
            if w[i] < 1e-300 {
                continue;
            }
            for f in 0..n {
                let m = um[(i, f)] * vm[(f, i)];
                if m == ZERO {
                    continue;
                }
                let phase = Complex64::from_polar(1.0, (es.values[i] - es.values[f]) * t);
                acc += m * phase * w[i];
            }
        }
        out.push(acc / z);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub frequency: f64,
    pub amplitude: f64,
}

/// Peaks of the spectrum of `⟨O(t) O⟩_β`: pairs `(E_i - E_f,
/// e^{-βE_f}|⟨i|O|f⟩|²/Z)`, merged over degenerate frequencies and sorted by
/// frequency.
pub fn transition_amplitudes(o: &PauliString, h: &PauliSum, beta: f64) -> Result<Vec<Transition>> {
    let es = EigenSystem::of(h)?;
    transition_amplitudes_with(&es, o, beta)
}

pub fn transition_amplitudes_with(es: &EigenSystem, o: &PauliString, beta: f64) -> Result<Vec<Transition>> {
    let om = es.in_eigenbasis(&o.to_matrix()?);
    let w = es.boltzmann(beta);
    let z: f64 = w.iter().sum();
    let n = es.dim();
    let mut raw: Vec<Transition> = Vec::new();
    for i in 0..n {
        for f in 0..n {
            let m2 = om[(i, f)].norm_sqr();
            if m2 < 1e-20 {
                continue;
            }
            raw.push(Transition { frequency: es.values[i] - es.values[f], amplitude: w[f] * m2 / z });
        }
    }
    raw.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    let mut merged: Vec<Transition> = Vec::new();
    for t in raw {
        match merged.last_mut() {
            Some(last) if (t.frequency - last.frequency).abs() < DEGENERACY_TOL => last.amplitude += t.amplitude,
            _ => merged.push(t),
        }
    }
    Ok(merged)
}
