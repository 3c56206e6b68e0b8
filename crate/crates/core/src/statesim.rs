//! Statevector and density-matrix simulation, a depolarizing + readout noise
//! model, and shot sampling of Pauli expectations.
//!
//! Basis index bit `j` is qubit `j`. Multi-qubit dense payloads use the same
//! little-endian convention over their target list.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, unitarity_error, CMat, I, ONE, ZERO};
use crate::pauli::{Pauli, PauliString, PauliSum, MAX_DENSE_QUBITS};

const UNITARY_TOL: f64 = 1e-10;

pub fn u3_matrix(theta: f64, phi: f64, lambda: f64) -> CMat {
    let (s, c) = (theta / 2.0).sin_cos();
    let e = |a: f64| Complex64::from_polar(1.0, a);
    CMat::from_row_slice(
        2,
        2,
        &[
            Complex64::new(c, 0.0),
            -e(lambda) * s,
            e(phi) * s,
            e(lambda + phi) * c,
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    U3 { qubit: usize, theta: f64, phi: f64, lambda: f64 },
    Ry { qubit: usize, theta: f64 },
    Cnot { control: usize, target: usize },
    /// `exp(-i angle/2 · σ)`; `σ` must be Hermitian.
    PauliRotation { pauli: PauliString, angle: f64 },
    ControlledUnitary { control: usize, targets: Vec<usize>, matrix: CMat },
    DenseUnitary { targets: Vec<usize>, matrix: CMat },
}

impl Gate {
    pub fn hadamard(qubit: usize) -> Self {
        Gate::U3 { qubit, theta: FRAC_PI_2, phi: 0.0, lambda: std::f64::consts::PI }
    }

    /// `H·S†`: maps `Y` to `Z` under conjugation.
    pub fn y_to_z(qubit: usize) -> Self {
        Gate::U3 { qubit, theta: FRAC_PI_2, phi: 0.0, lambda: FRAC_PI_2 }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::U3 { qubit, .. } | Gate::Ry { qubit, .. } => vec![*qubit],
            Gate::Cnot { control, target } => vec![*control, *target],
            Gate::PauliRotation { pauli, .. } => {
                (0..pauli.n_qubits()).filter(|q| pauli.support_mask() >> q & 1 == 1).collect()
            }
            Gate::ControlledUnitary { control, targets, .. } => {
                let mut v = vec![*control];
                v.extend(targets);
                v
            }
            Gate::DenseUnitary { targets, .. } => targets.clone(),
        }
    }

    pub fn is_two_qubit_entangler(&self) -> bool {
        self.qubits().len() >= 2
    }

    /// Checks qubit ranges, distinctness and payload unitarity.
    pub fn validate(&self, n: usize) -> Result<()> {
        let qs = self.qubits();
        let mut seen = 0u64;
        for &q in &qs {
            if q >= n || seen >> q & 1 == 1 {
                return Err(Error::BadQubit(q));
            }
            seen |= 1 << q;
        }
        match self {
            Gate::PauliRotation { pauli, .. } => {
                if pauli.n_qubits() != n {
                    return Err(Error::SizeMismatch(n, pauli.n_qubits()));
                }
                if !pauli.is_hermitian() {
                    return Err(Error::NonHermitian);
                }
            }
            Gate::ControlledUnitary { targets, matrix, .. } | Gate::DenseUnitary { targets, matrix } => {
                let dim = 1usize << targets.len();
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    return Err(Error::InvalidArgument(format!(
                        "payload of size {}x{} on {} targets",
                        matrix.nrows(),
                        matrix.ncols(),
                        targets.len()
                    )));
                }
                let err = unitarity_error(matrix);
                if err > UNITARY_TOL {
                    return Err(Error::NonUnitary(err));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Applies the gate to an amplitude slice of an `n`-qubit register.
    pub(crate) fn apply_to(&self, amps: &mut [Complex64], n: usize) {
        match self {
            Gate::U3 { qubit, theta, phi, lambda } => {
                apply_dense(amps, n, &[*qubit], &u3_matrix(*theta, *phi, *lambda), None)
            }
            Gate::Ry { qubit, theta } => apply_dense(amps, n, &[*qubit], &u3_matrix(*theta, 0.0, 0.0), None),
            Gate::Cnot { control, target } => {
                let (cm, tm) = (1usize << control, 1usize << target);
                for b in 0..amps.len() {
                    if b & cm != 0 && b & tm == 0 {
                        amps.swap(b, b | tm);
                    }
                }
            }
            Gate::PauliRotation { pauli, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let mut rotated = vec![ZERO; amps.len()];
                for (b, a) in amps.iter().enumerate() {
                    let (f, out) = pauli.apply_to_basis(b as u64);
                    rotated[out as usize] = f * a;
                }
                let ms = -I * s;
                for (a, r) in amps.iter_mut().zip(rotated) {
                    *a = *a * c + ms * r;
                }
            }
            Gate::ControlledUnitary { control, targets, matrix } => {
                apply_dense(amps, n, targets, matrix, Some(*control))
            }
            Gate::DenseUnitary { targets, matrix } => apply_dense(amps, n, targets, matrix, None),
        }
    }
}

fn apply_dense(amps: &mut [Complex64], _n: usize, targets: &[usize], m: &CMat, control: Option<usize>) {
    let k = targets.len();
    let local = 1usize << k;
    let tmask: usize = targets.iter().map(|&t| 1usize << t).sum();
    let offsets: Vec<usize> = (0..local)
        .map(|l| targets.iter().enumerate().filter(|(i, _)| l >> i & 1 == 1).map(|(_, &t)| 1 << t).sum())
        .collect();
    let cmask = control.map_or(0, |c| 1usize << c);
    let mut buf = vec![ZERO; local];
    for base in 0..amps.len() {
        if base & tmask != 0 || base & cmask != cmask {
            continue;
        }
        for (l, off) in offsets.iter().enumerate() {
            buf[l] = amps[base | off];
        }
        for (r, off) in offsets.iter().enumerate() {
            let mut acc = ZERO;
            for (l, v) in buf.iter().enumerate() {
                acc += m[(r, l)] * v;
            }
            amps[base | off] = acc;
        }
    }
}

/// Ordered gate list on a fixed register.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Circuit {
    n: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Circuit { n, gates: Vec::new() }
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn push(&mut self, g: Gate) -> Result<()> {
        g.validate(self.n)?;
        self.gates.push(g);
        Ok(())
    }

    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        if other.n != self.n {
            return Err(Error::SizeMismatch(self.n, other.n));
        }
        self.gates.extend(other.gates.iter().cloned());
        Ok(())
    }

    pub fn cnot_count(&self) -> usize {
        self.gates.iter().filter(|g| matches!(g, Gate::Cnot { .. })).count()
    }

    /// Dense unitary of the whole circuit.
    pub fn unitary(&self) -> Result<CMat> {
        if self.n > MAX_DENSE_QUBITS {
            return Err(Error::TooLarge { n: self.n, limit: MAX_DENSE_QUBITS });
        }
        let dim = 1usize << self.n;
        let mut u = CMat::identity(dim, dim);
        for j in 0..dim {
            let col = &mut u.as_mut_slice()[j * dim..(j + 1) * dim];
            for g in &self.gates {
                g.apply_to(col, self.n);
            }
        }
        Ok(u)
    }
}

/// Per-qubit depolarizing after gates plus a per-qubit readout confusion
/// matrix `C[true][reported]`.
///
/// Gates on three or more qubits (wide Pauli rotations, dense blocks) get
/// the two-qubit rate applied jointly over their support.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub p1: f64,
    pub p2: f64,
    pub readout: Vec<[[f64; 2]; 2]>,
}

impl NoiseModel {
    pub const DEFAULT_P1: f64 = 0.001;
    pub const DEFAULT_P2: f64 = 0.01;
    pub const DEFAULT_READOUT_FLIP: f64 = 0.02;

    /// Symmetric readout flips with probability `flip` on every qubit.
    pub fn uniform(n: usize, p1: f64, p2: f64, flip: f64) -> Result<Self> {
        let m = NoiseModel { p1, p2, readout: vec![[[1.0 - flip, flip], [flip, 1.0 - flip]]; n] };
        m.validate()?;
        Ok(m)
    }

    pub fn default_for(n: usize) -> Self {
        Self::uniform(n, Self::DEFAULT_P1, Self::DEFAULT_P2, Self::DEFAULT_READOUT_FLIP)
            .expect("default noise parameters are valid")
    }

    pub fn readout_only(n: usize, flip: f64) -> Result<Self> {
        Self::uniform(n, 0.0, 0.0, flip)
    }

    pub fn gates_only(n: usize, p1: f64, p2: f64) -> Result<Self> {
        Self::uniform(n, p1, p2, 0.0)
    }

    pub fn n_qubits(&self) -> usize {
        self.readout.len()
    }

    pub fn has_gate_noise(&self) -> bool {
        self.p1 > 0.0 || self.p2 > 0.0
    }

    pub fn has_readout_noise(&self) -> bool {
        self.readout.iter().any(|c| c[0][1] != 0.0 || c[1][0] != 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p1) || !prob(self.p2) {
            return Err(Error::InvalidArgument("depolarizing probability outside [0, 1]".into()));
        }
        for c in &self.readout {
            for row in c {
                if !prob(row[0]) || !prob(row[1]) || (row[0] + row[1] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument("confusion rows must be stochastic".into()));
                }
            }
        }
        Ok(())
    }

    /// Pushes a true-outcome distribution through the readout confusion.
    pub fn apply_readout(&self, probs: &[f64]) -> Vec<f64> {
        let mut p = probs.to_vec();
        for (q, c) in self.readout.iter().enumerate() {
            let bit = 1usize << q;
            for b in 0..p.len() {
                if b & bit != 0 {
                    continue;
                }
                let (p0, p1) = (p[b], p[b | bit]);
                p[b] = p0 * c[0][0] + p1 * c[1][0];
                p[b | bit] = p0 * c[0][1] + p1 * c[1][1];
            }
        }
        p
    }
}

/// Shot histogram. Outcome keys are basis indices (bit `j` = qubit `j`);
/// the textual form writes qubit 0 first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MeasurementCounts {
    n: usize,
    counts: BTreeMap<u64, u64>,
    shots: u64,
}

impl MeasurementCounts {
    pub fn new(n: usize) -> Self {
        MeasurementCounts { n, counts: BTreeMap::new(), shots: 0 }
    }

    pub fn from_map(n: usize, counts: BTreeMap<u64, u64>) -> Self {
        let counts: BTreeMap<u64, u64> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        let shots = counts.values().sum();
        MeasurementCounts { n, counts, shots }
    }

    /// Parses `{"0001": 30, ...}`-style pairs where character `j` is qubit `j`.
    pub fn from_bitstrings<'a, I>(n: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, u64)>,
    {
        let mut map = BTreeMap::new();
        for (s, c) in pairs {
            if s.len() != n {
                return Err(Error::InvalidArgument(format!("bitstring {s:?} is not {n} bits")));
            }
            let mut b = 0u64;
            for (q, ch) in s.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => b |= 1 << q,
                    _ => return Err(Error::InvalidArgument(format!("bad bitstring {s:?}"))),
                }
            }
            *map.entry(b).or_insert(0) += c;
        }
        Ok(Self::from_map(n, map))
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn get(&self, outcome: u64) -> u64 {
        self.counts.get(&outcome).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&b, &c)| (b, c))
    }

    pub fn bitstring(&self, outcome: u64) -> String {
        (0..self.n).map(|q| if outcome >> q & 1 == 1 { '1' } else { '0' }).collect()
    }

    pub fn distribution(&self) -> Vec<f64> {
        let mut p = vec![0.0; 1 << self.n];
        if self.shots == 0 {
            return p;
        }
        for (b, c) in self.iter() {
            p[b as usize] = c as f64 / self.shots as f64;
        }
        p
    }

    /// Mean of `(-1)^{popcount(b & mask)}` over the shots.
    pub fn parity_expectation(&self, mask: u64) -> f64 {
        if self.shots == 0 {
            return 0.0;
        }
        let s: i64 = self
            .iter()
            .map(|(b, c)| if (b & mask).count_ones().is_multiple_of(2) { c as i64 } else { -(c as i64) })
            .sum();
        s as f64 / self.shots as f64
    }

    pub fn retain<F: FnMut(u64) -> bool>(&self, mut keep: F) -> Self {
        let map = self.counts.iter().filter(|(b, _)| keep(**b)).map(|(b, c)| (*b, *c)).collect();
        Self::from_map(self.n, map)
    }
}

impl fmt::Display for MeasurementCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (b, c)) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}: {}", self.bitstring(b), c)?;
        }
        write!(f, "}}")
    }
}

/// Common interface of the pure and mixed simulators.
pub trait SimState: Clone {
    fn n_qubits(&self) -> usize;

    fn apply_gate(&mut self, gate: &Gate, noise: Option<&NoiseModel>) -> Result<()>;

    /// `⟨σ⟩` including the string's phase; complex for non-Hermitian `σ`.
    fn expectation_string(&self, p: &PauliString) -> Result<Complex64>;

    /// Computational-basis outcome probabilities.
    fn probabilities(&self) -> Vec<f64>;

    fn reduced_density(&self, qubits: &[usize]) -> Result<DensityMatrix>;

    fn apply_circuit(&mut self, c: &Circuit, noise: Option<&NoiseModel>) -> Result<()> {
        if c.n_qubits() != self.n_qubits() {
            return Err(Error::SizeMismatch(self.n_qubits(), c.n_qubits()));
        }
        for g in c.gates() {
            self.apply_gate(g, noise)?;
        }
        Ok(())
    }

    /// `⟨O⟩` for a Hermitian sum.
    fn expectation(&self, o: &PauliSum) -> Result<f64> {
        if o.n_qubits() != self.n_qubits() {
            return Err(Error::SizeMismatch(self.n_qubits(), o.n_qubits()));
        }
        let mut acc = ZERO;
        for (c, p) in o.terms() {
            acc += self.expectation_string(p)? * *c;
        }
        if acc.im.abs() > 1e-10 {
            return Err(Error::NonHermitian);
        }
        Ok(acc.re)
    }
}

fn check_qubit_list(n: usize, qubits: &[usize]) -> Result<()> {
    let mut seen = 0u64;
    for &q in qubits {
        if q >= n || seen >> q & 1 == 1 {
            return Err(Error::BadQubit(q));
        }
        seen |= 1 << q;
    }
    if qubits.is_empty() {
        return Err(Error::InvalidArgument("empty qubit window".into()));
    }
    Ok(())
}

/// Splits basis indices into (kept-local, traced) parts for a qubit list.
fn scatter(local: usize, qubits: &[usize]) -> usize {
    qubits.iter().enumerate().filter(|(i, _)| local >> i & 1 == 1).map(|(_, &q)| 1usize << q).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zero_state(n: usize) -> Self {
        Self::basis_state(n, 0)
    }

    pub fn basis_state(n: usize, index: u64) -> Self {
        assert!(n <= MAX_DENSE_QUBITS, "register too large");
        let mut amps = vec![ZERO; 1 << n];
        amps[index as usize] = ONE;
        StateVector { n, amps }
    }

    /// `2^{-n/2} Σ_i |i⟩|i⟩` on `2n` qubits; qubit `j` pairs with `j + n`.
    /// Fitting a unitary on the low half of this state maximizes
    /// `|Tr(V†U)|² / 4^n`.
    pub fn maximally_entangled(n: usize) -> Result<Self> {
        if 2 * n > MAX_DENSE_QUBITS {
            return Err(Error::TooLarge { n: 2 * n, limit: MAX_DENSE_QUBITS });
        }
        let d = 1usize << n;
        let mut amps = vec![ZERO; d * d];
        for i in 0..d {
            amps[i | (i << n)] = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
        }
        Ok(StateVector { n: 2 * n, amps })
    }

    /// Normalizes the input; rejects zero vectors and wrong lengths.
    pub fn from_amplitudes(n: usize, amps: Vec<Complex64>) -> Result<Self> {
        if n > MAX_DENSE_QUBITS {
            return Err(Error::TooLarge { n, limit: MAX_DENSE_QUBITS });
        }
        if amps.len() != 1 << n {
            return Err(Error::InvalidArgument(format!("{} amplitudes for {n} qubits", amps.len())));
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidArgument("state has zero norm".into()));
        }
        Ok(StateVector { n, amps: amps.into_iter().map(|a| a / norm).collect() })
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn fidelity(&self, other: &Self) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn to_density(&self) -> DensityMatrix {
        let d = self.amps.len();
        let m = CMat::from_fn(d, d, |i, j| self.amps[i] * self.amps[j].conj());
        DensityMatrix { n: self.n, m }
    }

    /// Multiplies by a dense operator (not necessarily unitary) and
    /// renormalizes. Used by the exact propagators.
    pub fn apply_matrix_normalized(&self, m: &CMat) -> Result<Self> {
        let v = crate::linalg::CVec::from_column_slice(&self.amps);
        let out = m * v;
        Self::from_amplitudes(self.n, out.as_slice().to_vec())
    }
}

impl SimState for StateVector {
    fn n_qubits(&self) -> usize {
        self.n
    }

    fn apply_gate(&mut self, gate: &Gate, noise: Option<&NoiseModel>) -> Result<()> {
        if noise.is_some_and(NoiseModel::has_gate_noise) {
            return Err(Error::NoiseOnStateVector);
        }
        gate.validate(self.n)?;
        gate.apply_to(&mut self.amps, self.n);
        Ok(())
    }

    fn expectation_string(&self, p: &PauliString) -> Result<Complex64> {
        if p.n_qubits() != self.n {
            return Err(Error::SizeMismatch(self.n, p.n_qubits()));
        }
        let mut acc = ZERO;
        for (b, a) in self.amps.iter().enumerate() {
            if *a == ZERO {
                continue;
            }
            let (c, out) = p.apply_to_basis(b as u64);
            acc += self.amps[out as usize].conj() * c * a;
        }
        Ok(acc)
    }

    fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn reduced_density(&self, qubits: &[usize]) -> Result<DensityMatrix> {
        check_qubit_list(self.n, qubits)?;
        let k = qubits.len();
        let rest: Vec<usize> = (0..self.n).filter(|q| !qubits.contains(q)).collect();
        let local = 1usize << k;
        let mut m = CMat::zeros(local, local);
        for e in 0..1usize << rest.len() {
            let eb = scatter(e, &rest);
            for i in 0..local {
                let ai = self.amps[eb | scatter(i, qubits)];
                if ai == ZERO {
                    continue;
                }
                for j in 0..local {
                    m[(i, j)] += ai * self.amps[eb | scatter(j, qubits)].conj();
                }
            }
        }
        Ok(DensityMatrix { n: k, m })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    m: CMat,
}

impl DensityMatrix {
    pub fn zero_state(n: usize) -> Self {
        StateVector::zero_state(n).to_density()
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let d = 1usize << n;
        DensityMatrix { n, m: CMat::identity(d, d) / Complex64::new(d as f64, 0.0) }
    }

    /// Wraps a matrix after checking Hermiticity, unit trace and positivity.
    pub fn from_matrix(n: usize, m: CMat) -> Result<Self> {
        let d = 1usize << n;
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::InvalidArgument(format!("density matrix is not {d}x{d}")));
        }
        if crate::linalg::hermiticity_error(&m) > 1e-10 {
            return Err(Error::NonHermitian);
        }
        let rho = DensityMatrix { n, m };
        if (rho.trace() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("trace {} != 1", rho.trace())));
        }
        if rho.min_eigenvalue() < -1e-9 {
            return Err(Error::InvalidArgument("density matrix is not positive".into()));
        }
        Ok(rho)
    }

    /// Mixture `Σ w_k |ψ_k⟩⟨ψ_k|` with weights normalized to one.
    pub fn mixture(states: &[(f64, StateVector)]) -> Result<Self> {
        let Some((_, first)) = states.first() else {
            return Err(Error::InvalidArgument("empty mixture".into()));
        };
        let n = first.n;
        let total: f64 = states.iter().map(|(w, _)| *w).sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("mixture weights sum to zero".into()));
        }
        let d = 1usize << n;
        let mut m = CMat::zeros(d, d);
        for (w, s) in states {
            if s.n != n {
                return Err(Error::SizeMismatch(n, s.n));
            }
            m += s.to_density().m * Complex64::new(w / total, 0.0);
        }
        Ok(DensityMatrix { n, m })
    }

    pub fn matrix(&self) -> &CMat {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.m * &self.m).trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigen(&self.m).0[0]
    }

    fn apply_left(&mut self, gate: &Gate) {
        let d = self.m.nrows();
        let n = self.n;
        let data = self.m.as_mut_slice();
        for j in 0..d {
            gate.apply_to(&mut data[j * d..(j + 1) * d], n);
        }
    }

    /// `ρ → (1-p)ρ + p · Tr_Q(ρ) ⊗ I/2^k` on the listed qubits.
    pub fn depolarize(&mut self, qubits: &[usize], p: f64) {
        if p == 0.0 || qubits.is_empty() {
            return;
        }
        let d = self.m.nrows();
        let qmask: usize = qubits.iter().map(|&q| 1usize << q).sum();
        let local = 1usize << qubits.len();
        let old = self.m.clone();
        let keep = Complex64::new(1.0 - p, 0.0);
        let mix = Complex64::new(p / local as f64, 0.0);
        for j in 0..d {
            for i in 0..d {
                let mut v = old[(i, j)] * keep;
                if (i ^ j) & qmask == 0 {
                    let (ib, jb) = (i & !qmask, j & !qmask);
                    let mut s = ZERO;
                    for l in 0..local {
                        let off = scatter(l, qubits);
                        s += old[(ib | off, jb | off)];
                    }
                    v += s * mix;
                }
                self.m[(i, j)] = v;
            }
        }
    }
}

impl SimState for DensityMatrix {
    fn n_qubits(&self) -> usize {
        self.n
    }

    fn apply_gate(&mut self, gate: &Gate, noise: Option<&NoiseModel>) -> Result<()> {
        gate.validate(self.n)?;
        self.apply_left(gate);
        self.m.adjoint_mut();
        self.apply_left(gate);
        self.m.adjoint_mut();
        if let Some(nm) = noise {
            let qs = gate.qubits();
            let p = if qs.len() == 1 { nm.p1 } else { nm.p2 };
            self.depolarize(&qs, p);
        }
        Ok(())
    }

    fn expectation_string(&self, p: &PauliString) -> Result<Complex64> {
        if p.n_qubits() != self.n {
            return Err(Error::SizeMismatch(self.n, p.n_qubits()));
        }
        let mut acc = ZERO;
        for b in 0..self.m.nrows() {
            let (c, out) = p.apply_to_basis(b as u64);
            acc += self.m[(b, out as usize)] * c;
        }
        Ok(acc)
    }

    fn probabilities(&self) -> Vec<f64> {
        (0..self.m.nrows()).map(|b| self.m[(b, b)].re.max(0.0)).collect()
    }

    fn reduced_density(&self, qubits: &[usize]) -> Result<DensityMatrix> {
        check_qubit_list(self.n, qubits)?;
        let rest: Vec<usize> = (0..self.n).filter(|q| !qubits.contains(q)).collect();
        let local = 1usize << qubits.len();
        let mut m = CMat::zeros(local, local);
        for e in 0..1usize << rest.len() {
            let eb = scatter(e, &rest);
            for i in 0..local {
                for j in 0..local {
                    m[(i, j)] += self.m[(eb | scatter(i, qubits), eb | scatter(j, qubits))];
                }
            }
        }
        Ok(DensityMatrix { n: qubits.len(), m })
    }
}

/// Gates rotating each non-identity factor of `p` into `Z`.
pub fn basis_change(p: &PauliString) -> Circuit {
    let n = p.n_qubits();
    let mut c = Circuit::new(n);
    for q in 0..n {
        let g = match p.factor(q) {
            Pauli::X => Gate::hadamard(q),
            Pauli::Y => Gate::y_to_z(q),
            _ => continue,
        };
        c.push(g).expect("qubit in range");
    }
    c
}

/// Multinomial draw of `shots` outcomes from `probs`.
pub fn sample_counts<R: Rng + ?Sized>(n: usize, probs: &[f64], shots: u64, rng: &mut R) -> MeasurementCounts {
    let mut map = BTreeMap::new();
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    for (b, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let p = p.max(0.0);
        if p == 0.0 {
            continue;
        }
        let q = if mass > 0.0 { (p / mass).min(1.0) } else { 1.0 };
        let k = if q >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q).expect("probability in [0, 1]").sample(rng)
        };
        if k > 0 {
            map.insert(b as u64, k);
        }
        remaining -= k;
        mass -= p;
    }
    MeasurementCounts::from_map(n, map)
}

/// Rotates into the measurement basis, applies readout noise and draws
/// `shots` outcomes.
pub fn measure_in_basis<S: SimState, R: Rng + ?Sized>(
    state: &S,
    basis: &Circuit,
    shots: u64,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<MeasurementCounts> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be positive".into()));
    }
    let mut rotated = state.clone();
    rotated.apply_circuit(basis, noise)?;
    let mut probs = rotated.probabilities();
    if let Some(nm) = noise {
        probs = nm.apply_readout(&probs);
    }
    Ok(sample_counts(state.n_qubits(), &probs, shots, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledExpectation {
    pub value: f64,
    pub variance: f64,
    pub counts: MeasurementCounts,
}

/// Shot estimate of a Hermitian Pauli string. With `simultaneous`, the basis
/// change covers both strings (they must be qubit-wise commuting) and the
/// returned counts can be reused for the second string.
pub fn sample_expectation<S: SimState, R: Rng + ?Sized>(
    state: &S,
    p: &PauliString,
    shots: u64,
    noise: Option<&NoiseModel>,
    simultaneous: Option<&PauliString>,
    rng: &mut R,
) -> Result<SampledExpectation> {
    if !p.is_hermitian() {
        return Err(Error::NonHermitian);
    }
    let mut joint = *p;
    if let Some(s) = simultaneous {
        if !p.qubit_wise_commutes(s) {
            return Err(Error::NotCommuting(p.to_string(), s.to_string()));
        }
        // on shared qubits the factors agree, so the union is well defined
        joint = PauliString::from_bits(p.n_qubits(), p.x_bits() | s.x_bits(), p.z_bits() | s.z_bits(), 0)?;
    }
    let counts = measure_in_basis(state, &basis_change(&joint), shots, noise, rng)?;
    let sign = if p.phase_exp() == 2 { -1.0 } else { 1.0 };
    let value = sign * counts.parity_expectation(p.support_mask());
    let variance = (1.0 - value * value) / counts.shots() as f64;
    Ok(SampledExpectation { value, variance, counts })
}
