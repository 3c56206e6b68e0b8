//! Pauli-string algebra in the symplectic (x, z, phase) representation,
//! weighted Hermitian sums of strings, spin-chain Hamiltonians, Trotter
//! grouping and windowed Pauli pools.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, I, ONE, ZERO};

/// Largest register for which dense matrices are built.
pub const MAX_DENSE_QUBITS: usize = 12;

/// Largest register the bitmask representation supports.
pub const MAX_QUBITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_bits(x: bool, z: bool) -> Self {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    fn letter(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// `i^phase · ⊗_j σ_j` where qubit `j` carries `σ(x_j, z_j)` with
/// `σ(1,0) = X`, `σ(1,1) = Y`, `σ(0,1) = Z`.
///
/// Strings order by `(x_bits, z_bits)` and then phase; this is the canonical
/// ordering used for pools and Trotter sequences throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    n: usize,
    x: u64,
    z: u64,
    phase: u8,
}

fn mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        assert!((1..=MAX_QUBITS).contains(&n), "register size {n} unsupported");
        PauliString { n, x: 0, z: 0, phase: 0 }
    }

    /// Builds a string from raw masks. Bits above `n` are rejected.
    pub fn from_bits(n: usize, x: u64, z: u64, phase: u8) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::TooLarge { n, limit: MAX_QUBITS });
        }
        if (x | z) & !mask(n) != 0 {
            return Err(Error::InvalidArgument(format!(
                "bitmask exceeds {n}-qubit register"
            )));
        }
        Ok(PauliString { n, x, z, phase: phase & 3 })
    }

    pub fn single(n: usize, qubit: usize, p: Pauli) -> Self {
        Self::from_factors(n, &[(qubit, p)])
    }

    /// Product of single-qubit factors on distinct qubits.
    ///
    /// # Panics
    /// Panics when a qubit index is out of range.
    pub fn from_factors(n: usize, factors: &[(usize, Pauli)]) -> Self {
        let mut s = Self::identity(n);
        for &(q, p) in factors {
            assert!(q < n, "qubit {q} outside {n}-qubit register");
            let (xb, zb) = p.bits();
            s.x = (s.x & !(1 << q)) | ((xb as u64) << q);
            s.z = (s.z & !(1 << q)) | ((zb as u64) << q);
        }
        s
    }

    /// Parses a dense label where character `j` is the factor on qubit `j`,
    /// e.g. `"XYIZ"`. An optional leading sign (`+`, `-`, `i`, `-i`) sets the
    /// phase.
    pub fn from_label(label: &str) -> Result<Self> {
        let (phase, body) = split_phase(label);
        let n = body.chars().count();
        if n == 0 {
            return Err(Error::InvalidArgument("empty Pauli label".into()));
        }
        let mut factors = Vec::with_capacity(n);
        for (q, c) in body.chars().enumerate() {
            let p = Pauli::from_letter(c)
                .ok_or_else(|| Error::InvalidArgument(format!("bad Pauli letter {c:?}")))?;
            factors.push((q, p));
        }
        let mut s = Self::from_factors(n, &factors);
        s.phase = phase;
        Ok(s)
    }

    /// Parses the sparse form `"X0Y1"` (also accepts spaces or `*` between
    /// factors) on an `n`-qubit register. `"I"` is the identity.
    pub fn parse_sparse(n: usize, text: &str) -> Result<Self> {
        let (phase, body) = split_phase(text);
        let body: String = body.chars().filter(|c| !c.is_whitespace() && *c != '*').collect();
        let mut s = Self::identity(n);
        s.phase = phase;
        if body.eq_ignore_ascii_case("I") {
            return Ok(s);
        }
        let chars: Vec<char> = body.chars().collect();
        let mut i = 0;
        let mut seen = 0u64;
        while i < chars.len() {
            let p = Pauli::from_letter(chars[i])
                .ok_or_else(|| Error::InvalidArgument(format!("bad Pauli letter in {text:?}")))?;
            i += 1;
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if start == i {
                return Err(Error::InvalidArgument(format!("missing qubit index in {text:?}")));
            }
            let q: usize = chars[start..i].iter().collect::<String>().parse().map_err(|_| {
                Error::InvalidArgument(format!("bad qubit index in {text:?}"))
            })?;
            if q >= n || seen & (1 << q) != 0 {
                return Err(Error::BadQubit(q));
            }
            seen |= 1 << q;
            let (xb, zb) = p.bits();
            s.x |= (xb as u64) << q;
            s.z |= (zb as u64) << q;
        }
        Ok(s)
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn x_bits(&self) -> u64 {
        self.x
    }

    pub fn z_bits(&self) -> u64 {
        self.z
    }

    pub fn phase_exp(&self) -> u8 {
        self.phase
    }

    /// `(x_bits, z_bits)`: the phase-free identity of the string.
    pub fn key(&self) -> (u64, u64) {
        (self.x, self.z)
    }

    pub fn factor(&self, qubit: usize) -> Pauli {
        Pauli::from_bits(self.x >> qubit & 1 == 1, self.z >> qubit & 1 == 1)
    }

    pub fn support_mask(&self) -> u64 {
        self.x | self.z
    }

    pub fn weight(&self) -> usize {
        self.support_mask().count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.support_mask() == 0
    }

    /// Lowest and highest qubit in the support, or `None` for the identity.
    pub fn support_range(&self) -> Option<(usize, usize)> {
        let m = self.support_mask();
        if m == 0 {
            None
        } else {
            Some((m.trailing_zeros() as usize, 63 - m.leading_zeros() as usize))
        }
    }

    pub fn y_count(&self) -> usize {
        (self.x & self.z).count_ones() as usize
    }

    pub fn is_z_type(&self) -> bool {
        self.x == 0
    }

    pub fn is_x_type(&self) -> bool {
        self.z == 0
    }

    /// Hermitian iff the global phase is ±1.
    pub fn is_hermitian(&self) -> bool {
        self.phase.is_multiple_of(2)
    }

    /// The same string with phase `+1`.
    pub fn without_phase(&self) -> Self {
        PauliString { phase: 0, ..*self }
    }

    pub fn with_phase(&self, phase: u8) -> Self {
        PauliString { phase: phase & 3, ..*self }
    }

    /// `i^phase` as a complex number.
    pub fn phase_factor(&self) -> Complex64 {
        i_pow(self.phase)
    }

    fn check_size(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            Err(Error::SizeMismatch(self.n, other.n))
        } else {
            Ok(())
        }
    }

    /// Operator product `self · other`, including the `i^k` phase.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.check_size(other)?;
        Ok(self.mul_unchecked(other))
    }

    pub(crate) fn mul_unchecked(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        let (x1, z1, x2, z2) = (self.x, self.z, other.x, other.z);
        let (px, py, pz) = (x1 & !z1, x1 & z1, !x1 & z1);
        let (qx, qy, qz) = (x2 & !z2, x2 & z2, !x2 & z2);
        let plus = (px & qy) | (py & qz) | (pz & qx);
        let minus = (py & qx) | (pz & qy) | (px & qz);
        let phase = (self.phase as i64 + other.phase as i64 + plus.count_ones() as i64
            - minus.count_ones() as i64)
            .rem_euclid(4) as u8;
        PauliString { n: self.n, x: x1 ^ x2, z: z1 ^ z2, phase }
    }

    /// True iff the symplectic form `<x1,z2> + <z1,x2>` vanishes mod 2.
    pub fn commutes(&self, other: &Self) -> Result<bool> {
        self.check_size(other)?;
        Ok(self.commutes_unchecked(other))
    }

    pub(crate) fn commutes_unchecked(&self, other: &Self) -> bool {
        ((self.x & other.z).count_ones() + (self.z & other.x).count_ones()).is_multiple_of(2)
    }

    /// True iff on every qubit the two factors are equal or one is identity.
    pub fn qubit_wise_commutes(&self, other: &Self) -> bool {
        let both = self.support_mask() & other.support_mask();
        (self.x ^ other.x) & both == 0 && (self.z ^ other.z) & both == 0
    }

    /// Action on a computational basis state: `σ|b⟩ = coeff · |b'⟩`.
    #[inline]
    pub fn apply_to_basis(&self, b: u64) -> (Complex64, u64) {
        let k = self.phase as u32 + (self.x & self.z).count_ones();
        let mut c = i_pow((k % 4) as u8);
        if (b & self.z).count_ones() % 2 == 1 {
            c = -c;
        }
        (c, b ^ self.x)
    }

    /// Dense `2^n × 2^n` matrix; basis index bit `j` is qubit `j`.
    pub fn to_matrix(&self) -> Result<CMat> {
        if self.n > MAX_DENSE_QUBITS {
            return Err(Error::TooLarge { n: self.n, limit: MAX_DENSE_QUBITS });
        }
        let dim = 1usize << self.n;
        let mut m = CMat::zeros(dim, dim);
        for b in 0..dim as u64 {
            let (c, out) = self.apply_to_basis(b);
            m[(out as usize, b as usize)] = c;
        }
        Ok(m)
    }

    /// `C σ C†` for a CNOT with the given control and target.
    pub fn conjugate_by_cnot(&self, control: usize, target: usize) -> Self {
        let n = self.n;
        let mut out = PauliString { n, x: 0, z: 0, phase: self.phase };
        for q in 0..n {
            let f = self.factor(q);
            if f == Pauli::I {
                continue;
            }
            let image = if q == control {
                match f {
                    Pauli::X => PauliString::from_factors(n, &[(control, Pauli::X), (target, Pauli::X)]),
                    Pauli::Y => PauliString::from_factors(n, &[(control, Pauli::Y), (target, Pauli::X)]),
                    _ => PauliString::single(n, q, f),
                }
            } else if q == target {
                match f {
                    Pauli::Z => PauliString::from_factors(n, &[(control, Pauli::Z), (target, Pauli::Z)]),
                    Pauli::Y => PauliString::from_factors(n, &[(control, Pauli::Z), (target, Pauli::Y)]),
                    _ => PauliString::single(n, q, f),
                }
            } else {
                PauliString::single(n, q, f)
            };
            out = out.mul_unchecked(&image);
        }
        out
    }

    /// Dense label with qubit 0 first, e.g. `XYIZ`, without the phase.
    pub fn label(&self) -> String {
        (0..self.n).map(|q| self.factor(q).letter()).collect()
    }
}

fn split_phase(text: &str) -> (u8, &str) {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("-i") {
        (3, rest)
    } else if let Some(rest) = t.strip_prefix("+i") {
        (1, rest)
    } else if let Some(rest) = t.strip_prefix('-') {
        (2, rest)
    } else if let Some(rest) = t.strip_prefix('+') {
        (0, rest)
    } else if t.len() > 1 && t.starts_with('i') && !t[1..].starts_with(|c: char| c.is_ascii_digit()) {
        (1, &t[1..])
    } else {
        (0, t)
    }
}

pub(crate) fn i_pow(k: u8) -> Complex64 {
    match k % 4 {
        0 => ONE,
        1 => I,
        2 => -ONE,
        _ => -I,
    }
}

impl Ord for PauliString {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.x, self.z, self.phase, self.n).cmp(&(other.x, other.z, other.phase, other.n))
    }
}

impl PartialOrd for PauliString {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PauliString {
    /// Sparse form, e.g. `X0Y1`, with a sign prefix for non-unit phases.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.phase {
            1 => write!(f, "i")?,
            2 => write!(f, "-")?,
            3 => write!(f, "-i")?,
            _ => {}
        }
        if self.is_identity() {
            return write!(f, "I");
        }
        for q in 0..self.n {
            let p = self.factor(q);
            if p != Pauli::I {
                write!(f, "{}{}", p.letter(), q)?;
            }
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_label(s)
    }
}

/// A real-weighted sum of phase-free Pauli strings: a Hermitian operator.
///
/// Canonical form: terms sorted by `(x_bits, z_bits)`, no duplicates, no
/// zero coefficients, every string with phase `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSum {
    n: usize,
    terms: Vec<(f64, PauliString)>,
}

impl PauliSum {
    pub fn zero(n: usize) -> Self {
        PauliSum { n, terms: Vec::new() }
    }

    /// Builds the canonical sum. Strings with phase `-1` fold the sign into
    /// the coefficient; phases `±i` are rejected.
    pub fn from_terms<I>(n: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, PauliString)>,
    {
        let mut acc: BTreeMap<(u64, u64), f64> = BTreeMap::new();
        for (c, p) in terms {
            if p.n_qubits() != n {
                return Err(Error::SizeMismatch(n, p.n_qubits()));
            }
            let sign = match p.phase_exp() {
                0 => 1.0,
                2 => -1.0,
                _ => return Err(Error::NonHermitian),
            };
            *acc.entry(p.key()).or_insert(0.0) += sign * c;
        }
        let terms = acc
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|((x, z), c)| (c, PauliString { n, x, z, phase: 0 }))
            .collect();
        Ok(PauliSum { n, terms })
    }

    pub fn from_string(p: PauliString) -> Result<Self> {
        Self::from_terms(p.n_qubits(), [(1.0, p)])
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of the identity string (`Tr(O) / 2^n`).
    pub fn identity_coefficient(&self) -> f64 {
        self.terms.iter().find(|(_, p)| p.is_identity()).map_or(0.0, |(c, _)| *c)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let terms = self.terms.iter().map(|(c, p)| (c * factor, *p));
        Self::from_terms(self.n, terms).expect("scaling preserves canonical form")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::SizeMismatch(self.n, other.n));
        }
        Self::from_terms(self.n, self.terms.iter().chain(other.terms.iter()).copied())
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        if self.n > MAX_DENSE_QUBITS {
            return Err(Error::TooLarge { n: self.n, limit: MAX_DENSE_QUBITS });
        }
        let dim = 1usize << self.n;
        let mut m = CMat::zeros(dim, dim);
        for (c, p) in &self.terms {
            for b in 0..dim as u64 {
                let (f, out) = p.apply_to_basis(b);
                m[(out as usize, b as usize)] += f * *c;
            }
        }
        Ok(m)
    }
}

impl fmt::Display for PauliSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (c, p)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}*{p}")?;
        }
        Ok(())
    }
}

/// A complex-weighted sum of phase-free strings; the working type for
/// expanding operator products such as `H²σ`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexPauliSum {
    n: usize,
    terms: BTreeMap<(u64, u64), Complex64>,
}

impl ComplexPauliSum {
    pub fn zero(n: usize) -> Self {
        ComplexPauliSum { n, terms: BTreeMap::new() }
    }

    pub fn from_sum(sum: &PauliSum) -> Self {
        let mut out = Self::zero(sum.n_qubits());
        for (c, p) in sum.terms() {
            out.add_string(Complex64::new(*c, 0.0), p);
        }
        out
    }

    pub fn from_string(p: &PauliString) -> Self {
        let mut out = Self::zero(p.n_qubits());
        out.add_string(ONE, p);
        out
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    /// Adds `coeff · p`, folding the phase of `p` into the coefficient.
    pub fn add_string(&mut self, coeff: Complex64, p: &PauliString) {
        let c = coeff * p.phase_factor();
        let e = self.terms.entry(p.key()).or_insert(ZERO);
        *e += c;
    }

    pub fn multiply(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::SizeMismatch(self.n, other.n));
        }
        let mut out = Self::zero(self.n);
        for (&(x1, z1), &c1) in &self.terms {
            let p = PauliString { n: self.n, x: x1, z: z1, phase: 0 };
            for (&(x2, z2), &c2) in &other.terms {
                let q = PauliString { n: self.n, x: x2, z: z2, phase: 0 };
                out.add_string(c1 * c2, &p.mul_unchecked(&q));
            }
        }
        Ok(out)
    }

    /// Iterates `(coefficient, phase-free string)`.
    pub fn iter(&self) -> impl Iterator<Item = (Complex64, PauliString)> + '_ {
        let n = self.n;
        self.terms
            .iter()
            .map(move |(&(x, z), &c)| (c, PauliString { n, x, z, phase: 0 }))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Which spin chain to build.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// `J Σ X_i X_{i+1} + h Σ Z_i`
    Tfim { j: f64, h: f64 },
    /// `J Σ (X_i X_{i+1} + Y_i Y_{i+1} + Δ Z_i Z_{i+1})`
    Xxz { j: f64, delta: f64 },
    Custom(PauliSum),
}

/// A model on an open chain of `n_sites` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub model: Model,
    pub n_sites: usize,
}

impl ModelSpec {
    pub fn tfim(n_sites: usize, j: f64, h: f64) -> Self {
        ModelSpec { model: Model::Tfim { j, h }, n_sites }
    }

    pub fn xxz(n_sites: usize, j: f64, delta: f64) -> Self {
        ModelSpec { model: Model::Xxz { j, delta }, n_sites }
    }

    pub fn custom(h: PauliSum) -> Self {
        let n_sites = h.n_qubits();
        ModelSpec { model: Model::Custom(h), n_sites }
    }
}

/// Builds the Hamiltonian of an open chain.
pub fn build_hamiltonian(spec: &ModelSpec) -> Result<PauliSum> {
    let n = spec.n_sites;
    if n < 2 {
        return Err(Error::InvalidModel(format!("n_sites = {n}, need at least 2")));
    }
    if n > MAX_QUBITS {
        return Err(Error::TooLarge { n, limit: MAX_QUBITS });
    }
    let bond = |i: usize, p: Pauli| PauliString::from_factors(n, &[(i, p), (i + 1, p)]);
    match &spec.model {
        Model::Tfim { j, h } => {
            let couplings = (0..n - 1).map(|i| (*j, bond(i, Pauli::X)));
            let fields = (0..n).map(|i| (*h, PauliString::single(n, i, Pauli::Z)));
            PauliSum::from_terms(n, couplings.chain(fields))
        }
        Model::Xxz { j, delta } => {
            let terms = (0..n - 1).flat_map(|i| {
                [(*j, bond(i, Pauli::X)), (*j, bond(i, Pauli::Y)), (*j * delta, bond(i, Pauli::Z))]
            });
            PauliSum::from_terms(n, terms)
        }
        Model::Custom(h) => {
            if h.n_qubits() != n {
                return Err(Error::SizeMismatch(n, h.n_qubits()));
            }
            Ok(h.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrotterScheme {
    /// One group holding the whole Hamiltonian.
    Single,
    /// Odd bonds first, then even bonds (bond `m` joins qubits `m-1`, `m`).
    EvenOdd,
    /// Every non-identity term on its own, in Hamiltonian order.
    PerTerm,
}

/// Ordered partition of a Hamiltonian's terms into Trotter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct TrotterGrouping {
    pub groups: Vec<PauliSum>,
}

impl TrotterGrouping {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Bond index (1-based) a chain term belongs to. A single-site term on
/// qubit `q` is attached to bond `max(q, 1)`.
fn bond_of(p: &PauliString) -> Option<usize> {
    let (lo, hi) = p.support_range()?;
    if hi - lo > 1 {
        return None;
    }
    Some(hi.max(1))
}

pub fn trotter_group(h: &PauliSum, scheme: TrotterScheme) -> Result<TrotterGrouping> {
    match scheme {
        TrotterScheme::Single => Ok(TrotterGrouping { groups: vec![h.clone()] }),
        TrotterScheme::PerTerm => {
            let n = h.n_qubits();
            let groups = h
                .terms()
                .iter()
                .filter(|(_, p)| !p.is_identity())
                .map(|&(c, p)| PauliSum::from_terms(n, [(c, p)]))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrotterGrouping { groups })
        }
        TrotterScheme::EvenOdd => {
            let mut odd = Vec::new();
            let mut even = Vec::new();
            for &(c, p) in h.terms() {
                if p.is_identity() {
                    odd.push((c, p));
                    continue;
                }
                let m = bond_of(&p).ok_or_else(|| {
                    Error::InvalidModel(format!(
                        "even-odd grouping needs nearest-neighbour terms, found {p}"
                    ))
                })?;
                if m % 2 == 1 {
                    odd.push((c, p));
                } else {
                    even.push((c, p));
                }
            }
            let n = h.n_qubits();
            let groups = [odd, even]
                .into_iter()
                .filter(|g| !g.is_empty())
                .map(|g| PauliSum::from_terms(n, g))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrotterGrouping { groups })
        }
    }
}

/// Every non-identity string supported inside any contiguous `domain`-qubit
/// window that contains the support of some term of `hl`. Sorted in
/// canonical order without duplicates.
pub fn pauli_pool(hl: &PauliSum, domain: usize) -> Result<Vec<PauliString>> {
    let n = hl.n_qubits();
    if domain == 0 || domain > n {
        return Err(Error::InvalidArgument(format!(
            "domain size {domain} outside 1..={n}"
        )));
    }
    let mut starts = BTreeSet::new();
    for (_, p) in hl.terms() {
        let Some((lo, hi)) = p.support_range() else { continue };
        let width = hi - lo + 1;
        if width > domain {
            return Err(Error::DomainTooSmall { domain, width });
        }
        let first = (hi + 1).saturating_sub(domain);
        let last = lo.min(n - domain);
        starts.extend(first..=last);
    }
    let mut pool = BTreeSet::new();
    let local = 1u64 << domain;
    for s in starts {
        for xm in 0..local {
            for zm in 0..local {
                if xm == 0 && zm == 0 {
                    continue;
                }
                pool.insert(PauliString { n, x: xm << s, z: zm << s, phase: 0 });
            }
        }
    }
    Ok(pool.into_iter().collect())
}
