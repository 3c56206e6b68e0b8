//! Z2 symmetries of a Pauli Hamiltonian and the normalizer-quotient
//! reduction of Pauli pools.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pauli::{PauliString, PauliSum};
use crate::statesim::SimState;

/// Symplectic vector packed as `z << 64 | x`.
type Sv = u128;

fn pack(p: &PauliString) -> Sv {
    (p.z_bits() as u128) << 64 | p.x_bits() as u128
}

fn unpack(n: usize, v: Sv) -> PauliString {
    PauliString::from_bits(n, v as u64, (v >> 64) as u64, 0).expect("vector stays inside the register")
}

fn symplectic(a: Sv, b: Sv) -> bool {
    let (ax, az, bx, bz) = (a as u64, (a >> 64) as u64, b as u64, (b >> 64) as u64);
    ((ax & bz).count_ones() + (az & bx).count_ones()) % 2 == 1
}

/// Reduced row echelon form over GF(2), pivots taken from the highest bit.
fn rref(mut rows: Vec<Sv>) -> Vec<Sv> {
    let mut out: Vec<Sv> = Vec::new();
    for bit in (0..128).rev() {
        let m: Sv = 1 << bit;
        let Some(pos) = rows.iter().position(|r| r & m != 0) else { continue };
        let pivot = rows.swap_remove(pos);
        for r in rows.iter_mut().chain(out.iter_mut()) {
            if *r & m != 0 {
                *r ^= pivot;
            }
        }
        out.push(pivot);
    }
    out
}

/// Kernel of `v ↦ (⟨v, r⟩)_r` over the given rows, as a basis.
fn symplectic_kernel(n: usize, rows: &[Sv]) -> Vec<Sv> {
    // Solve the ordinary GF(2) system M w = 0 where w = (x | z) and the row
    // for string r is (r.z | r.x).
    let width = 2 * n;
    let swap = |v: Sv| -> u128 {
        let x = v as u64 as u128;
        let z = (v >> 64) as u64 as u128;
        z | x << n
    };
    let mut mat: Vec<u128> = rows.iter().map(|&r| swap(r)).collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..width {
        let m = 1u128 << col;
        let Some(p) = (row..mat.len()).find(|&i| mat[i] & m != 0) else { continue };
        mat.swap(row, p);
        for i in 0..mat.len() {
            if i != row && mat[i] & m != 0 {
                mat[i] ^= mat[row];
            }
        }
        pivots.push(col);
        row += 1;
    }
    let mut basis = Vec::new();
    for free in (0..width).filter(|c| !pivots.contains(c)) {
        let mut w: u128 = 1 << free;
        for (i, &pc) in pivots.iter().enumerate() {
            if mat[i] >> free & 1 == 1 {
                w |= 1 << pc;
            }
        }
        let x = (w & ((1u128 << n) - 1)) as u64;
        let z = (w >> n & ((1u128 << n) - 1)) as u64;
        basis.push((z as u128) << 64 | x as u128);
    }
    basis
}

/// Keeps the isotropic part of a span: central vectors plus one member of
/// every hyperbolic pair, with the rest projected to commute with the pair.
fn isotropic_part(mut vs: Vec<Sv>) -> Vec<Sv> {
    let mut out = Vec::new();
    while !vs.is_empty() {
        let v = vs.remove(0);
        match vs.iter().position(|&w| symplectic(v, w)) {
            None => out.push(v),
            Some(k) => {
                let w = vs.remove(k);
                for u in vs.iter_mut() {
                    let mut nu = *u;
                    if symplectic(*u, w) {
                        nu ^= v;
                    }
                    if symplectic(*u, v) {
                        nu ^= w;
                    }
                    *u = nu;
                }
                out.push(v);
            }
        }
    }
    out.retain(|&v| v != 0);
    out
}

/// Independent, mutually commuting, phase-free generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilizerGroup {
    n: usize,
    generators: Vec<PauliString>,
}

impl StabilizerGroup {
    pub fn empty(n: usize) -> Self {
        StabilizerGroup { n, generators: Vec::new() }
    }

    /// Validates commutation and independence of the given generators.
    pub fn new(n: usize, generators: Vec<PauliString>) -> Result<Self> {
        for g in &generators {
            if g.n_qubits() != n {
                return Err(Error::SizeMismatch(n, g.n_qubits()));
            }
            if g.is_identity() {
                return Err(Error::InvalidArgument("identity is not a generator".into()));
            }
        }
        for (i, a) in generators.iter().enumerate() {
            for b in &generators[i + 1..] {
                if !a.commutes(b)? {
                    return Err(Error::NotCommuting(a.to_string(), b.to_string()));
                }
            }
        }
        let packed: Vec<Sv> = generators.iter().map(pack).collect();
        if rref(packed).len() != generators.len() {
            return Err(Error::InvalidArgument("generators are not independent".into()));
        }
        let generators = generators.iter().map(PauliString::without_phase).collect();
        Ok(StabilizerGroup { n, generators })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn generators(&self) -> &[PauliString] {
        &self.generators
    }

    pub fn d(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Phase-free keys of all `2^d` group elements.
    pub fn element_keys(&self) -> Vec<(u64, u64)> {
        let mut keys = vec![(0u64, 0u64)];
        for g in &self.generators {
            let extra: Vec<_> = keys.iter().map(|&(x, z)| (x ^ g.x_bits(), z ^ g.z_bits())).collect();
            keys.extend(extra);
        }
        keys
    }

    /// Generators that are all-Z or all-X, usable for one-qubit parity
    /// readout.
    pub fn diagonal_generators(&self) -> Vec<PauliString> {
        self.generators.iter().filter(|g| g.is_z_type() || g.is_x_type()).copied().collect()
    }

    /// Subgroup spanned by the listed generators.
    pub fn restricted(&self, keep: &[PauliString]) -> Self {
        StabilizerGroup { n: self.n, generators: keep.to_vec() }
    }
}

/// Maximal commuting set of independent strings commuting with every term
/// of `h`, in reduced row echelon form.
pub fn find_z2_symmetries(h: &PauliSum) -> StabilizerGroup {
    let n = h.n_qubits();
    let rows: Vec<Sv> = h.terms().iter().filter(|(_, p)| !p.is_identity()).map(|(_, p)| pack(p)).collect();
    let kernel = symplectic_kernel(n, &rows);
    let iso = isotropic_part(rref(kernel));
    let generators = rref(iso).into_iter().map(|v| unpack(n, v)).collect();
    StabilizerGroup { n, generators }
}

pub fn in_normalizer(p: &PauliString, s: &StabilizerGroup) -> bool {
    s.generators.iter().all(|g| p.commutes(g).unwrap_or(false))
}

/// Drops strings outside the normalizer, keeps one representative per
/// stabilizer coset and, for real Hamiltonians, only odd-Y strings.
///
/// The representative of a coset is the smallest `(x_bits, z_bits)` among
/// the surviving pool members of that coset. The output is sorted.
pub fn reduce_pool(pool: &[PauliString], s: &StabilizerGroup, real_hamiltonian: bool) -> Vec<PauliString> {
    let elements = s.element_keys();
    let mut cosets: BTreeMap<(u64, u64), PauliString> = BTreeMap::new();
    for p in pool {
        if p.is_identity() || !in_normalizer(p, s) {
            continue;
        }
        if real_hamiltonian && p.y_count() % 2 == 0 {
            continue;
        }
        let p = p.without_phase();
        let id = elements
            .iter()
            .map(|&(x, z)| (p.x_bits() ^ x, p.z_bits() ^ z))
            .min()
            .expect("group contains the identity");
        cosets
            .entry(id)
            .and_modify(|rep| {
                if p.key() < rep.key() {
                    *rep = p;
                }
            })
            .or_insert(p);
    }
    let mut out: Vec<PauliString> = cosets.into_values().collect();
    out.sort();
    out
}

/// `⟨g⟩` for every generator.
pub fn check_sector<S: SimState>(state: &S, s: &StabilizerGroup) -> Result<Vec<f64>> {
    s.generators.iter().map(|g| state.expectation_string(g).map(|v| v.re)).collect()
}

/// Sign vector of a state lying in a definite sector, or `None`.
pub fn sector_of<S: SimState>(state: &S, s: &StabilizerGroup, tol: f64) -> Result<Option<Vec<f64>>> {
    let vals = check_sector(state, s)?;
    if vals.iter().all(|v| (v.abs() - 1.0).abs() <= tol) {
        Ok(Some(vals.iter().map(|v| v.signum()).collect()))
    } else {
        Ok(None)
    }
}

/// True when every term of `h` has an even number of `Y` factors, i.e. the
/// matrix is real.
pub fn is_real_hamiltonian(h: &PauliSum) -> bool {
    h.terms().iter().all(|(_, p)| p.y_count() % 2 == 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::MaxAbs;
    use crate::pauli::{build_hamiltonian, pauli_pool, ModelSpec};
    use crate::statesim::StateVector;
    use num_complex::Complex64;

    fn s(n: usize, t: &str) -> PauliString {
        PauliString::parse_sparse(n, t).unwrap()
    }

    #[test]
    fn tfim_has_global_z_parity() {
        let h = build_hamiltonian(&ModelSpec::tfim(4, 1.0, 1.0)).unwrap();
        let g = find_z2_symmetries(&h);
        assert_eq!(g.generators(), &[s(4, "Z0Z1Z2Z3")]);
    }

    #[test]
    fn xxz_has_two_parities() {
        let h = build_hamiltonian(&ModelSpec::xxz(4, 1.0, 1.0)).unwrap();
        let g = find_z2_symmetries(&h);
        assert_eq!(g.d(), 2);
        assert!(g.generators().contains(&s(4, "Z0Z1Z2Z3")));
        assert!(g.generators().contains(&s(4, "X0X1X2X3")));
    }

    #[test]
    fn generators_commute_with_every_term() {
        for spec in [ModelSpec::tfim(3, 1.0, 0.3), ModelSpec::xxz(5, 1.0, 0.5), ModelSpec::xxz(3, 1.0, 2.0)] {
            let h = build_hamiltonian(&spec).unwrap();
            let g = find_z2_symmetries(&h);
            for gen in g.generators() {
                for (_, t) in h.terms() {
                    assert!(gen.commutes(t).unwrap());
                }
                for other in g.generators() {
                    assert!(gen.commutes(other).unwrap());
                }
            }
        }
    }

    #[test]
    fn free_qubit_yields_isotropic_generators() {
        // qubit 2 is untouched, so X2, Y2 and Z2 all commute with h but not
        // with each other
        let h = PauliSum::from_terms(3, [(1.0, s(3, "X0X1")), (0.5, s(3, "Z0"))]).unwrap();
        let g = find_z2_symmetries(&h);
        assert_eq!(g.d(), 2);
        StabilizerGroup::new(3, g.generators().to_vec()).unwrap();
    }

    #[test]
    fn normalizer_membership() {
        let z4 = StabilizerGroup::new(4, vec![s(4, "Z0Z1Z2Z3")]).unwrap();
        assert!(in_normalizer(&s(4, "X0Y1"), &z4));
        assert!(!in_normalizer(&s(4, "Y0"), &z4));
    }

    #[test]
    fn normalizer_matches_dense_commutator_on_two_qubits() {
        for gx in 0..4u64 {
            for gz in 0..4u64 {
                if gx == 0 && gz == 0 {
                    continue;
                }
                let gen = PauliString::from_bits(2, gx, gz, 0).unwrap();
                let grp = StabilizerGroup::new(2, vec![gen]).unwrap();
                let gm = gen.to_matrix().unwrap();
                for x in 0..4 {
                    for z in 0..4 {
                        let p = PauliString::from_bits(2, x, z, 0).unwrap();
                        let pm = p.to_matrix().unwrap();
                        let dense = (&pm * &gm - &gm * &pm).max_abs() < 1e-12;
                        assert_eq!(in_normalizer(&p, &grp), dense);
                    }
                }
            }
        }
    }

    #[test]
    fn tfim_d2_reduction_gives_six_strings() {
        let h = build_hamiltonian(&ModelSpec::tfim(4, 1.0, 1.0)).unwrap();
        let pool = pauli_pool(&h, 2).unwrap();
        let g = find_z2_symmetries(&h);
        let reduced = reduce_pool(&pool, &g, true);
        let mut names: Vec<String> = reduced.iter().map(|p| p.to_string()).collect();
        names.sort();
        let mut expect = vec!["X0Y1", "Y0X1", "X1Y2", "Y1X2", "X2Y3", "Y2X3"];
        expect.sort();
        assert_eq!(names, expect);
    }

    #[test]
    fn xxz_d4_reduction_gives_six_strings() {
        let h = build_hamiltonian(&ModelSpec::xxz(4, 1.0, 1.0)).unwrap();
        let pool = pauli_pool(&h, 4).unwrap();
        let g = find_z2_symmetries(&h);
        let reduced = reduce_pool(&pool, &g, true);
        let mut names: Vec<String> = reduced.iter().map(|p| p.to_string()).collect();
        names.sort();
        let mut expect = vec!["X0Y1Z2", "X0Z1Y2", "Y0X1Z2", "Y0Z1X2", "Z0X1Y2", "Z0Y1X2"];
        expect.sort();
        assert_eq!(names, expect);
    }

    #[test]
    fn tfim_d4_reduction_gives_28() {
        let h = build_hamiltonian(&ModelSpec::tfim(4, 3.0, 1.0)).unwrap();
        let pool = pauli_pool(&h, 4).unwrap();
        let g = find_z2_symmetries(&h);
        assert_eq!(reduce_pool(&pool, &g, true).len(), 28);
    }

    #[test]
    fn quotient_representatives_are_distinct_cosets() {
        let h = build_hamiltonian(&ModelSpec::xxz(4, 1.0, 0.7)).unwrap();
        let g = find_z2_symmetries(&h);
        let reduced = reduce_pool(&pauli_pool(&h, 4).unwrap(), &g, true);
        for p in &reduced {
            for (x, z) in g.element_keys().into_iter().skip(1) {
                let q = PauliString::from_bits(4, p.x_bits() ^ x, p.z_bits() ^ z, 0).unwrap();
                assert!(!reduced.contains(&q), "{p} and {q} share a coset");
            }
        }
    }

    #[test]
    fn reduction_ignores_input_order() {
        let h = build_hamiltonian(&ModelSpec::tfim(4, 1.0, 1.0)).unwrap();
        let g = find_z2_symmetries(&h);
        let mut pool = pauli_pool(&h, 4).unwrap();
        let a = reduce_pool(&pool, &g, true);
        pool.reverse();
        let b = reduce_pool(&pool, &g, true);
        pool.rotate_left(37);
        let c = reduce_pool(&pool, &g, true);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn sectors_of_example_states() {
        let z4 = StabilizerGroup::new(4, vec![s(4, "Z0Z1Z2Z3")]).unwrap();
        // "0001" with qubit 0 first: only qubit 3 is set
        let st = StateVector::basis_state(4, 0b1000);
        assert_eq!(check_sector(&st, &z4).unwrap(), vec![-1.0]);

        let both = StabilizerGroup::new(4, vec![s(4, "Z0Z1Z2Z3"), s(4, "X0X1X2X3")]).unwrap();
        let mut amps = vec![Complex64::new(0.0, 0.0); 16];
        amps[0b1010] = Complex64::new(1.0, 0.0);
        amps[0b0101] = Complex64::new(1.0, 0.0);
        let neel = StateVector::from_amplitudes(4, amps).unwrap();
        let v = check_sector(&neel, &both).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);

        let x4 = StabilizerGroup::new(4, vec![s(4, "X0X1X2X3")]).unwrap();
        let plus = StateVector::from_amplitudes(4, vec![Complex64::new(1.0, 0.0); 16]).unwrap();
        assert!((check_sector(&plus, &x4).unwrap()[0] - 1.0).abs() < 1e-12);
        assert_eq!(sector_of(&plus, &x4, 1e-9).unwrap(), Some(vec![1.0]));
    }

    #[test]
    fn group_validation() {
        assert!(StabilizerGroup::new(1, vec![s(1, "X0"), s(1, "Z0")]).is_err());
        assert!(StabilizerGroup::new(2, vec![s(2, "Z0Z1"), s(2, "Z0Z1")]).is_err());
        assert!(StabilizerGroup::new(2, vec![PauliString::identity(2)]).is_err());
    }
}
