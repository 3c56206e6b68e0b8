//! Quantum imaginary time evolution: each Trotter factor `e^{-Δτ H[l]}` is
//! replaced by a unitary `e^{-iΔτ Σ x_μ σ_μ}` whose coefficients solve a
//! small linear system built from measured Pauli expectations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, exp_hermitian, least_squares, CMat};
use crate::measure::{Estimator, ExactEstimator, QState, Sector};
use crate::pauli::{pauli_pool, trotter_group, ComplexPauliSum, PauliString, PauliSum, TrotterScheme};
use crate::recompile::{recompile_on_state, BrickTemplate, GateFamily, RecompileOptions};
use crate::statesim::{Circuit, Gate, NoiseModel, SimState, StateVector};
use crate::symmetry::{is_real_hamiltonian, reduce_pool, sector_of, StabilizerGroup};

const COEFF_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnitaryMode {
    /// One Pauli rotation per pool string, in canonical order.
    #[default]
    Trotterized,
    /// The whole step unitary as one dense gate.
    Exact,
    /// Each step unitary fitted to a brick circuit.
    Recompiled,
    /// Two-qubit chains with a one-string pool: all steps merge into a
    /// single rotation applied to the initial state.
    MergedTwoSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolReduction {
    /// The full windowed pool.
    None,
    /// Odd-Y strings only, when both Hamiltonian and initial state are real.
    RealOnly,
    /// Odd-Y filter plus one representative per stabilizer coset.
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecompileSettings {
    pub rounds: usize,
    pub family: GateFamily,
    pub target_fidelity: f64,
    pub max_iterations: usize,
    pub restarts: usize,
}

impl Default for RecompileSettings {
    fn default() -> Self {
        RecompileSettings {
            rounds: 3,
            family: GateFamily::Ry,
            target_fidelity: 0.999,
            max_iterations: 2000,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QiteConfig {
    pub delta_tau: f64,
    pub n_steps: usize,
    pub domain: usize,
    pub grouping: TrotterScheme,
    pub regularizer: f64,
    pub solver_tol: f64,
    /// Weight of the `ΔτH²` term in `b`.
    pub b_h2_weight: f64,
    pub unitary_mode: UnitaryMode,
    pub pool_reduction: PoolReduction,
    pub recompile: RecompileSettings,
}

impl Default for QiteConfig {
    fn default() -> Self {
        QiteConfig {
            delta_tau: 0.01,
            n_steps: 100,
            domain: 2,
            grouping: TrotterScheme::Single,
            regularizer: 0.2,
            solver_tol: 1e-10,
            b_h2_weight: 0.5,
            unitary_mode: UnitaryMode::Trotterized,
            pool_reduction: PoolReduction::Full,
            recompile: RecompileSettings::default(),
        }
    }
}

impl QiteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_tau > 0.0) || !self.delta_tau.is_finite() {
            return Err(Error::Config(format!("delta_tau must be positive, got {}", self.delta_tau)));
        }
        if !(self.regularizer >= 0.0) {
            return Err(Error::Config(format!("regularizer must be non-negative, got {}", self.regularizer)));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Config("solver_tol must be positive".into()));
        }
        if self.domain == 0 {
            return Err(Error::Config("domain must be at least 1".into()));
        }
        let r = &self.recompile;
        if !(r.target_fidelity > 0.0 && r.target_fidelity <= 1.0) {
            return Err(Error::Config("recompile target fidelity must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Number of steps that reach imaginary time `tau`.
    pub fn steps_to(&self, tau: f64) -> usize {
        (tau / self.delta_tau).round() as usize
    }
}

/// Measured expectations keyed by phase-free string.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpectationTable {
    values: BTreeMap<(u64, u64), (f64, f64)>,
}

impl ExpectationTable {
    pub fn insert(&mut self, p: &PauliString, value: f64, variance: f64) {
        self.values.insert(p.key(), (value, variance));
    }

    /// `⟨p⟩` including the phase of `p`.
    pub fn get(&self, p: &PauliString) -> Option<Complex64> {
        if p.is_identity() {
            return Some(p.phase_factor());
        }
        self.values.get(&p.key()).map(|(v, _)| p.phase_factor() * v)
    }

    pub fn variance(&self, p: &PauliString) -> Option<f64> {
        if p.is_identity() {
            return Some(0.0);
        }
        self.values.get(&p.key()).map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn lookup(&self, p: &PauliString) -> Result<f64> {
        self.get(&p.without_phase())
            .map(|v| v.re)
            .ok_or_else(|| Error::InvalidArgument(format!("no measurement recorded for {p}")))
    }

    /// `Re⟨s⟩`, reading only strings with a nonzero real coefficient.
    pub fn re(&self, s: &ComplexPauliSum) -> Result<f64> {
        let mut acc = 0.0;
        for (c, p) in s.iter() {
            if c.re.abs() > COEFF_EPS {
                acc += c.re * self.lookup(&p)?;
            }
        }
        Ok(acc)
    }

    /// `Im⟨s⟩`, reading only strings with a nonzero imaginary coefficient.
    pub fn im(&self, s: &ComplexPauliSum) -> Result<f64> {
        let mut acc = 0.0;
        for (c, p) in s.iter() {
            if c.im.abs() > COEFF_EPS {
                acc += c.im * self.lookup(&p)?;
            }
        }
        Ok(acc)
    }
}

/// Operator products needed for one Trotter group, expanded once.
#[derive(Debug, Clone)]
pub struct GroupPlan {
    pub hl: PauliSum,
    pub pool: Vec<PauliString>,
    h: ComplexPauliSum,
    h2: ComplexPauliSum,
    sigma_sigma: Vec<(usize, usize, ComplexPauliSum)>,
    h_sigma: Vec<ComplexPauliSum>,
    h2_sigma: Vec<ComplexPauliSum>,
    required: Vec<PauliString>,
}

fn collect(set: &mut BTreeSet<PauliString>, s: &ComplexPauliSum, real: bool) {
    for (c, p) in s.iter() {
        let part = if real { c.re } else { c.im };
        if part.abs() > COEFF_EPS && !p.is_identity() {
            set.insert(p);
        }
    }
}

impl GroupPlan {
    pub fn new(hl: &PauliSum, pool: &[PauliString]) -> Result<Self> {
        let n = hl.n_qubits();
        for p in pool {
            if p.n_qubits() != n {
                return Err(Error::SizeMismatch(n, p.n_qubits()));
            }
        }
        let h = ComplexPauliSum::from_sum(hl);
        let h2 = h.multiply(&h)?;
        let sig: Vec<ComplexPauliSum> = pool.iter().map(ComplexPauliSum::from_string).collect();
        let mut required = BTreeSet::new();
        collect(&mut required, &h, true);
        collect(&mut required, &h2, true);
        let mut sigma_sigma = Vec::new();
        for (i, a) in sig.iter().enumerate() {
            for (j, b) in sig.iter().enumerate().skip(i + 1) {
                let prod = a.multiply(b)?;
                collect(&mut required, &prod, true);
                sigma_sigma.push((i, j, prod));
            }
        }
        let mut h_sigma = Vec::with_capacity(pool.len());
        let mut h2_sigma = Vec::with_capacity(pool.len());
        for s in &sig {
            let hs = h.multiply(s)?;
            let h2s = h2.multiply(s)?;
            collect(&mut required, &hs, false);
            collect(&mut required, &h2s, false);
            h_sigma.push(hs);
            h2_sigma.push(h2s);
        }
        Ok(GroupPlan {
            hl: hl.clone(),
            pool: pool.to_vec(),
            h,
            h2,
            sigma_sigma,
            h_sigma,
            h2_sigma,
            required: required.into_iter().collect(),
        })
    }

    /// Distinct strings one step has to measure.
    pub fn required_strings(&self) -> &[PauliString] {
        &self.required
    }
}

/// Measures every distinct string required by `plan`, plus `extra`, once.
pub fn measure_system_operators(
    state: &QState,
    plan: &GroupPlan,
    extra: &[PauliString],
    estimator: &mut dyn Estimator,
) -> Result<ExpectationTable> {
    let strings: BTreeSet<PauliString> = plan
        .required
        .iter()
        .chain(extra.iter().filter(|p| !p.is_identity()))
        .map(PauliString::without_phase)
        .collect();
    let strings: Vec<PauliString> = strings.into_iter().collect();
    let estimates = estimator.estimate(state, &strings)?;
    let mut table = ExpectationTable::default();
    for (p, e) in strings.iter().zip(estimates) {
        table.insert(p, e.value, e.variance);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

/// `h2_weight` multiplies the `ΔτH²` term of `b`: `0.5` is the Taylor
/// coefficient of `e^{-ΔτH}`, `1.0` the literal form some write-ups use.
pub fn build_linear_system(
    table: &ExpectationTable,
    plan: &GroupPlan,
    delta_tau: f64,
    h2_weight: f64,
) -> Result<LinearSystem> {
    let m = plan.pool.len();
    let e = table.re(&plan.h)?;
    let e2 = table.re(&plan.h2)?;
    let c = 1.0 - 2.0 * delta_tau * e + 2.0 * delta_tau * delta_tau * e2;
    if !(c > 0.0) {
        return Err(Error::NonPositiveNorm(c));
    }
    let mut a = DMatrix::identity(m, m);
    for (i, j, prod) in &plan.sigma_sigma {
        let v = table.re(prod)?;
        a[(*i, *j)] = v;
        a[(*j, *i)] = v;
    }
    let sqrt_c = c.sqrt();
    let mut b = DVector::zeros(m);
    for mu in 0..m {
        let v = -table.im(&plan.h_sigma[mu])? + h2_weight * delta_tau * table.im(&plan.h2_sigma[mu])?;
        b[mu] = v / sqrt_c;
    }
    Ok(LinearSystem { a, b, c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub x: DVector<f64>,
    pub residual: f64,
    /// True when conjugate gradients missed the tolerance and the dense
    /// least-squares solution was used.
    pub fallback: bool,
}

/// Solves `(A + λI)x = b` by conjugate gradients, falling back to dense
/// least squares.
pub fn solve_step(a: &DMatrix<f64>, b: &DVector<f64>, regularizer: f64, tol: f64) -> StepSolution {
    let dim = b.len();
    let cg = conjugate_gradient(a, b, regularizer, tol, 10 * dim.max(1));
    if cg.converged && cg.x.iter().all(|v| v.is_finite()) {
        return StepSolution { x: cg.x, residual: cg.residual, fallback: false };
    }
    let x = least_squares(a, b, regularizer);
    let residual = (b - (a * &x + &x * regularizer)).norm();
    StepSolution { x, residual, fallback: true }
}

/// `Σ x_μ σ_μ` as a dense matrix.
pub fn generator_matrix(pool: &[PauliString], x: &[f64]) -> Result<CMat> {
    let n = pool.first().map_or(1, PauliString::n_qubits);
    let terms = pool.iter().zip(x).map(|(p, v)| (*v, *p));
    PauliSum::from_terms(n, terms)?.to_matrix()
}

/// Circuit for one step in the trotterized, exact or (single-string)
/// merged representation.
pub fn step_circuit(pool: &[PauliString], x: &[f64], delta_tau: f64, mode: UnitaryMode) -> Result<Circuit> {
    if pool.len() != x.len() {
        return Err(Error::SizeMismatch(pool.len(), x.len()));
    }
    let n = match pool.first() {
        Some(p) => p.n_qubits(),
        None => return Err(Error::InvalidArgument("empty pool".into())),
    };
    let mut c = Circuit::new(n);
    match mode {
        UnitaryMode::Trotterized => {
            for (p, v) in pool.iter().zip(x) {
                c.push(Gate::PauliRotation { pauli: *p, angle: 2.0 * delta_tau * v })?;
            }
        }
        UnitaryMode::MergedTwoSite => {
            if pool.len() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "merged mode needs a one-string pool, got {}",
                    pool.len()
                )));
            }
            c.push(Gate::PauliRotation { pauli: pool[0], angle: 2.0 * delta_tau * x[0] })?;
        }
        UnitaryMode::Exact => {
            let g = generator_matrix(pool, x)?;
            let u = exp_hermitian(&g, Complex64::new(0.0, -delta_tau));
            c.push(Gate::DenseUnitary { targets: (0..n).collect(), matrix: u })?;
        }
        UnitaryMode::Recompiled => {
            return Err(Error::InvalidArgument("recompiled steps need a reference state; use run_qite".into()));
        }
    }
    Ok(c)
}

/// Applies one QITE unitary to `state`.
pub fn apply_qite_unitary(
    state: &mut QState,
    pool: &[PauliString],
    x: &[f64],
    delta_tau: f64,
    mode: UnitaryMode,
    noise: Option<&NoiseModel>,
) -> Result<()> {
    let c = step_circuit(pool, x, delta_tau, mode)?;
    state.apply_circuit(&c, noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QiteStepRecord {
    pub step: usize,
    pub group: usize,
    /// `⟨H⟩` on the state entering this step.
    pub energy: f64,
    pub c: f64,
    pub x: Vec<f64>,
    pub residual: f64,
    /// Fit fidelity when the step was recompiled.
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct QiteTrajectory {
    pub label: String,
    pub delta_tau: f64,
    pub pools: Vec<Vec<PauliString>>,
    pub records: Vec<QiteStepRecord>,
    /// `E_k` on the state entering step `k`, for completed steps.
    pub step_energies: Vec<f64>,
    /// Sampling variance of each `E_k`.
    pub step_energy_variances: Vec<f64>,
    /// `⟨H⟩` after the last completed step.
    pub final_energy: f64,
    pub state: QState,
    /// Noiseless evolution under the same circuit.
    pub ideal: StateVector,
    /// State after `k` completed steps, for `k = 0..=steps_completed()`.
    pub snapshots: Vec<QState>,
    pub ideal_snapshots: Vec<StateVector>,
    pub circuit: Circuit,
    /// Generators used for pool reduction, with the initial sector.
    pub symmetries: StabilizerGroup,
    pub sector: Vec<f64>,
    pub aborted: Option<String>,
}

impl QiteTrajectory {
    pub fn steps_completed(&self) -> usize {
        self.step_energies.len()
    }

    /// `ln P = -2Δτ Σ_k E_k`.
    pub fn log_weight(&self) -> f64 {
        -2.0 * self.delta_tau * self.step_energies.iter().sum::<f64>()
    }

    pub fn weight(&self) -> f64 {
        self.log_weight().exp()
    }

    /// `P` after the first `k` steps and its first-order sampling variance.
    pub fn weight_at(&self, k: usize) -> (f64, f64) {
        let k = k.min(self.steps_completed());
        let scale = 2.0 * self.delta_tau;
        let p = (-scale * self.step_energies[..k].iter().sum::<f64>()).exp();
        let var_sum: f64 = self.step_energy_variances[..k].iter().sum();
        (p, p * p * scale * scale * var_sum)
    }

    /// `(τ_k, E_k)` for `k = 0..=steps`, the last point after the final step.
    pub fn energy_curve(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> =
            self.step_energies.iter().enumerate().map(|(k, e)| (k as f64 * self.delta_tau, *e)).collect();
        out.push((self.steps_completed() as f64 * self.delta_tau, self.final_energy));
        out
    }

    /// Recompiled steps whose fit reached `target`, over all recompiled
    /// steps.
    pub fn fit_success(&self, target: f64) -> Option<(usize, usize)> {
        let fits: Vec<f64> = self.records.iter().filter_map(|r| r.fidelity).collect();
        (!fits.is_empty()).then(|| (fits.iter().filter(|f| **f >= target).count(), fits.len()))
    }

    /// One line per record: `step group energy c x...`.
    pub fn write_records<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            write!(w, "{} {} {} {}", r.step, r.group, r.energy, r.c)?;
            for v in &r.x {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Parses the output of [`QiteTrajectory::write_records`].
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<QiteStepRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Config(format!("trajectory line {}: bad {what}", i + 1));
        let mut f = line.split_whitespace();
        let step = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("step"))?;
        let group = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("group"))?;
        let energy = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("energy"))?;
        let c = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("c"))?;
        let x = f.map(|s| s.parse::<f64>().map_err(|_| bad("coefficient"))).collect::<Result<Vec<_>>>()?;
        out.push(QiteStepRecord { step, group, energy, c, x, residual: 0.0, fidelity: None });
    }
    Ok(out)
}

fn is_real_state(psi: &StateVector) -> bool {
    psi.amplitudes().iter().all(|a| a.im.abs() < 1e-12)
}

/// Generators of `s` the state is an eigenstate of, with their signs.
pub fn definite_generators(psi: &StateVector, s: &StabilizerGroup) -> Result<(StabilizerGroup, Vec<f64>)> {
    let mut keep = Vec::new();
    let mut signs = Vec::new();
    for g in s.generators() {
        let single = s.restricted(&[*g]);
        if let Some(v) = sector_of(psi, &single, 1e-9)? {
            keep.push(*g);
            signs.push(v[0]);
        }
    }
    Ok((s.restricted(&keep), signs))
}

/// Reduced pools for every Trotter group of `h`.
pub fn build_pools(
    h: &PauliSum,
    config: &QiteConfig,
    symmetries: &StabilizerGroup,
    real: bool,
) -> Result<Vec<(PauliSum, Vec<PauliString>)>> {
    let grouping = trotter_group(h, config.grouping)?;
    let empty = StabilizerGroup::empty(h.n_qubits());
    grouping
        .groups
        .into_iter()
        .map(|hl| {
            let pool = pauli_pool(&hl, config.domain)?;
            let pool = match config.pool_reduction {
                PoolReduction::None => pool,
                PoolReduction::RealOnly => reduce_pool(&pool, &empty, real),
                PoolReduction::Full => reduce_pool(&pool, symmetries, real),
            };
            Ok((hl, pool))
        })
        .collect()
}

/// Noiseless QITE with exact expectations.
pub fn run_qite(
    initial: &StateVector,
    h: &PauliSum,
    config: &QiteConfig,
    symmetries: &StabilizerGroup,
) -> Result<QiteTrajectory> {
    run_qite_with(initial, h, config, symmetries, &mut ExactEstimator, None, "")
}

/// QITE with a caller-supplied estimator and optional gate/readout noise.
///
/// Configuration and size errors are returned as `Err`. Numerical failures
/// inside a step stop the run and are reported in `aborted`, keeping the
/// steps completed so far.
pub fn run_qite_with(
    initial: &StateVector,
    h: &PauliSum,
    config: &QiteConfig,
    symmetries: &StabilizerGroup,
    estimator: &mut dyn Estimator,
    noise: Option<&NoiseModel>,
    label: &str,
) -> Result<QiteTrajectory> {
    config.validate()?;
    let n = h.n_qubits();
    if initial.n_qubits() != n {
        return Err(Error::SizeMismatch(n, initial.n_qubits()));
    }
    if (initial.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::NonPositiveNorm(initial.norm()));
    }
    if config.unitary_mode == UnitaryMode::MergedTwoSite && n != 2 {
        return Err(Error::Config(format!("merged_two_site needs a two-qubit chain, got {n}")));
    }
    let (sym, sector) = definite_generators(initial, symmetries)?;
    let real = is_real_hamiltonian(h) && is_real_state(initial);
    let groups = build_pools(h, config, &sym, real)?;
    if config.unitary_mode == UnitaryMode::MergedTwoSite && (groups.len() != 1 || groups[0].1.len() != 1) {
        return Err(Error::Config("merged_two_site needs one group with a one-string pool".into()));
    }
    let plans = groups.iter().map(|(hl, pool)| GroupPlan::new(hl, pool)).collect::<Result<Vec<_>>>()?;
    let sector_gen = sym
        .generators()
        .iter()
        .zip(&sector)
        .find(|(g, _)| g.is_z_type() || g.is_x_type())
        .map(|(g, s)| Sector { generator: *g, sign: *s as i8 });
    estimator.set_sector(sector_gen);
    let h_strings: Vec<PauliString> = h.terms().iter().map(|(_, p)| *p).collect();
    let energy_of = |t: &ExpectationTable| -> Result<(f64, f64)> {
        let mut e = 0.0;
        let mut var = 0.0;
        for (c, p) in h.terms() {
            let missing = || Error::InvalidArgument(format!("no measurement recorded for {p}"));
            e += c * t.get(p).ok_or_else(missing)?.re;
            var += c * c * t.variance(p).ok_or_else(missing)?;
        }
        Ok((e, var))
    };

    let mut traj = QiteTrajectory {
        label: label.to_string(),
        delta_tau: config.delta_tau,
        pools: groups.iter().map(|(_, p)| p.clone()).collect(),
        records: Vec::new(),
        step_energies: Vec::new(),
        step_energy_variances: Vec::new(),
        final_energy: f64::NAN,
        state: QState::prepare(initial, noise),
        ideal: initial.clone(),
        snapshots: vec![QState::prepare(initial, noise)],
        ideal_snapshots: vec![initial.clone()],
        circuit: Circuit::new(n),
        symmetries: sym,
        sector,
        aborted: None,
    };
    let mut prop = Propagator::new(initial, config, noise, label);

    'steps: for step in 0..config.n_steps {
        let mut step_energy: Option<(f64, f64)> = None;
        for (l, plan) in plans.iter().enumerate() {
            let extra: &[PauliString] = if l == 0 { &h_strings } else { &[] };
            let outcome = (|| -> Result<(QiteStepRecord, Circuit)> {
                let table = measure_system_operators(&traj.state, plan, extra, estimator)?;
                if l == 0 {
                    step_energy = Some(energy_of(&table)?);
                }
                let sys = build_linear_system(&table, plan, config.delta_tau, config.b_h2_weight)?;
                let sol = solve_step(&sys.a, &sys.b, config.regularizer, config.solver_tol);
                let x: Vec<f64> = sol.x.iter().copied().collect();
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonPositiveNorm(f64::NAN));
                }
                let (circuit, fidelity) = prop.step(&traj.ideal, &plan.pool, &x)?;
                let record = QiteStepRecord {
                    step,
                    group: l,
                    energy: step_energy.map_or(f64::NAN, |e| e.0),
                    c: sys.c,
                    x,
                    residual: sol.residual,
                    fidelity,
                };
                Ok((record, circuit))
            })();
            match outcome {
                Ok((record, circuit)) => {
                    prop.advance(&mut traj, &circuit)?;
                    traj.records.push(record);
                }
                Err(e) => {
                    traj.aborted = Some(format!("step {step}, group {l}: {e}"));
                    break 'steps;
                }
            }
        }
        let (e, var) = step_energy.expect("group 0 measured the energy");
        traj.step_energies.push(e);
        traj.step_energy_variances.push(var);
        traj.snapshots.push(traj.state.clone());
        traj.ideal_snapshots.push(traj.ideal.clone());
    }
    let finals = estimator.estimate(&traj.state, &h_strings)?;
    traj.final_energy = h.terms().iter().zip(finals).map(|((c, _), e)| c * e.value).sum();
    Ok(traj)
}

/// Turns solved coefficients into circuits according to the unitary mode.
struct Propagator<'a> {
    mode: UnitaryMode,
    delta_tau: f64,
    noise: Option<&'a NoiseModel>,
    initial: StateVector,
    settings: RecompileSettings,
    label: String,
    warm: Option<Vec<f64>>,
    merged_angle: f64,
    fits: usize,
}

impl<'a> Propagator<'a> {
    fn new(initial: &StateVector, config: &QiteConfig, noise: Option<&'a NoiseModel>, label: &str) -> Self {
        Propagator {
            mode: config.unitary_mode,
            delta_tau: config.delta_tau,
            noise,
            initial: initial.clone(),
            settings: config.recompile.clone(),
            label: label.to_string(),
            warm: None,
            merged_angle: 0.0,
            fits: 0,
        }
    }

    fn step(&mut self, ideal: &StateVector, pool: &[PauliString], x: &[f64]) -> Result<(Circuit, Option<f64>)> {
        match self.mode {
            UnitaryMode::Recompiled => {
                let n = ideal.n_qubits();
                let u = exp_hermitian(&generator_matrix(pool, x)?, Complex64::new(0.0, -self.delta_tau));
                let template = BrickTemplate::new(n, self.settings.rounds, self.settings.family)?;
                let opts = RecompileOptions {
                    target_fidelity: self.settings.target_fidelity,
                    max_iterations: self.settings.max_iterations,
                    restarts: self.settings.restarts,
                    seed: self.fits as u64,
                    warm_start: self.warm.clone(),
                    label: format!("{} step {}", self.label, self.fits),
                    ..RecompileOptions::default()
                };
                self.fits += 1;
                let fit = recompile_on_state(&u, ideal, &template, &opts)?;
                if fit.reached {
                    let c = template.circuit(&fit.parameters)?;
                    self.warm = Some(fit.parameters);
                    Ok((c, Some(fit.fidelity)))
                } else {
                    let c = step_circuit(pool, x, self.delta_tau, UnitaryMode::Trotterized)?;
                    Ok((c, Some(fit.fidelity)))
                }
            }
            UnitaryMode::MergedTwoSite => {
                self.merged_angle += 2.0 * self.delta_tau * x[0];
                let mut c = Circuit::new(pool[0].n_qubits());
                c.push(Gate::PauliRotation { pauli: pool[0], angle: self.merged_angle })?;
                Ok((c, None))
            }
            mode => Ok((step_circuit(pool, x, self.delta_tau, mode)?, None)),
        }
    }

    /// Applies the step circuit. In merged mode the circuit replaces
    /// everything applied so far.
    fn advance(&self, traj: &mut QiteTrajectory, circuit: &Circuit) -> Result<()> {
        if self.mode == UnitaryMode::MergedTwoSite {
            traj.state = QState::prepare(&self.initial, self.noise);
            traj.ideal = self.initial.clone();
            traj.circuit = Circuit::new(circuit.n_qubits());
        }
        traj.state.apply_circuit(circuit, self.noise)?;
        traj.ideal.apply_circuit(circuit, None)?;
        traj.circuit.extend(circuit)
    }
}
