//! Finite-temperature observables by full or stochastic trace evaluation,
//! the ancilla circuit for dynamical correlations, and spectral densities.

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{exp_hermitian, CMat};
use crate::measure::{derive_seed, Backend, Estimator, QState, Sector};
use crate::pauli::{PauliString, PauliSum};
use crate::qite::{run_qite_with, QiteConfig, QiteTrajectory};
use crate::recompile::{kak_decompose, recompile_on_state, recompile_unitary, BrickTemplate, GateFamily, RecompileOptions};
use crate::statesim::{Circuit, DensityMatrix, Gate, SimState, StateVector};
use crate::symmetry::{find_z2_symmetries, StabilizerGroup};

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    #[default]
    Full,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub mode: TraceMode,
    pub n_samples: usize,
    pub betas: Vec<f64>,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig { mode: TraceMode::Full, n_samples: 10, betas: vec![0.0], seed: 0 }
    }
}

/// Imaginary-time steps that reach `β/2`, or an error when `β` is off the
/// `2Δτ` grid.
pub fn half_steps(beta: f64, delta_tau: f64) -> Result<usize> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!("β = {beta} must be finite and non-negative")));
    }
    let k = beta / (2.0 * delta_tau);
    if (k - k.round()).abs() > GRID_TOL * k.max(1.0) {
        return Err(Error::Config(format!("β = {beta} is not a multiple of 2Δτ = {}", 2.0 * delta_tau)));
    }
    Ok(k.round() as usize)
}

/// `β = 0, 2Δτ, 4Δτ, …` up to `beta_max`.
pub fn beta_grid(beta_max: f64, delta_tau: f64, stride: usize) -> Vec<f64> {
    let step = 2.0 * delta_tau * stride.max(1) as f64;
    let n = (beta_max / step + GRID_TOL).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

impl TraceConfig {
    pub fn validate(&self, n_qubits: usize, delta_tau: f64) -> Result<()> {
        for &b in &self.betas {
            half_steps(b, delta_tau)?;
        }
        if self.mode == TraceMode::Stochastic {
            let dim = 1usize << n_qubits;
            if self.n_samples == 0 || self.n_samples > dim {
                return Err(Error::Config(format!("n_samples must lie in 1..={dim}, got {}", self.n_samples)));
            }
        }
        Ok(())
    }

    /// Basis states to evolve: all of them, or a uniform sample without
    /// replacement.
    pub fn select_states(&self, n_qubits: usize) -> Vec<u64> {
        let dim = 1usize << n_qubits;
        match self.mode {
            TraceMode::Full => (0..dim as u64).collect(),
            TraceMode::Stochastic => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut picked: Vec<u64> =
                    sample(&mut rng, dim, self.n_samples.min(dim)).into_iter().map(|i| i as u64).collect();
                picked.sort_unstable();
                picked
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalPoint {
    pub beta: f64,
    pub value: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThermalSeries {
    pub points: Vec<ThermalPoint>,
}

impl ThermalSeries {
    pub fn betas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.beta).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }
}

/// One initial state's contribution at one `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSample {
    pub p: f64,
    pub var_p: f64,
    pub o: f64,
    pub var_o: f64,
}

fn check_lengths(p: &[f64], var_p: &[f64], o: &[f64], var_o: &[f64]) -> Result<()> {
    let n = p.len();
    if var_p.len() != n || o.len() != n || var_o.len() != n {
        return Err(Error::InvalidArgument("weight and observable lists differ in length".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    Ok(())
}

/// First-order variance of `Σ P_i O_i / Σ P_i` with independent `P_i`, `O_i`.
pub fn variance_full(p: &[f64], var_p: &[f64], o: &[f64], var_o: &[f64]) -> Result<f64> {
    check_lengths(p, var_p, o, var_o)?;
    let sp: f64 = p.iter().sum();
    if sp.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroDenominator("sum of weights"));
    }
    let mean = p.iter().zip(o).map(|(a, b)| a * b).sum::<f64>() / sp;
    let num: f64 = (0..p.len()).map(|i| p[i] * p[i] * var_o[i] + (o[i] - mean).powi(2) * var_p[i]).sum();
    Ok(num / (sp * sp))
}

/// Variance of `𝖭/𝖣` for a uniform sample, including the spread between
/// sampled states.
pub fn variance_stochastic(p: &[f64], var_p: &[f64], o: &[f64], var_o: &[f64]) -> Result<f64> {
    check_lengths(p, var_p, o, var_o)?;
    let n = p.len() as f64;
    let en = p.iter().zip(o).map(|(a, b)| a * b).sum::<f64>() / n;
    let ed = p.iter().sum::<f64>() / n;
    if ed.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroDenominator("mean weight"));
    }
    let var_n: f64 = (0..p.len())
        .map(|i| (p[i] * o[i] - en).powi(2) + p[i] * p[i] * var_o[i] + o[i] * o[i] * var_p[i])
        .sum::<f64>()
        / (n * n);
    let var_d: f64 = (0..p.len()).map(|i| (p[i] - ed).powi(2) + var_p[i]).sum::<f64>() / (n * n);
    Ok((en * en * var_d + ed * ed * var_n) / ed.powi(4))
}

/// Weighted average over initial states with the variance formula of the
/// trace mode.
pub fn aggregate(samples: &[StateSample], mode: TraceMode) -> Result<(f64, f64)> {
    let p: Vec<f64> = samples.iter().map(|s| s.p).collect();
    let var_p: Vec<f64> = samples.iter().map(|s| s.var_p).collect();
    let o: Vec<f64> = samples.iter().map(|s| s.o).collect();
    let var_o: Vec<f64> = samples.iter().map(|s| s.var_o).collect();
    check_lengths(&p, &var_p, &o, &var_o)?;
    let sp: f64 = p.iter().sum();
    if sp.abs() < f64::MIN_POSITIVE {
        return Err(Error::ZeroDenominator("sum of weights"));
    }
    let value = p.iter().zip(&o).map(|(a, b)| a * b).sum::<f64>() / sp;
    let variance = match mode {
        TraceMode::Full => variance_full(&p, &var_p, &o, &var_o)?,
        TraceMode::Stochastic => variance_stochastic(&p, &var_p, &o, &var_o)?,
    };
    Ok((value, variance))
}

fn measure_sum(est: &mut dyn Estimator, state: &QState, o: &PauliSum) -> Result<(f64, f64)> {
    let strings: Vec<PauliString> = o.terms().iter().map(|(_, p)| *p).collect();
    let est = est.estimate(state, &strings)?;
    let mut value = 0.0;
    let mut var = 0.0;
    for ((c, _), e) in o.terms().iter().zip(est) {
        value += c * e.value;
        var += c * c * e.variance;
    }
    Ok((value, var))
}

struct Evolved {
    traj: QiteTrajectory,
    estimator: Box<dyn Estimator>,
}

fn evolve(
    index: u64,
    h: &PauliSum,
    symmetries: &StabilizerGroup,
    qite: &QiteConfig,
    n_steps: usize,
    backend: &Backend,
) -> Result<Evolved> {
    let n = h.n_qubits();
    let cfg = QiteConfig { n_steps, ..qite.clone() };
    let mut estimator = backend.estimator(n, index)?;
    let noise = backend.noise_model(n)?;
    let psi = StateVector::basis_state(n, index);
    let label = format!("basis {index}");
    let traj = run_qite_with(&psi, h, &cfg, symmetries, estimator.as_mut(), noise.as_ref(), &label)?;
    Ok(Evolved { traj, estimator })
}

/// Several observables evaluated on shared QITE trajectories, one series per
/// observable over `trace.betas`.
pub fn thermal_observables(
    observables: &[PauliSum],
    h: &PauliSum,
    trace: &TraceConfig,
    qite: &QiteConfig,
    backend: &Backend,
) -> Result<Vec<ThermalSeries>> {
    let n = h.n_qubits();
    qite.validate()?;
    trace.validate(n, qite.delta_tau)?;
    for o in observables {
        if o.n_qubits() != n {
            return Err(Error::SizeMismatch(n, o.n_qubits()));
        }
    }
    let steps: Vec<usize> = trace.betas.iter().map(|&b| half_steps(b, qite.delta_tau)).collect::<Result<_>>()?;
    let max_steps = steps.iter().copied().max().unwrap_or(0);
    let symmetries = find_z2_symmetries(h);
    // samples[beta][observable] -> per-state contributions
    let mut samples = vec![vec![Vec::new(); observables.len()]; steps.len()];
    let mut aborts = Vec::new();
    for index in trace.select_states(n) {
        let Evolved { traj, mut estimator } = evolve(index, h, &symmetries, qite, max_steps, backend)?;
        if let Some(msg) = &traj.aborted {
            aborts.push(format!("basis {index}: {msg}"));
        }
        for (bi, &k) in steps.iter().enumerate() {
            if k > traj.steps_completed() {
                continue;
            }
            let (p, var_p) = traj.weight_at(k);
            for (oi, o) in observables.iter().enumerate() {
                let (value, var_o) = measure_sum(estimator.as_mut(), &traj.snapshots[k], o)?;
                samples[bi][oi].push(StateSample { p, var_p, o: value, var_o });
            }
        }
    }
    let mut out = vec![ThermalSeries::default(); observables.len()];
    for (bi, &beta) in trace.betas.iter().enumerate() {
        for (oi, series) in out.iter_mut().enumerate() {
            if trace.mode == TraceMode::Full && beta == 0.0 {
                let value = observables[oi].identity_coefficient();
                series.points.push(ThermalPoint { beta, value, variance: 0.0 });
                continue;
            }
            if samples[bi][oi].is_empty() {
                return Err(Error::Aborted(format!("every trajectory aborted before β = {beta}: {}", aborts.join("; "))));
            }
            let (value, variance) = aggregate(&samples[bi][oi], trace.mode)?;
            series.points.push(ThermalPoint { beta, value, variance });
        }
    }
    Ok(out)
}

pub fn thermal_observable(
    o: &PauliSum,
    h: &PauliSum,
    trace: &TraceConfig,
    qite: &QiteConfig,
    backend: &Backend,
) -> Result<ThermalSeries> {
    Ok(thermal_observables(std::slice::from_ref(o), h, trace, qite, backend)?.remove(0))
}

/// A correlation function sampled on the uniform grid `t_m = m·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries {
    pub beta: f64,
    pub dt: f64,
    pub values: Vec<Complex64>,
    pub var_re: Vec<f64>,
    pub var_im: Vec<f64>,
    pub corrected: bool,
}

impl CorrelationSeries {
    pub fn new(beta: f64, dt: f64, values: Vec<Complex64>, var_re: Vec<f64>, var_im: Vec<f64>) -> Result<Self> {
        if values.len() != var_re.len() || values.len() != var_im.len() {
            return Err(Error::InvalidArgument("series and variance lengths differ".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step {dt} is not positive")));
        }
        Ok(CorrelationSeries { beta, dt, values, var_re, var_im, corrected: false })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|m| m as f64 * self.dt).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// Dense `e^{-iHt}` on the system register.
    #[default]
    ExactPropagator,
    /// `e^{-iHt}` fitted to a brick circuit for each time point.
    Recompiled,
    /// Two-qubit propagators as KAK circuits with at most three CNOTs.
    Kak,
}

/// State on which recompiled propagators are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitState {
    /// Ancilla and system after controlled-`V`, keeping the coherence
    /// between the two branches.
    #[default]
    Joint,
    /// Reduced system state `(ρ + VρV)/2` seen by the propagator block.
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationConfig {
    pub u: PauliString,
    pub v: PauliString,
    pub dt: f64,
    pub n_t: usize,
    pub time_mode: TimeMode,
    pub rounds: usize,
    pub family: GateFamily,
    pub fit_state: FitState,
    pub target_fidelity: f64,
    pub max_iterations: usize,
    pub restarts: usize,
}

impl CorrelationConfig {
    /// `⟨U(t)V⟩` on `n_t` points spaced `dt`, exact propagator.
    pub fn new(u: PauliString, v: PauliString, dt: f64, n_t: usize) -> Self {
        CorrelationConfig {
            u,
            v,
            dt,
            n_t,
            time_mode: TimeMode::ExactPropagator,
            rounds: 5,
            family: GateFamily::U3,
            fit_state: FitState::Joint,
            target_fidelity: 0.999,
            max_iterations: 2000,
            restarts: 5,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_t).map(|m| m as f64 * self.dt).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRun {
    pub series: CorrelationSeries,
    /// Fit fidelity of every recompiled propagator, in evaluation order.
    pub fit_fidelities: Vec<f64>,
}

fn extend(p: &PauliString, n: usize) -> PauliString {
    PauliString::from_bits(n, p.x_bits(), p.z_bits(), p.phase_exp()).expect("register grows")
}

fn embed(c: &Circuit, n: usize) -> Result<Circuit> {
    let mut out = Circuit::new(n);
    for g in c.gates() {
        out.push(g.clone())?;
    }
    Ok(out)
}

/// Ancilla preparation and controlled-`V` on an `n + 1` qubit register
/// whose top qubit is the ancilla.
fn prefix(v: &PauliString) -> Result<Circuit> {
    let n = v.n_qubits();
    let mut c = Circuit::new(n + 1);
    c.push(Gate::hadamard(n))?;
    c.push(Gate::ControlledUnitary { control: n, targets: (0..n).collect(), matrix: v.to_matrix()? })?;
    Ok(c)
}

fn suffix(u: &PauliString) -> Result<Circuit> {
    let n = u.n_qubits();
    let mut c = Circuit::new(n + 1);
    c.push(Gate::ControlledUnitary { control: n, targets: (0..n).collect(), matrix: u.to_matrix()? })?;
    Ok(c)
}

/// Circuit for `e^{-iHt}` acting on the system qubits of the extended
/// register.
fn propagator_circuit(u_t: &CMat, n: usize, mode: TimeMode) -> Result<Circuit> {
    match mode {
        TimeMode::ExactPropagator | TimeMode::Recompiled => {
            let mut c = Circuit::new(n + 1);
            c.push(Gate::DenseUnitary { targets: (0..n).collect(), matrix: u_t.clone() })?;
            Ok(c)
        }
        TimeMode::Kak => {
            if n != 2 {
                return Err(Error::Config(format!("kak time evolution needs two system qubits, got {n}")));
            }
            embed(&kak_decompose(u_t)?.circuit(), n + 1)
        }
    }
}

/// `⟨U(t)V⟩_β` from the ancilla circuit, thermally averaged over the
/// selected basis states.
pub fn dynamical_correlation(
    h: &PauliSum,
    beta: f64,
    corr: &CorrelationConfig,
    trace: &TraceConfig,
    qite: &QiteConfig,
    backend: &Backend,
) -> Result<CorrelationRun> {
    let n = h.n_qubits();
    qite.validate()?;
    let k = half_steps(beta, qite.delta_tau)?;
    trace.validate(n, qite.delta_tau)?;
    if corr.u.n_qubits() != n || corr.v.n_qubits() != n {
        return Err(Error::SizeMismatch(n, corr.u.n_qubits().max(corr.v.n_qubits())));
    }
    if !corr.u.is_hermitian() || !corr.v.is_hermitian() {
        return Err(Error::NonHermitian);
    }
    if !(corr.dt > 0.0) || corr.n_t == 0 {
        return Err(Error::Config("time grid needs dt > 0 and at least one point".into()));
    }
    if corr.time_mode == TimeMode::Kak && n != 2 {
        return Err(Error::Config(format!("kak time evolution needs two system qubits, got {n}")));
    }
    let times = corr.times();
    let h_mat = h.to_matrix()?;
    let propagators: Vec<CMat> =
        times.iter().map(|&t| exp_hermitian(&h_mat, Complex64::new(0.0, -t))).collect();
    let fixed: Vec<Option<Circuit>> = propagators
        .iter()
        .map(|u_t| match corr.time_mode {
            TimeMode::Recompiled => Ok(None),
            mode => propagator_circuit(u_t, n, mode).map(Some),
        })
        .collect::<Result<_>>()?;
    let pre = prefix(&corr.v)?;
    let post = suffix(&corr.u)?;
    let ext_noise = backend.noise_model(n + 1)?;
    let symmetries = find_z2_symmetries(h);
    let x_a = PauliString::from_bits(n + 1, 1 << n, 0, 0)?;
    let y_a = PauliString::from_bits(n + 1, 1 << n, 1 << n, 0)?;
    let template = BrickTemplate::new(n, corr.rounds, corr.family)?;

    let mut per_time: Vec<Vec<(StateSample, StateSample)>> = vec![Vec::new(); times.len()];
    let mut fit_fidelities = Vec::new();
    let mut aborts = Vec::new();
    for index in trace.select_states(n) {
        let Evolved { traj, .. } = evolve(index, h, &symmetries, qite, k, backend)?;
        if traj.steps_completed() < k {
            aborts.push(format!("basis {index}: {}", traj.aborted.clone().unwrap_or_default()));
            continue;
        }
        let (p, var_p) = traj.weight_at(k);
        let start = traj.snapshots[k].with_ancilla()?;
        let phi = &traj.ideal_snapshots[k];
        let fit_on = match corr.fit_state {
            FitState::Joint => {
                let mut joint = match QState::Pure(phi.clone()).with_ancilla()? {
                    QState::Pure(s) => s,
                    QState::Mixed(_) => unreachable!("pure input stays pure"),
                };
                joint.apply_circuit(&pre, None)?;
                QState::Pure(joint)
            }
            FitState::Reduced => {
                let v_phi = phi.apply_matrix_normalized(&corr.v.to_matrix()?)?;
                QState::Mixed(DensityMatrix::mixture(&[(0.5, phi.clone()), (0.5, v_phi)])?)
            }
        };
        let mut est = backend.estimator(n + 1, derive_seed(index, 0xC0)) ?;
        let sector = traj
            .symmetries
            .generators()
            .iter()
            .zip(&traj.sector)
            .find(|(g, _)| {
                (g.is_z_type() || g.is_x_type())
                    && corr.u.commutes(g).unwrap_or(false)
                    && corr.v.commutes(g).unwrap_or(false)
            })
            .map(|(g, s)| Sector { generator: extend(g, n + 1), sign: *s as i8 });
        est.set_sector(sector);
        let mut warm: Option<Vec<f64>> = None;
        for (m, u_t) in propagators.iter().enumerate() {
            let prop = match &fixed[m] {
                Some(c) => c.clone(),
                None => {
                    let opts = RecompileOptions {
                        target_fidelity: corr.target_fidelity,
                        max_iterations: corr.max_iterations,
                        restarts: corr.restarts,
                        seed: derive_seed(index, m as u64),
                        warm_start: warm.clone(),
                        label: format!("basis {index} t {}", times[m]),
                        ..RecompileOptions::default()
                    };
                    let fit = match &fit_on {
                        QState::Pure(joint) => recompile_on_state(u_t, joint, &template, &opts)?,
                        QState::Mixed(rho) => recompile_unitary(u_t, rho, &template, &opts)?,
                    };
                    fit_fidelities.push(fit.fidelity);
                    let c = embed(&template.circuit(&fit.parameters)?, n + 1)?;
                    warm = Some(fit.parameters);
                    c
                }
            };
            let mut state = start.clone();
            state.apply_circuit(&pre, ext_noise.as_ref())?;
            state.apply_circuit(&prop, ext_noise.as_ref())?;
            state.apply_circuit(&post, ext_noise.as_ref())?;
            let e = est.estimate(&state, &[x_a, y_a])?;
            per_time[m].push((
                StateSample { p, var_p, o: e[0].value, var_o: e[0].variance },
                StateSample { p, var_p, o: e[1].value, var_o: e[1].variance },
            ));
        }
    }
    let mut values = Vec::with_capacity(times.len());
    let mut var_re = Vec::with_capacity(times.len());
    let mut var_im = Vec::with_capacity(times.len());
    for samples in &per_time {
        if samples.is_empty() {
            return Err(Error::Aborted(format!("every trajectory aborted: {}", aborts.join("; "))));
        }
        let re: Vec<StateSample> = samples.iter().map(|s| s.0).collect();
        let im: Vec<StateSample> = samples.iter().map(|s| s.1).collect();
        let (vr, sr) = aggregate(&re, trace.mode)?;
        let (vi, si) = aggregate(&im, trace.mode)?;
        values.push(Complex64::new(vr, vi));
        var_re.push(sr);
        var_im.push(si);
    }
    let series = CorrelationSeries::new(beta, corr.dt, values, var_re, var_im)?;
    Ok(CorrelationRun { series, fit_fidelities })
}

/// Discrete spectrum on centered frequencies `ω_k = 2πk/(n_t Δt)`,
/// `k = -⌊n_t/2⌋ … ⌈n_t/2⌉ - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn power(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn resolution(&self) -> f64 {
        match self.frequencies.as_slice() {
            [a, b, ..] => b - a,
            _ => f64::INFINITY,
        }
    }

    /// Index of the bin closest to `omega`.
    pub fn nearest_bin(&self, omega: f64) -> usize {
        let mut best = 0;
        for (i, w) in self.frequencies.iter().enumerate() {
            if (w - omega).abs() < (self.frequencies[best] - omega).abs() {
                best = i;
            }
        }
        best
    }

    /// Local maxima of `|S|²` at or above `rel` times the largest value,
    /// as `(ω, |S|²)` sorted by frequency.
    pub fn peaks(&self, rel: f64) -> Vec<(f64, f64)> {
        let p = self.power();
        let top = p.iter().cloned().fold(0.0, f64::max);
        let n = p.len();
        (0..n)
            .filter(|&i| {
                let left = if i > 0 { p[i - 1] } else { f64::NEG_INFINITY };
                let right = if i + 1 < n { p[i + 1] } else { f64::NEG_INFINITY };
                p[i] >= rel * top && p[i] >= left && p[i] > right
            })
            .map(|i| (self.frequencies[i], p[i]))
            .collect()
    }
}

/// `S(ω_k) = (1/n_t) Σ_m C(t_m) e^{iω_k t_m}`; positive frequencies are
/// emissions.
pub fn spectral_density(series: &CorrelationSeries) -> Result<Spectrum> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("spectrum needs at least two points, got {n}")));
    }
    let mut buf = series.values.clone();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let half = n / 2;
    let scale = 1.0 / n as f64;
    let base = 2.0 * std::f64::consts::PI / (n as f64 * series.dt);
    let mut frequencies = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for j in 0..n {
        let k = j as i64 - half as i64;
        let idx = k.rem_euclid(n as i64) as usize;
        frequencies.push(k as f64 * base);
        values.push(buf[idx] * scale);
    }
    Ok(Spectrum { frequencies, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_corr_series_with, exact_thermal, transition_amplitudes_with, EigenSystem};
    use crate::pauli::{build_hamiltonian, ModelSpec};
    use crate::qite::UnitaryMode;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ps(s: &str) -> PauliString {
        PauliString::from_label(s).unwrap()
    }

    fn tfim(n: usize, j: f64, h: f64) -> PauliSum {
        build_hamiltonian(&ModelSpec::tfim(n, j, h)).unwrap()
    }

    fn qite_cfg(dt: f64) -> QiteConfig {
        QiteConfig { delta_tau: dt, domain: 2, regularizer: 0.0, ..QiteConfig::default() }
    }

    #[test]
    fn beta_zero_is_normalized_trace() {
        let h = tfim(3, 1.0, 0.7);
        let o = PauliSum::from_terms(3, [(0.5, ps("ZII")), (1.5, ps("IIZ")), (2.0, ps("XXI")), (0.25, PauliString::identity(3))])
            .unwrap();
        let trace = TraceConfig { betas: vec![0.0], ..TraceConfig::default() };
        for obs in [&h, &o] {
            let s = thermal_observable(obs, &h, &trace, &qite_cfg(0.1), &Backend::exact()).unwrap();
            let expect = obs.identity_coefficient();
            assert!((s.points[0].value - expect).abs() < 1e-14);
            assert_eq!(s.points[0].variance, 0.0);
        }
    }

    #[test]
    fn two_site_energy_tracks_exact() {
        let h = tfim(2, 1.0, 1.0);
        let dt = 0.05;
        let trace = TraceConfig { betas: beta_grid(2.0, dt, 4), ..TraceConfig::default() };
        let s = thermal_observable(&h, &h, &trace, &qite_cfg(dt), &Backend::exact()).unwrap();
        let s5 = 5f64.sqrt();
        for p in &s.points {
            let levels = [-s5, -1.0, 1.0, s5];
            let z: f64 = levels.iter().map(|e| (-p.beta * e).exp()).sum();
            let exact = levels.iter().map(|e| e * (-p.beta * e).exp()).sum::<f64>() / z;
            assert!((exact - exact_thermal(&h, &h, p.beta).unwrap()).abs() < 1e-10);
            assert!((p.value - exact).abs() < 0.05, "β {}: {} vs {exact}", p.beta, p.value);
        }
    }

    #[test]
    fn sign_of_coupling_symmetry() {
        let dt = 0.1;
        let trace = TraceConfig { betas: beta_grid(2.0, dt, 2), ..TraceConfig::default() };
        let x0x1 = PauliSum::from_terms(2, [(1.0, ps("XX"))]).unwrap();
        let run = |j: f64| {
            let h = tfim(2, j, 1.0);
            thermal_observables(&[h.clone(), x0x1.clone()], &h, &trace, &qite_cfg(dt), &Backend::exact()).unwrap()
        };
        let (a, b) = (run(1.0), run(-1.0));
        for i in 0..trace.betas.len() {
            assert!((a[0].points[i].value - b[0].points[i].value).abs() < 1e-9);
            assert!((a[1].points[i].value + b[1].points[i].value).abs() < 1e-9);
        }
    }

    #[test]
    fn stochastic_with_every_state_equals_full() {
        let h = tfim(3, 1.0, 1.0);
        let dt = 0.1;
        let full = TraceConfig { betas: vec![0.0, 0.4, 1.0], ..TraceConfig::default() };
        let sto = TraceConfig { mode: TraceMode::Stochastic, n_samples: 8, seed: 9, ..full.clone() };
        let a = thermal_observable(&h, &h, &full, &qite_cfg(dt), &Backend::exact()).unwrap();
        let b = thermal_observable(&h, &h, &sto, &qite_cfg(dt), &Backend::exact()).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!((x.value - y.value).abs() < 1e-12);
        }
    }

    #[test]
    fn stochastic_selection_is_seeded_and_distinct() {
        let t = TraceConfig { mode: TraceMode::Stochastic, n_samples: 10, seed: 4, ..TraceConfig::default() };
        let a = t.select_states(4);
        assert_eq!(a, t.select_states(4));
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 10);
        assert!(a.iter().all(|&i| i < 16));
    }

    #[test]
    fn off_grid_beta_is_rejected() {
        let h = tfim(2, 1.0, 1.0);
        let trace = TraceConfig { betas: vec![0.15], ..TraceConfig::default() };
        let r = thermal_observable(&h, &h, &trace, &qite_cfg(0.1), &Backend::exact());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn variance_formula_edge_cases() {
        assert_eq!(variance_full(&[1.0, 2.0], &[0.0, 0.0], &[0.3, -0.1], &[0.0, 0.0]).unwrap(), 0.0);
        let v = variance_full(&[0.7], &[0.01], &[0.4], &[0.02]).unwrap();
        assert!((v - 0.02).abs() < 1e-15);
        assert_eq!(variance_stochastic(&[0.7], &[0.0], &[0.4], &[0.0]).unwrap(), 0.0);
        assert!(variance_stochastic(&[0.5; 4], &[0.0; 4], &[0.2; 4], &[0.0; 4]).unwrap().abs() < 1e-30);
        assert!(matches!(variance_full(&[0.0], &[0.0], &[1.0], &[0.0]), Err(Error::ZeroDenominator(_))));
    }

    fn synthetic(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        let o: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let var_p: Vec<f64> = p.iter().map(|x| (0.05 * x).powi(2)).collect();
        let var_o: Vec<f64> = (0..n).map(|_| rng.random_range(0.0005..0.004)).collect();
        (p, var_p, o, var_o)
    }

    fn empirical_sd(draws: &[f64]) -> f64 {
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt()
    }

    #[test]
    fn full_variance_matches_resampling() {
        use rand_distr::{Distribution, Normal};
        let (p, var_p, o, var_o) = synthetic(3, 16);
        let formula = variance_full(&p, &var_p, &o, &var_o).unwrap().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..500)
            .map(|_| {
                let ps: Vec<f64> = (0..16).map(|i| Normal::new(p[i], var_p[i].sqrt()).unwrap().sample(&mut rng)).collect();
                let os: Vec<f64> = (0..16).map(|i| Normal::new(o[i], var_o[i].sqrt()).unwrap().sample(&mut rng)).collect();
                ps.iter().zip(&os).map(|(a, b)| a * b).sum::<f64>() / ps.iter().sum::<f64>()
            })
            .collect();
        let ratio = empirical_sd(&draws) / formula;
        assert!((0.5..2.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn stochastic_variance_matches_resampling() {
        use rand_distr::{Distribution, Normal};
        let (p, var_p, o, var_o) = synthetic(5, 16);
        let m = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut draws = Vec::new();
        let mut formulas = Vec::new();
        for _ in 0..500 {
            let idx = sample(&mut rng, 16, m).into_vec();
            let ps: Vec<f64> = idx.iter().map(|&i| Normal::new(p[i], var_p[i].sqrt()).unwrap().sample(&mut rng)).collect();
            let os: Vec<f64> = idx.iter().map(|&i| Normal::new(o[i], var_o[i].sqrt()).unwrap().sample(&mut rng)).collect();
            let vp: Vec<f64> = idx.iter().map(|&i| var_p[i]).collect();
            let vo: Vec<f64> = idx.iter().map(|&i| var_o[i]).collect();
            formulas.push(variance_stochastic(&ps, &vp, &os, &vo).unwrap());
            draws.push(ps.iter().zip(&os).map(|(a, b)| a * b).sum::<f64>() / ps.iter().sum::<f64>());
        }
        let formula = (formulas.iter().sum::<f64>() / formulas.len() as f64).sqrt();
        let ratio = empirical_sd(&draws) / formula;
        assert!((0.5..2.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn spectrum_of_constant_and_single_tone() {
        let n = 16;
        let dt = 0.3;
        let ones = CorrelationSeries::new(0.0, dt, vec![Complex64::new(1.0, 0.0); n], vec![0.0; n], vec![0.0; n]).unwrap();
        let s = spectral_density(&ones).unwrap();
        let zero = s.nearest_bin(0.0);
        for (i, v) in s.values.iter().enumerate() {
            let expect = if i == zero { 1.0 } else { 0.0 };
            assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-12);
        }
        let w1 = 2.0 * PI / (n as f64 * dt);
        let tone: Vec<Complex64> = (0..n).map(|m| Complex64::from_polar(1.0, -w1 * m as f64 * dt)).collect();
        let s = spectral_density(&CorrelationSeries::new(0.0, dt, tone, vec![0.0; n], vec![0.0; n]).unwrap()).unwrap();
        let k1 = s.nearest_bin(w1);
        assert!((s.frequencies[k1] - w1).abs() < 1e-12);
        for (i, v) in s.values.iter().enumerate() {
            let expect = if i == k1 { 1.0 } else { 0.0 };
            assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn spectrum_rejects_short_series() {
        let s = CorrelationSeries::new(0.0, 0.1, vec![Complex64::new(1.0, 0.0)], vec![0.0], vec![0.0]).unwrap();
        assert!(spectral_density(&s).is_err());
    }

    fn exact_series(h: &PauliSum, beta: f64, dt: f64, n_t: usize) -> CorrelationSeries {
        let es = EigenSystem::of(h).unwrap();
        let times: Vec<f64> = (0..n_t).map(|m| m as f64 * dt).collect();
        let z0 = PauliString::single(h.n_qubits(), 0, crate::pauli::Pauli::Z);
        let v = exact_corr_series_with(&es, &z0, &z0, beta, &times).unwrap();
        CorrelationSeries::new(beta, dt, v, vec![0.0; n_t], vec![0.0; n_t]).unwrap()
    }

    #[test]
    fn two_site_exact_spectrum_peaks_sit_near_transitions() {
        let h = tfim(2, 3.0, 1.0);
        let s = spectral_density(&exact_series(&h, 0.2, PI / 16.0, 128)).unwrap();
        assert!((s.resolution() - 0.25).abs() < 1e-12);
        let peaks = s.peaks(0.01);
        for target in [7.21, 6.00, -6.00, -7.21] {
            assert!(
                peaks.iter().any(|(w, _)| (w - target).abs() <= s.resolution()),
                "no peak near {target}: {peaks:?}"
            );
        }
    }

    #[test]
    fn peak_heights_follow_transition_amplitudes() {
        let h = tfim(2, 3.0, 1.0);
        let es = EigenSystem::of(&h).unwrap();
        let z0 = ps("ZI");
        let s = spectral_density(&exact_series(&h, 0.2, PI / 16.0, 1024)).unwrap();
        let amps = transition_amplitudes_with(&es, &z0, 0.2).unwrap();
        for t in amps.iter().filter(|t| t.amplitude > 0.05) {
            let k = s.nearest_bin(t.frequency);
            let window: Complex64 = (k.saturating_sub(2)..(k + 3).min(s.len())).map(|i| s.values[i]).sum();
            assert!((window.norm() - t.amplitude).abs() < 0.25 * t.amplitude, "{t:?}: {}", window.norm());
        }
    }

    #[test]
    fn correlation_at_time_zero_is_one() {
        let h = tfim(2, 3.0, 1.0);
        let corr = CorrelationConfig::new(ps("ZI"), ps("ZI"), 0.1, 1);
        let trace = TraceConfig::default();
        let run = dynamical_correlation(&h, 0.4, &corr, &trace, &qite_cfg(0.1), &Backend::exact()).unwrap();
        assert!((run.series.values[0] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn correlation_modes_agree_with_oracle() {
        let h = tfim(2, 3.0, 1.0);
        let dt = 0.1;
        let beta = 0.2;
        let es = EigenSystem::of(&h).unwrap();
        let mut corr = CorrelationConfig::new(ps("ZI"), ps("ZI"), 0.3, 12);
        let exact = exact_corr_series_with(&es, &corr.u, &corr.v, beta, &corr.times()).unwrap();
        let q = QiteConfig { unitary_mode: UnitaryMode::MergedTwoSite, ..qite_cfg(dt) };
        for mode in [TimeMode::ExactPropagator, TimeMode::Kak, TimeMode::Recompiled] {
            corr.time_mode = mode;
            let run = dynamical_correlation(&h, beta, &corr, &TraceConfig::default(), &q, &Backend::exact()).unwrap();
            for (a, b) in run.series.values.iter().zip(&exact) {
                assert!((a - b).norm() < 0.02, "{mode:?}: {a} vs {b}");
            }
            if mode == TimeMode::Recompiled {
                assert!(run.fit_fidelities.iter().all(|f| *f >= 0.999));
            }
        }
    }

    #[test]
    fn oracle_series_is_hermitian_in_time() {
        let h = tfim(3, 1.0, 0.6);
        let es = EigenSystem::of(&h).unwrap();
        let z0 = ps("ZII");
        for t in [0.3, 1.1, 2.5] {
            let v = exact_corr_series_with(&es, &z0, &z0, 0.7, &[t, -t]).unwrap();
            assert!((v[1] - v[0].conj()).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn parseval_holds(re in prop::collection::vec(-1.0f64..1.0, 2..40), seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<Complex64> = re.iter().map(|r| Complex64::new(*r, rng.random_range(-1.0..1.0))).collect();
            let n = values.len();
            let series = CorrelationSeries::new(0.0, 0.2, values.clone(), vec![0.0; n], vec![0.0; n]).unwrap();
            let s = spectral_density(&series).unwrap();
            let lhs: f64 = s.power().iter().sum();
            let rhs: f64 = values.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            prop_assert!((lhs - rhs).abs() < 1e-10);
            prop_assert_eq!(s.len(), n);
        }

        #[test]
        fn variances_are_non_negative(seed in 0u64..500, n in 1usize..12) {
            let (p, var_p, o, var_o) = synthetic(seed, n);
            prop_assert!(variance_full(&p, &var_p, &o, &var_o).unwrap() >= 0.0);
            prop_assert!(variance_stochastic(&p, &var_p, &o, &var_o).unwrap() >= 0.0);
        }
    }
}
