//! Experiment runner behind the `qitekit` binary.
//!
//! A run reads one TOML file (see [`ExperimentConfig`]), applies command-line
//! overrides, validates everything, and only then computes. Every output is
//! written into the output directory as CSV (with a leading schema line and
//! `exact_` oracle columns) or JSON. Identical configuration and seed give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{haar_unitary, CMat};
use crate::measure::{derive_seed, Backend, NoiseParams, ReadoutMitigation};
use crate::mitigation::{calibrate_readout, phase_scale_correct, CalibrationMatrix, MitigationOrder};
use crate::oracle::{exact_corr_series_with, exact_ite_with, exact_thermal_with, EigenSystem, MAX_ORACLE_QUBITS};
use crate::pauli::{build_hamiltonian, ModelSpec, PauliString, PauliSum};
use crate::qite::{build_pools, run_qite_with, QiteConfig};
use crate::recompile::{
    kak_decompose, reconstruction_error, recompile_on_state, BrickTemplate, GateFamily, RecompileOptions,
};
use crate::statesim::{Gate, StateVector};
use crate::symmetry::{find_z2_symmetries, is_real_hamiltonian};
use crate::thermal::{
    beta_grid, dynamical_correlation, spectral_density, thermal_observables, CorrelationConfig, CorrelationRun,
    CorrelationSeries, FitState, TimeMode, TraceConfig, TraceMode,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit status for a failed run: 2 for configuration and usage problems,
/// 3 for numerical aborts.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidModel(_)
        | Error::TooLarge { .. }
        | Error::DomainTooSmall { .. }
        | Error::BadQubit { .. }
        | Error::SizeMismatch(..)
        | Error::NoiseOnStateVector
        | Error::Io(_) => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Tfim,
    Xxz,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub coefficient: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub n_sites: usize,
    pub j: f64,
    pub h: f64,
    pub delta: f64,
    /// Terms of a `custom` model; labels list qubit 0 first.
    pub terms: Vec<TermConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::Tfim, n_sites: 2, j: 1.0, h: 1.0, delta: 1.0, terms: Vec::new() }
    }
}

impl ModelConfig {
    pub fn hamiltonian(&self) -> Result<PauliSum> {
        let spec = match self.kind {
            ModelKind::Tfim => ModelSpec::tfim(self.n_sites, self.j, self.h),
            ModelKind::Xxz => ModelSpec::xxz(self.n_sites, self.j, self.delta),
            ModelKind::Custom => {
                let terms = self
                    .terms
                    .iter()
                    .map(|t| Ok((t.coefficient, PauliString::from_label(&t.label)?)))
                    .collect::<Result<Vec<_>>>()?;
                ModelSpec::custom(PauliSum::from_terms(self.n_sites, terms)?)
            }
        };
        build_hamiltonian(&spec).map_err(|e| Error::Config(format!("model: {e}")))
    }
}

/// Equal superposition of the listed computational basis states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub basis: Vec<u64>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig { basis: vec![0] }
    }
}

impl InitialConfig {
    pub fn state(&self, n: usize) -> Result<StateVector> {
        let dim = 1u64 << n;
        if self.basis.is_empty() {
            return Err(Error::Config("initial.basis is empty".into()));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim as usize];
        for &b in &self.basis {
            if b >= dim {
                return Err(Error::Config(format!("initial basis state {b} needs more than {n} qubits")));
            }
            amps[b as usize] += Complex64::new(1.0, 0.0);
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        StateVector::from_amplitudes(n, amps.into_iter().map(|a| a / norm).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub mode: TraceMode,
    pub n_samples: usize,
    /// Explicit β values; when empty the grid runs from 0 to `beta_max`.
    pub betas: Vec<f64>,
    pub beta_max: f64,
    /// Grid spacing in units of `2Δτ`.
    pub stride: usize,
}

impl Default for TraceSection {
    fn default() -> Self {
        TraceSection { mode: TraceMode::Full, n_samples: 10, betas: Vec::new(), beta_max: 1.0, stride: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    #[default]
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutSetting {
    #[default]
    Off,
    Exact,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub mode: MeasurementMode,
    pub shots: u64,
    pub noise: bool,
    pub p1: f64,
    pub p2: f64,
    pub readout_flip: f64,
    pub post_select: bool,
    pub readout: ReadoutSetting,
    pub calibration_shots: u64,
    pub order: MitigationOrder,
    pub phase_scale: bool,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        let noise = NoiseParams::default();
        MeasurementConfig {
            mode: MeasurementMode::Exact,
            shots: 8000,
            noise: false,
            p1: noise.p1,
            p2: noise.p2,
            readout_flip: noise.readout_flip,
            post_select: false,
            readout: ReadoutSetting::Off,
            calibration_shots: 1000,
            order: MitigationOrder::default(),
            phase_scale: false,
        }
    }
}

impl MeasurementConfig {
    pub fn noise_params(&self) -> NoiseParams {
        NoiseParams { p1: self.p1, p2: self.p2, readout_flip: self.readout_flip }
    }

    pub fn backend(&self, seed: u64) -> Backend {
        Backend {
            shots: (self.mode == MeasurementMode::Sampled).then_some(self.shots),
            noise: self.noise.then(|| self.noise_params()),
            post_select: self.post_select,
            readout: match self.readout {
                ReadoutSetting::Off => ReadoutMitigation::Off,
                ReadoutSetting::Exact => ReadoutMitigation::Exact,
                ReadoutSetting::Calibrated => ReadoutMitigation::Calibrated { shots_per_state: self.calibration_shots },
            },
            order: self.order,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationSection {
    /// Operator `U` in `⟨U(t)V⟩`; `Z` on qubit 0 when absent.
    pub u: Option<String>,
    pub v: Option<String>,
    pub beta: f64,
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

impl Default for CorrelationSection {
    fn default() -> Self {
        CorrelationSection {
            u: None,
            v: None,
            beta: 0.2,
            dt: std::f64::consts::PI / 16.0,
            n_t: 128,
            time_mode: TimeMode::ExactPropagator,
            rounds: 5,
            family: GateFamily::U3,
            fit_state: FitState::Joint,
            target_fidelity: 0.999,
            max_iterations: 2000,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecompileSection {
    /// JSON file with `real` and `imag` row-major matrices.
    pub input: Option<PathBuf>,
    pub rounds: usize,
    pub family: GateFamily,
    pub target_fidelity: f64,
    pub max_iterations: usize,
    pub restarts: usize,
}

impl Default for RecompileSection {
    fn default() -> Self {
        RecompileSection {
            input: None,
            rounds: 3,
            family: GateFamily::U3,
            target_fidelity: 0.999,
            max_iterations: 2000,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct KakSection {
    /// Two-qubit unitary file; a Haar-random unitary drawn from the seed
    /// when absent.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schema_version: Option<u32>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub initial: InitialConfig,
    pub qite: QiteConfig,
    pub trace: TraceSection,
    pub measurement: MeasurementConfig,
    /// `"H"` for the Hamiltonian, otherwise a Pauli label.
    pub observables: Vec<String>,
    pub correlation: CorrelationSection,
    pub recompile: RecompileSection,
    pub kak: KakSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: Some(SCHEMA_VERSION),
            seed: 0,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            initial: InitialConfig::default(),
            qite: QiteConfig::default(),
            trace: TraceSection::default(),
            measurement: MeasurementConfig::default(),
            observables: vec!["H".into()],
            correlation: CorrelationSection::default(),
            recompile: RecompileSection::default(),
            kak: KakSection::default(),
        }
    }
}

/// Command-line values that replace their configuration counterparts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub noise: bool,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match cfg.schema_version {
            Some(SCHEMA_VERSION) => Ok(cfg),
            Some(v) => Err(Error::Config(format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"))),
            None => Err(Error::Config("schema_version is missing".into())),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(shots) = o.shots {
            self.measurement.mode = MeasurementMode::Sampled;
            self.measurement.shots = shots;
        }
        if o.noise {
            self.measurement.noise = true;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    pub fn backend(&self) -> Backend {
        self.measurement.backend(derive_seed(self.seed, 1))
    }

    pub fn betas(&self) -> Vec<f64> {
        if self.trace.betas.is_empty() {
            beta_grid(self.trace.beta_max, self.qite.delta_tau, self.trace.stride)
        } else {
            self.trace.betas.clone()
        }
    }

    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            mode: self.trace.mode,
            n_samples: self.trace.n_samples,
            betas: self.betas(),
            seed: derive_seed(self.seed, 2),
        }
    }

    pub fn observable(&self, name: &str, h: &PauliSum) -> Result<PauliSum> {
        if name == "H" {
            return Ok(h.clone());
        }
        let p = PauliString::from_label(name).map_err(|e| Error::Config(format!("observable {name:?}: {e}")))?;
        if p.n_qubits() != h.n_qubits() {
            return Err(Error::Config(format!("observable {name:?} does not act on {} qubits", h.n_qubits())));
        }
        PauliSum::from_terms(h.n_qubits(), [(1.0, p)])
    }

    fn correlation_operator(&self, label: &Option<String>, n: usize) -> Result<PauliString> {
        match label {
            None => Ok(PauliString::single(n, 0, crate::pauli::Pauli::Z)),
            Some(l) => {
                let p = PauliString::from_label(l).map_err(|e| Error::Config(format!("correlation operator: {e}")))?;
                if p.n_qubits() != n {
                    return Err(Error::Config(format!("correlation operator {l:?} does not act on {n} qubits")));
                }
                Ok(p)
            }
        }
    }

    pub fn correlation_config(&self, n: usize) -> Result<CorrelationConfig> {
        let c = &self.correlation;
        if c.n_t == 0 {
            return Err(Error::Config("correlation.n_t must be at least 1".into()));
        }
        if !(c.dt > 0.0) {
            return Err(Error::Config("correlation.dt must be positive".into()));
        }
        Ok(CorrelationConfig {
            u: self.correlation_operator(&c.u, n)?,
            v: self.correlation_operator(&c.v, n)?,
            dt: c.dt,
            n_t: c.n_t,
            time_mode: c.time_mode,
            rounds: c.rounds,
            family: c.family,
            fit_state: c.fit_state,
            target_fidelity: c.target_fidelity,
            max_iterations: c.max_iterations,
            restarts: c.restarts,
        })
    }

    /// Checks everything a command may touch before any computation.
    pub fn validate(&self) -> Result<PauliSum> {
        let h = self.model.hamiltonian()?;
        let n = h.n_qubits();
        self.qite.validate()?;
        self.trace_config().validate(n, self.qite.delta_tau)?;
        self.backend().validate()?;
        self.initial.state(n)?;
        for o in &self.observables {
            self.observable(o, &h)?;
        }
        self.correlation_config(n)?;
        crate::thermal::half_steps(self.correlation.beta, self.qite.delta_tau)?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ModelInfo,
    Qite,
    Thermal,
    Corr,
    Spectrum,
    Recompile,
    Kak,
    Calibrate,
}

/// Files written by a command, and the abort message if a trajectory
/// stopped early.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub aborted: Option<String>,
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// A CSV table: schema line, header, rows.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        let mut text = format!("# qitekit-{kind} v{SCHEMA_VERSION}\n");
        text.push_str(&columns.join(","));
        text.push('\n');
        Csv { text, columns: columns.len() }
    }

    pub fn row(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.columns, "row width");
        let cells: Vec<String> = values.iter().map(|&v| format_number(v)).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Parses a CSV written by [`Csv`] into its header and numeric rows.
pub fn read_csv(text: &str) -> Result<(String, Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let schema = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| Error::Config("missing schema line".into()))?
        .to_string();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Config("missing header".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row = l
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|_| Error::Config(format!("row {}: bad number {c:?}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(Error::Config(format!("row {} has {} cells", i + 1, row.len())));
        }
        rows.push(row);
    }
    Ok((schema, header, rows))
}

struct Writer<'a> {
    dir: &'a Path,
    report: RunReport,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Writer { dir, report: RunReport::default() })
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text)?;
        self.report.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        self.text(name, csv.as_str())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        text.push('\n');
        self.text(name, &text)
    }
}

fn oracle(h: &PauliSum) -> Result<EigenSystem> {
    if h.n_qubits() > MAX_ORACLE_QUBITS {
        return Err(Error::TooLarge { n: h.n_qubits(), limit: MAX_ORACLE_QUBITS });
    }
    EigenSystem::of(h)
}

fn energy_of(h_mat: &CMat, psi: &StateVector) -> f64 {
    let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
    (v.adjoint() * h_mat * &v)[(0, 0)].re
}

/// Runs one command with an already validated configuration.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<RunReport> {
    let h = cfg.validate()?;
    let mut w = Writer::new(&cfg.output_dir)?;
    match cmd {
        Command::ModelInfo => model_info(cfg, &h, &mut w)?,
        Command::Qite => qite(cfg, &h, &mut w)?,
        Command::Thermal => thermal(cfg, &h, &mut w)?,
        Command::Corr => {
            corr(cfg, &h, &mut w)?;
        }
        Command::Spectrum => spectrum(cfg, &h, &mut w)?,
        Command::Recompile => recompile(cfg, &mut w)?,
        Command::Kak => kak(cfg, &mut w)?,
        Command::Calibrate => calibrate(cfg, &h, &mut w)?,
    }
    Ok(w.report)
}

#[derive(Serialize)]
struct TermOut {
    coefficient: f64,
    label: String,
}

#[derive(Serialize)]
struct GroupOut {
    terms: Vec<TermOut>,
    pool_unreduced: usize,
    pool_reduced: usize,
}

#[derive(Serialize)]
struct ModelInfoOut {
    schema: String,
    n_qubits: usize,
    terms: Vec<TermOut>,
    symmetries: Vec<String>,
    domain: usize,
    groups: Vec<GroupOut>,
    eigenvalues: Vec<f64>,
}

fn terms_out(h: &PauliSum) -> Vec<TermOut> {
    h.terms().iter().map(|(c, p)| TermOut { coefficient: *c, label: p.label() }).collect()
}

fn model_info(cfg: &ExperimentConfig, h: &PauliSum, w: &mut Writer) -> Result<()> {
    let sym = find_z2_symmetries(h);
    let real = is_real_hamiltonian(h);
    let none = QiteConfig { pool_reduction: crate::qite::PoolReduction::None, ..cfg.qite.clone() };
    let full = build_pools(h, &cfg.qite, &sym, real)?;
    let raw = build_pools(h, &none, &sym, real)?;
    let groups = full
        .iter()
        .zip(&raw)
        .map(|((hl, reduced), (_, unreduced))| GroupOut {
            terms: terms_out(hl),
            pool_unreduced: unreduced.len(),
            pool_reduced: reduced.len(),
        })
        .collect();
    let eigenvalues = if h.n_qubits() <= MAX_ORACLE_QUBITS { oracle(h)?.values } else { Vec::new() };
    let out = ModelInfoOut {
        schema: format!("qitekit-model-info v{SCHEMA_VERSION}"),
        n_qubits: h.n_qubits(),
        terms: terms_out(h),
        symmetries: sym.generators().iter().map(|g| g.label()).collect(),
        domain: cfg.qite.domain,
        groups,
        eigenvalues,
    };
    w.json("model_info.json", &out)
}

fn qite(cfg: &ExperimentConfig, h: &PauliSum, w: &mut Writer) -> Result<()> {
    let n = h.n_qubits();
    let psi = cfg.initial.state(n)?;
    let backend = cfg.backend();
    let mut est = backend.estimator(n, 0)?;
    let noise = backend.noise_model(n)?;
    let sym = find_z2_symmetries(h);
    let traj = run_qite_with(&psi, h, &cfg.qite, &sym, est.as_mut(), noise.as_ref(), "initial")?;
    let es = oracle(h)?;
    let h_mat = h.to_matrix()?;
    let mut csv = Csv::new("qite", &["step", "tau", "energy", "c", "residual", "exact_energy"]);
    for (k, (tau, energy)) in traj.energy_curve().into_iter().enumerate() {
        let (mut c, mut residual) = (1.0, 0.0);
        if k > 0 {
            for r in traj.records.iter().filter(|r| r.step + 1 == k) {
                c *= r.c;
                residual = f64::max(residual, r.residual);
            }
        }
        let exact = energy_of(&h_mat, &exact_ite_with(&es, &psi, tau)?);
        csv.row(&[k as f64, tau, energy, c, residual, exact]);
    }
    w.csv("qite.csv", &csv)?;
    let mut records = Vec::new();
    traj.write_records(&mut records)?;
    w.text("qite_trajectory.txt", &String::from_utf8(records).expect("ascii records"))?;
    w.report.aborted = traj.aborted.clone();
    Ok(())
}

fn slug(name: &str) -> String {
    if name == "H" {
        "energy".into()
    } else {
        name.to_ascii_lowercase()
    }
}

fn thermal(cfg: &ExperimentConfig, h: &PauliSum, w: &mut Writer) -> Result<()> {
    let obs = cfg.observables.iter().map(|o| cfg.observable(o, h)).collect::<Result<Vec<_>>>()?;
    if obs.is_empty() {
        return Err(Error::Config("no observables requested".into()));
    }
    let series = thermal_observables(&obs, h, &cfg.trace_config(), &cfg.qite, &cfg.backend())?;
    let es = oracle(h)?;
    for ((name, o), s) in cfg.observables.iter().zip(&obs).zip(&series) {
        let mut csv = Csv::new("thermal", &["beta", "value", "variance", "exact_value"]);
        for p in &s.points {
            csv.row(&[p.beta, p.value, p.variance, exact_thermal_with(&es, o, p.beta)?]);
        }
        w.csv(&format!("thermal_{}.csv", slug(name)), &csv)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CorrSummary {
    schema: String,
    beta: f64,
    corrected: bool,
    fits: usize,
    fits_reached: usize,
    mean_fidelity: Option<f64>,
    min_fidelity: Option<f64>,
}

/// The correlation series as written, after optional phase-and-scale
/// correction, with its oracle counterpart.
fn corr(cfg: &ExperimentConfig, h: &PauliSum, w: &mut Writer) -> Result<(CorrelationSeries, Vec<Complex64>)> {
    let n = h.n_qubits();
    let cc = cfg.correlation_config(n)?;
    let trace = TraceConfig { betas: vec![0.0], ..cfg.trace_config() };
    let CorrelationRun { series, fit_fidelities } =
        dynamical_correlation(h, cfg.correlation.beta, &cc, &trace, &cfg.qite, &cfg.backend())?;
    let series = if cfg.measurement.phase_scale { phase_scale_correct(&series)? } else { series };
    let es = oracle(h)?;
    let exact = exact_corr_series_with(&es, &cc.u, &cc.v, cfg.correlation.beta, &cc.times())?;
    let mut csv = Csv::new("corr", &["t", "re", "im", "re_err", "im_err", "exact_re", "exact_im"]);
    for (m, t) in series.times().into_iter().enumerate() {
        let v = series.values[m];
        csv.row(&[t, v.re, v.im, series.var_re[m].sqrt(), series.var_im[m].sqrt(), exact[m].re, exact[m].im]);
    }
    w.csv("corr.csv", &csv)?;
    let reached = fit_fidelities.iter().filter(|f| **f >= cc.target_fidelity).count();
    let summary = CorrSummary {
        schema: format!("qitekit-corr-summary v{SCHEMA_VERSION}"),
        beta: cfg.correlation.beta,
        corrected: series.corrected,
        fits: fit_fidelities.len(),
        fits_reached: reached,
        mean_fidelity: (!fit_fidelities.is_empty())
            .then(|| fit_fidelities.iter().sum::<f64>() / fit_fidelities.len() as f64),
        min_fidelity: fit_fidelities.iter().cloned().reduce(f64::min),
    };
    w.json("corr_summary.json", &summary)?;
    Ok((series, exact))
}

fn spectrum(cfg: &ExperimentConfig, h: &PauliSum, w: &mut Writer) -> Result<()> {
    let (series, exact) = corr(cfg, h, w)?;
    let s = spectral_density(&series)?;
    let exact_series = CorrelationSeries::new(series.beta, series.dt, exact, vec![0.0; series.len()], vec![0.0; series.len()])?;
    let e = spectral_density(&exact_series)?;
    let mut csv = Csv::new("spectrum", &["omega", "s_re", "s_im", "s_abs2", "exact_abs2"]);
    for k in 0..s.len() {
        csv.row(&[s.frequencies[k], s.values[k].re, s.values[k].im, s.values[k].norm_sqr(), e.values[k].norm_sqr()]);
    }
    w.csv("spectrum.csv", &csv)
}

/// Dense matrix file: `real` and `imag` as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitaryFile {
    pub real: Vec<Vec<f64>>,
    #[serde(default)]
    pub imag: Vec<Vec<f64>>,
}

impl UnitaryFile {
    pub fn from_matrix(u: &CMat) -> Self {
        let rows = |f: fn(&Complex64) -> f64| (0..u.nrows()).map(|i| (0..u.ncols()).map(|j| f(&u[(i, j)])).collect()).collect();
        UnitaryFile { real: rows(|c| c.re), imag: rows(|c| c.im) }
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        let d = self.real.len();
        let imag_ok = self.imag.is_empty() || (self.imag.len() == d && self.imag.iter().all(|r| r.len() == d));
        if d == 0 || !d.is_power_of_two() || self.real.iter().any(|r| r.len() != d) || !imag_ok {
            return Err(Error::Config(format!("unitary must be square with a power-of-two dimension, got {d} rows")));
        }
        let m = CMat::from_fn(d, d, |i, j| {
            Complex64::new(self.real[i][j], self.imag.get(i).map_or(0.0, |r| r[j]))
        });
        let err = crate::linalg::unitarity_error(&m);
        if err > 1e-8 {
            return Err(Error::Config(format!("matrix is not unitary (error {err:.2e})")));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<CMat> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let f: UnitaryFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        f.to_matrix()
    }
}

#[derive(Serialize)]
struct RecompileOut {
    schema: String,
    n_qubits: usize,
    rounds: usize,
    family: GateFamily,
    parameters: Vec<f64>,
    fidelity: f64,
    reached: bool,
    iterations: usize,
}

fn recompile(cfg: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let r = &cfg.recompile;
    let path = r.input.as_ref().ok_or_else(|| Error::Config("recompile.input is required".into()))?;
    let u = UnitaryFile::load(path)?;
    let n = u.nrows().trailing_zeros() as usize;
    let template = BrickTemplate::new(n, r.rounds, r.family)?;
    let opts = RecompileOptions {
        target_fidelity: r.target_fidelity,
        max_iterations: r.max_iterations,
        restarts: r.restarts,
        seed: derive_seed(cfg.seed, 3),
        label: path.display().to_string(),
        ..RecompileOptions::default()
    };
    let fit = recompile_on_state(&u, &StateVector::maximally_entangled(n)?, &template, &opts)?;
    let out = RecompileOut {
        schema: format!("qitekit-recompile v{SCHEMA_VERSION}"),
        n_qubits: n,
        rounds: r.rounds,
        family: r.family,
        parameters: fit.parameters,
        fidelity: fit.fidelity,
        reached: fit.reached,
        iterations: fit.iterations,
    };
    w.json("recompile.json", &out)
}

#[derive(Serialize)]
struct KakOut {
    schema: String,
    interaction: [f64; 3],
    cnot_count: usize,
    reconstruction_error: f64,
    gates: Vec<String>,
    unitary: UnitaryFile,
}

fn describe(g: &Gate) -> String {
    match g {
        Gate::U3 { qubit, theta, phi, lambda } => format!("u3({theta},{phi},{lambda}) q{qubit}"),
        Gate::Ry { qubit, theta } => format!("ry({theta}) q{qubit}"),
        Gate::Cnot { control, target } => format!("cx q{control},q{target}"),
        Gate::PauliRotation { pauli, angle } => format!("exp_pauli({},{angle})", pauli.label()),
        Gate::ControlledUnitary { control, targets, .. } => format!("controlled_unitary q{control} -> {targets:?}"),
        Gate::DenseUnitary { targets, .. } => format!("unitary {targets:?}"),
    }
}

fn kak(cfg: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let u = match &cfg.kak.input {
        Some(p) => UnitaryFile::load(p)?,
        None => haar_unitary(4, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4))),
    };
    if u.nrows() != 4 {
        return Err(Error::Config(format!("kak needs a 4x4 unitary, got {}x{}", u.nrows(), u.ncols())));
    }
    let k = kak_decompose(&u)?;
    let circuit = k.circuit();
    let out = KakOut {
        schema: format!("qitekit-kak v{SCHEMA_VERSION}"),
        interaction: k.interaction,
        cnot_count: circuit.cnot_count(),
        reconstruction_error: reconstruction_error(&u, &circuit)?,
        gates: circuit.gates().iter().map(describe).collect(),
        unitary: UnitaryFile::from_matrix(&u),
    };
    w.json("kak.json", &out)
}

fn calibrate(cfg: &ExperimentConfig, h: &PauliSum, w: &mut Writer) -> Result<()> {
    let n = h.n_qubits();
    let noise = cfg.measurement.noise_params().model(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5));
    let measured = calibrate_readout(&noise, cfg.measurement.calibration_shots, &mut rng)?;
    let exact = CalibrationMatrix::exact(&noise)?;
    let (m, e) = (measured.matrix(), exact.matrix());
    let mut csv = Csv::new("calibration", &["observed", "prepared", "probability", "exact_probability"]);
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            csv.row(&[i as f64, j as f64, m[(i, j)], e[(i, j)]]);
        }
    }
    w.csv("calibration.csv", &csv)?;
    let path = w.dir.join("calibration.json");
    measured.save(&path)?;
    w.report.files.push(path);
    Ok(())
}

/// Human-readable summary of the defaults, used by `--help` text and docs.
pub fn default_config_toml() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# qitekit configuration, schema {SCHEMA_VERSION}");
    s.push_str(&ExperimentConfig::default().to_toml());
    s
}
