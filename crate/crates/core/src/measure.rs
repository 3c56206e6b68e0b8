//! Expectation estimators shared by the QITE engine and the thermal layer:
//! exact expectations, or shot sampling with optional readout mitigation
//! and stabilizer post-selection.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, CMat};
use crate::mitigation::{
    append_parity_measurement, calibrate_readout, mitigate_distribution, parity, post_select,
    post_select_distribution, CalibrationMatrix, LadderMode, MitigationOrder,
};
use crate::pauli::PauliString;
use crate::statesim::{
    basis_change, sample_counts, Circuit, DensityMatrix, Gate, NoiseModel, SimState, StateVector,
};

/// Pure state for noiseless runs, density matrix once gate noise enters.
#[derive(Debug, Clone, PartialEq)]
pub enum QState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl QState {
    /// Wraps `psi`, switching to a density matrix when `noise` has gate
    /// errors.
    pub fn prepare(psi: &StateVector, noise: Option<&NoiseModel>) -> Self {
        if noise.is_some_and(NoiseModel::has_gate_noise) {
            QState::Mixed(psi.to_density())
        } else {
            QState::Pure(psi.clone())
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            QState::Pure(s) => s.to_density(),
            QState::Mixed(r) => r.clone(),
        }
    }

    /// Appends an ancilla in `|0⟩` as the new highest qubit.
    pub fn with_ancilla(&self) -> Result<Self> {
        Ok(match self {
            QState::Pure(s) => {
                let mut amps = s.amplitudes().to_vec();
                amps.resize(amps.len() * 2, Complex64::new(0.0, 0.0));
                QState::Pure(StateVector::from_amplitudes(s.n_qubits() + 1, amps)?)
            }
            QState::Mixed(r) => {
                let mut zero = CMat::zeros(2, 2);
                zero[(0, 0)] = Complex64::new(1.0, 0.0);
                QState::Mixed(DensityMatrix::from_matrix(r.n_qubits() + 1, kron(&zero, r.matrix()))?)
            }
        })
    }
}

impl SimState for QState {
    fn n_qubits(&self) -> usize {
        match self {
            QState::Pure(s) => s.n_qubits(),
            QState::Mixed(r) => r.n_qubits(),
        }
    }

    fn apply_gate(&mut self, gate: &Gate, noise: Option<&NoiseModel>) -> Result<()> {
        match self {
            QState::Pure(s) => s.apply_gate(gate, noise),
            QState::Mixed(r) => r.apply_gate(gate, noise),
        }
    }

    fn expectation_string(&self, p: &PauliString) -> Result<Complex64> {
        match self {
            QState::Pure(s) => s.expectation_string(p),
            QState::Mixed(r) => r.expectation_string(p),
        }
    }

    fn probabilities(&self) -> Vec<f64> {
        match self {
            QState::Pure(s) => s.probabilities(),
            QState::Mixed(r) => r.probabilities(),
        }
    }

    fn reduced_density(&self, qubits: &[usize]) -> Result<DensityMatrix> {
        match self {
            QState::Pure(s) => s.reduced_density(qubits),
            QState::Mixed(r) => r.reduced_density(qubits),
        }
    }
}

/// A symmetry generator and the eigenvalue the state is expected to carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub generator: PauliString,
    pub sign: i8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub variance: f64,
}

pub trait Estimator {
    /// Estimates `⟨p⟩` for each Hermitian string in `strings`.
    fn estimate(&mut self, state: &QState, strings: &[PauliString]) -> Result<Vec<Estimate>>;

    /// Sets the stabilizer sector used for post-selection, if any.
    fn set_sector(&mut self, _sector: Option<Sector>) {}

    fn is_exact(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactEstimator;

impl Estimator for ExactEstimator {
    fn estimate(&mut self, state: &QState, strings: &[PauliString]) -> Result<Vec<Estimate>> {
        strings
            .iter()
            .map(|p| {
                let v = state.expectation_string(p)?;
                Ok(Estimate { value: v.re, variance: 0.0 })
            })
            .collect()
    }

    fn is_exact(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct MitigationSettings {
    pub post_select: bool,
    pub readout: Option<CalibrationMatrix>,
    pub order: MitigationOrder,
}


/// Shot-based estimator. Each string gets its own measurement circuit with
/// `shots` repetitions.
#[derive(Debug, Clone)]
pub struct SampledEstimator {
    pub shots: u64,
    pub noise: Option<NoiseModel>,
    pub mitigation: MitigationSettings,
    sector: Option<Sector>,
    rng: ChaCha8Rng,
}

impl SampledEstimator {
    pub fn new(shots: u64, noise: Option<NoiseModel>, mitigation: MitigationSettings, seed: u64) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidArgument("shots must be positive".into()));
        }
        if let Some(nm) = &noise {
            nm.validate()?;
        }
        Ok(SampledEstimator { shots, noise, mitigation, sector: None, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    fn estimate_one(&mut self, state: &QState, p: &PauliString) -> Result<Estimate> {
        if !p.is_hermitian() {
            return Err(Error::NonHermitian);
        }
        if p.is_identity() {
            let sign = if p.phase_exp() == 2 { -1.0 } else { 1.0 };
            return Ok(Estimate { value: sign, variance: 0.0 });
        }
        let n = state.n_qubits();
        let selection = match (&self.sector, self.mitigation.post_select) {
            (Some(s), true) if s.generator.n_qubits() == n => Some(*s),
            _ => None,
        };
        let (mut circuit, measured, mask) = match selection {
            Some(s) => {
                let r = append_parity_measurement(&Circuit::new(n), &s.generator, p, LadderMode::Minimal)?;
                (r.circuit, r.measured, r.parity_mask)
            }
            None => (Circuit::new(n), *p, 0),
        };
        let joint = PauliString::from_bits(n, measured.x_bits(), measured.z_bits() | mask, 0)?;
        circuit.extend(&basis_change(&joint))?;
        let mut rotated = state.clone();
        rotated.apply_circuit(&circuit, self.noise.as_ref())?;
        let mut probs = rotated.probabilities();
        if let Some(nm) = &self.noise {
            probs = nm.apply_readout(&probs);
        }
        let counts = sample_counts(n, &probs, self.shots, &mut self.rng);
        let expected = selection.map_or(1, |s| s.sign);
        let (q, kept) = match (selection.is_some(), &self.mitigation.readout, self.mitigation.order) {
            (false, None, _) => (counts.distribution(), counts.shots()),
            (false, Some(cal), _) => (mitigate_distribution(&counts.distribution(), cal)?, counts.shots()),
            (true, None, _) => {
                let kept = post_select(&counts, |b| parity(b, mask), expected)?;
                (kept.distribution(), kept.shots())
            }
            (true, Some(cal), MitigationOrder::ReadoutThenPostSelect) => {
                let q = mitigate_distribution(&counts.distribution(), cal)?;
                let kept_mass: f64 =
                    q.iter().enumerate().filter(|(b, _)| parity(*b as u64, mask) == expected).map(|(_, p)| p).sum();
                let q = post_select_distribution(&q, mask, expected)?;
                (q, ((counts.shots() as f64 * kept_mass).round() as u64).max(1))
            }
            (true, Some(cal), MitigationOrder::PostSelectThenReadout) => {
                let kept = post_select(&counts, |b| parity(b, mask), expected)?;
                (mitigate_distribution(&kept.distribution(), cal)?, kept.shots())
            }
        };
        let support = measured.support_mask();
        let sign = if measured.phase_exp() == 2 { -1.0 } else { 1.0 };
        let value: f64 = sign * q.iter().enumerate().map(|(b, w)| w * parity(b as u64, support) as f64).sum::<f64>();
        let value = value.clamp(-1.0, 1.0);
        Ok(Estimate { value, variance: (1.0 - value * value) / kept as f64 })
    }
}

impl Estimator for SampledEstimator {
    fn estimate(&mut self, state: &QState, strings: &[PauliString]) -> Result<Vec<Estimate>> {
        strings.iter().map(|p| self.estimate_one(state, p)).collect()
    }

    fn set_sector(&mut self, sector: Option<Sector>) {
        self.sector = sector;
    }
}

/// Noise rates independent of register size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub p1: f64,
    pub p2: f64,
    pub readout_flip: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            p1: NoiseModel::DEFAULT_P1,
            p2: NoiseModel::DEFAULT_P2,
            readout_flip: NoiseModel::DEFAULT_READOUT_FLIP,
        }
    }
}

impl NoiseParams {
    pub fn model(&self, n: usize) -> Result<NoiseModel> {
        NoiseModel::uniform(n, self.p1, self.p2, self.readout_flip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMitigation {
    #[default]
    Off,
    /// Invert the exact confusion matrix of the noise model.
    Exact,
    /// Invert a matrix measured with this many shots per basis state.
    Calibrated { shots_per_state: u64 },
}

/// How expectations are obtained: exactly, or by sampling with optional
/// noise and mitigation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backend {
    /// Shots per measured string; exact expectations when absent.
    pub shots: Option<u64>,
    pub noise: Option<NoiseParams>,
    pub post_select: bool,
    pub readout: ReadoutMitigation,
    pub order: MitigationOrder,
    pub seed: u64,
}

impl Default for Backend {
    fn default() -> Self {
        Backend {
            shots: None,
            noise: None,
            post_select: false,
            readout: ReadoutMitigation::Off,
            order: MitigationOrder::default(),
            seed: 0,
        }
    }
}

/// Decorrelates `seed` across independent work units.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Backend {
    pub fn exact() -> Self {
        Backend::default()
    }

    pub fn sampled(shots: u64, seed: u64) -> Self {
        Backend { shots: Some(shots), seed, ..Backend::default() }
    }

    pub fn noise_model(&self, n: usize) -> Result<Option<NoiseModel>> {
        self.noise.map(|p| p.model(n)).transpose()
    }

    pub fn calibration(&self, n: usize) -> Result<Option<CalibrationMatrix>> {
        let Some(noise) = self.noise_model(n)? else {
            return Ok(None);
        };
        match self.readout {
            ReadoutMitigation::Off => Ok(None),
            ReadoutMitigation::Exact => CalibrationMatrix::exact(&noise).map(Some),
            ReadoutMitigation::Calibrated { shots_per_state } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, u64::MAX - n as u64));
                calibrate_readout(&noise, shots_per_state, &mut rng).map(Some)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == Some(0) {
            return Err(Error::Config("shots must be positive".into()));
        }
        if let Some(p) = &self.noise {
            for (name, v) in [("p1", p.p1), ("p2", p.p2), ("readout_flip", p.readout_flip)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("noise {name} = {v} is not a probability")));
                }
            }
        }
        if let ReadoutMitigation::Calibrated { shots_per_state: 0 } = self.readout {
            return Err(Error::Config("shots_per_state must be positive".into()));
        }
        Ok(())
    }

    /// An estimator for an `n`-qubit register on its own random stream.
    pub fn estimator(&self, n: usize, stream: u64) -> Result<Box<dyn Estimator>> {
        let Some(shots) = self.shots else {
            return Ok(Box::new(ExactEstimator));
        };
        let mitigation = MitigationSettings {
            post_select: self.post_select,
            readout: self.calibration(n)?,
            order: self.order,
        };
        let est = SampledEstimator::new(shots, self.noise_model(n)?, mitigation, derive_seed(self.seed, stream))?;
        Ok(Box::new(est))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::{build_hamiltonian, ModelSpec};
    use crate::oracle::EigenSystem;
    use crate::statesim::NoiseModel;

    fn ps(s: &str) -> PauliString {
        PauliString::from_label(s).unwrap()
    }

    fn ground_state_4site() -> StateVector {
        let h = build_hamiltonian(&ModelSpec::tfim(4, 1.0, 1.0)).unwrap();
        let es = EigenSystem::of(&h).unwrap();
        StateVector::from_amplitudes(4, es.vectors.column(0).iter().cloned().collect()).unwrap()
    }

    #[test]
    fn exact_estimator_matches_expectation() {
        let psi = ground_state_4site();
        let st = QState::Pure(psi.clone());
        let strings = [ps("XXII"), ps("ZIII"), ps("-ZZZZ")];
        let got = ExactEstimator.estimate(&st, &strings).unwrap();
        for (e, p) in got.iter().zip(&strings) {
            assert!((e.value - psi.expectation_string(p).unwrap().re).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_estimator_is_unbiased_and_post_selection_is_harmless_when_noiseless() {
        let psi = ground_state_4site();
        let st = QState::Pure(psi.clone());
        let strings = [ps("XXII"), ps("IZII"), ps("XYYX"), ps("ZZZZ")];
        let sector = Sector { generator: ps("ZZZZ"), sign: psi.expectation_string(&ps("ZZZZ")).unwrap().re.round() as i8 };
        for post in [false, true] {
            let mitigation = MitigationSettings { post_select: post, ..Default::default() };
            let mut est = SampledEstimator::new(20_000, None, mitigation, 3).unwrap();
            est.set_sector(Some(sector));
            let got = est.estimate(&st, &strings).unwrap();
            for (e, p) in got.iter().zip(&strings) {
                let exact = psi.expectation_string(p).unwrap().re;
                let sigma = e.variance.sqrt().max(1e-3);
                assert!((e.value - exact).abs() < 4.0 * sigma, "{p}: {} vs {exact}", e.value);
            }
        }
    }

    #[test]
    fn readout_noise_biases_and_mitigation_restores() {
        let st = QState::Pure(StateVector::zero_state(1));
        let noise = NoiseModel::readout_only(1, 0.1).unwrap();
        let mut raw = SampledEstimator::new(50_000, Some(noise.clone()), MitigationSettings::default(), 1).unwrap();
        let v = raw.estimate(&st, &[ps("Z")]).unwrap()[0].value;
        assert!((v - 0.8).abs() < 0.01);
        let cal = CalibrationMatrix::exact(&noise).unwrap();
        let settings = MitigationSettings { readout: Some(cal), ..Default::default() };
        let mut fixed = SampledEstimator::new(50_000, Some(noise), settings, 1).unwrap();
        let v = fixed.estimate(&st, &[ps("Z")]).unwrap()[0].value;
        assert!((v - 1.0).abs() < 0.01);
    }

    #[test]
    fn ancilla_extension_keeps_expectations() {
        let psi = ground_state_4site();
        for st in [QState::Pure(psi.clone()), QState::Mixed(psi.to_density())] {
            let ext = st.with_ancilla().unwrap();
            assert_eq!(ext.n_qubits(), 5);
            let a = st.expectation_string(&ps("XXII")).unwrap();
            let b = ext.expectation_string(&ps("XXIIZ")).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }
}
