//! Post-selection on a stabilizer parity, readout-error mitigation through a
//! calibration matrix, and phase-and-scale correction of correlation series.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pauli::PauliString;
use crate::statesim::{sample_counts, Circuit, Gate, MeasurementCounts, NoiseModel};
use crate::thermal::CorrelationSeries;

pub const MAX_CALIBRATION_QUBITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitigationOrder {
    /// Correct the distribution first, then drop wrong-parity outcomes.
    #[default]
    ReadoutThenPostSelect,
    PostSelectThenReadout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderMode {
    /// Stop once the transformed observable qubit-wise commutes with the
    /// transformed generator.
    Minimal,
    /// Always fold the generator onto its last qubit.
    Full,
}

/// Result of [`append_parity_measurement`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParityReadout {
    pub circuit: Circuit,
    /// Qubits whose joint Z parity equals the generator eigenvalue after the
    /// appended gates.
    pub parity_mask: u64,
    /// Set when the parity sits on a single qubit.
    pub parity_qubit: Option<usize>,
    /// The measured string conjugated through the appended gates.
    pub measured: PauliString,
}

fn conjugate_by_hadamard(p: &PauliString, q: usize) -> PauliString {
    let (x, z) = (p.x_bits(), p.z_bits());
    let (xb, zb) = (x >> q & 1, z >> q & 1);
    let flip = if xb == 1 && zb == 1 { 2 } else { 0 };
    let x = (x & !(1 << q)) | (zb << q);
    let z = (z & !(1 << q)) | (xb << q);
    PauliString::from_bits(p.n_qubits(), x, z, (p.phase_exp() + flip) % 4).expect("same register")
}

/// Appends the gates that let `measured` and the parity of `generator` be
/// read from one computational-basis measurement.
///
/// X-type generators get a Hadamard layer on their support first. A CNOT
/// ladder then folds the Z parity along the support.
pub fn append_parity_measurement(
    circuit: &Circuit,
    generator: &PauliString,
    measured: &PauliString,
    mode: LadderMode,
) -> Result<ParityReadout> {
    let n = circuit.n_qubits();
    if generator.n_qubits() != n || measured.n_qubits() != n {
        return Err(Error::SizeMismatch(n, generator.n_qubits().max(measured.n_qubits())));
    }
    if !generator.commutes(measured)? {
        return Err(Error::NotCommuting(generator.to_string(), measured.to_string()));
    }
    if generator.is_identity() {
        return Err(Error::InvalidArgument("identity generator carries no parity".into()));
    }
    let mut out = circuit.clone();
    let mut m = *measured;
    let support: Vec<usize> = (0..n).filter(|q| generator.support_mask() >> q & 1 == 1).collect();
    if !generator.is_z_type() {
        if !generator.is_x_type() {
            return Err(Error::InvalidArgument(format!("generator {generator} is neither Z- nor X-type")));
        }
        for &q in &support {
            out.push(Gate::hadamard(q))?;
            m = conjugate_by_hadamard(&m, q);
        }
    }
    let mut mask = generator.support_mask();
    let z_of = |mask: u64| PauliString::from_bits(n, 0, mask, 0).expect("mask in range");
    for w in support.windows(2) {
        if mode == LadderMode::Minimal && m.qubit_wise_commutes(&z_of(mask)) {
            break;
        }
        out.push(Gate::Cnot { control: w[0], target: w[1] })?;
        m = m.conjugate_by_cnot(w[0], w[1]);
        mask &= !(1 << w[0]);
    }
    if !m.qubit_wise_commutes(&z_of(mask)) {
        return Err(Error::NotCommuting(m.to_string(), z_of(mask).to_string()));
    }
    let parity_qubit = (mask.count_ones() == 1).then(|| mask.trailing_zeros() as usize);
    Ok(ParityReadout { circuit: out, parity_mask: mask, parity_qubit, measured: m })
}

/// `(−1)^{popcount(outcome & mask)}`.
pub fn parity(outcome: u64, mask: u64) -> i8 {
    if (outcome & mask).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// Keeps the outcomes whose parity equals `expected`.
pub fn post_select<F: Fn(u64) -> i8>(counts: &MeasurementCounts, parity_of: F, expected: i8) -> Result<MeasurementCounts> {
    let kept = counts.retain(|b| parity_of(b) == expected);
    if kept.shots() == 0 {
        return Err(Error::AllShotsDiscarded);
    }
    Ok(kept)
}

/// Post-selection on a (quasi-)probability vector: wrong-parity entries are
/// zeroed and the rest renormalized.
pub fn post_select_distribution(q: &[f64], mask: u64, expected: i8) -> Result<Vec<f64>> {
    let mut out: Vec<f64> =
        q.iter().enumerate().map(|(b, &p)| if parity(b as u64, mask) == expected { p } else { 0.0 }).collect();
    let total: f64 = out.iter().sum();
    if total <= 1e-12 {
        return Err(Error::AllShotsDiscarded);
    }
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Column-stochastic readout response `M[observed][prepared]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMatrix {
    n_qubits: usize,
    columns: Vec<Vec<f64>>,
}

impl CalibrationMatrix {
    pub fn identity(n: usize) -> Self {
        let d = 1 << n;
        let columns = (0..d).map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        CalibrationMatrix { n_qubits: n, columns }
    }

    /// The response an infinite number of calibration shots would give.
    pub fn exact(noise: &NoiseModel) -> Result<Self> {
        let n = noise.n_qubits();
        check_calibration_size(n)?;
        let d = 1usize << n;
        let columns = (0..d)
            .map(|j| {
                let mut one_hot = vec![0.0; d];
                one_hot[j] = 1.0;
                noise.apply_readout(&one_hot)
            })
            .collect();
        Ok(CalibrationMatrix { n_qubits: n, columns })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.columns.len();
        DMatrix::from_fn(d, d, |i, j| self.columns[j][i])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: CalibrationMatrix = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let d = 1usize << m.n_qubits;
        if m.columns.len() != d || m.columns.iter().any(|c| c.len() != d) {
            return Err(Error::Config("calibration matrix has the wrong shape".into()));
        }
        Ok(m)
    }
}

fn check_calibration_size(n: usize) -> Result<()> {
    if n > MAX_CALIBRATION_QUBITS {
        return Err(Error::TooLarge { n, limit: MAX_CALIBRATION_QUBITS });
    }
    Ok(())
}

/// Prepares every basis state, reads it out through the noise model and
/// records the observed frequencies column by column.
pub fn calibrate_readout<R: Rng + ?Sized>(noise: &NoiseModel, shots_per_state: u64, rng: &mut R) -> Result<CalibrationMatrix> {
    let n = noise.n_qubits();
    check_calibration_size(n)?;
    if shots_per_state == 0 {
        return Err(Error::InvalidArgument("shots must be positive".into()));
    }
    let d = 1usize << n;
    let columns = (0..d)
        .map(|j| {
            let mut one_hot = vec![0.0; d];
            one_hot[j] = 1.0;
            sample_counts(n, &noise.apply_readout(&one_hot), shots_per_state, rng).distribution()
        })
        .collect();
    Ok(CalibrationMatrix { n_qubits: n, columns })
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let (mut acc, mut shift) = (0.0, 0.0);
    for (k, &x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - shift).max(0.0));
}

/// Solves `min ‖M q − c‖₂` over the probability simplex for an observed
/// distribution `c`.
pub fn mitigate_distribution(observed: &[f64], calib: &CalibrationMatrix) -> Result<Vec<f64>> {
    let d = 1usize << calib.n_qubits;
    if observed.len() != d {
        return Err(Error::SizeMismatch(calib.n_qubits, observed.len().trailing_zeros() as usize));
    }
    let m = calib.matrix();
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin < 1e-10 * smax.max(1.0) {
        return Err(Error::SingularCalibration);
    }
    let c = DVector::from_column_slice(observed);
    if let Some(q) = m.clone().lu().solve(&c) {
        let total: f64 = q.iter().sum();
        if q.iter().all(|&x| x >= 0.0) && (total - 1.0).abs() < 1e-12 {
            return Ok(q.iter().cloned().collect());
        }
    }
    // Accelerated projected gradient on ½‖Mq − c‖².
    let mtm = m.transpose() * &m;
    let mtc = m.transpose() * &c;
    let step = 1.0 / (smax * smax);
    let mut q: Vec<f64> = observed.to_vec();
    project_simplex(&mut q);
    let mut y = q.clone();
    let mut t = 1.0f64;
    for _ in 0..20_000 {
        let yv = DVector::from_column_slice(&y);
        let grad = &mtm * &yv - &mtc;
        let mut next: Vec<f64> = y.iter().zip(grad.iter()).map(|(a, g)| a - step * g).collect();
        project_simplex(&mut next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let change: f64 = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
        y = next.iter().zip(&q).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        q = next;
        t = t_next;
        if change < 1e-13 {
            break;
        }
    }
    Ok(q)
}

/// [`mitigate_distribution`] applied to a shot histogram.
pub fn mitigate_readout(counts: &MeasurementCounts, calib: &CalibrationMatrix) -> Result<Vec<f64>> {
    if counts.n_qubits() != calib.n_qubits {
        return Err(Error::SizeMismatch(calib.n_qubits, counts.n_qubits()));
    }
    mitigate_distribution(&counts.distribution(), calib)
}

/// Divides a series by its `t = 0` value, propagating variances to first
/// order with the reference and each point treated as independent.
pub fn phase_scale_correct(series: &CorrelationSeries) -> Result<CorrelationSeries> {
    let Some(&v0) = series.values.first() else {
        return Err(Error::InvalidArgument("empty correlation series".into()));
    };
    if v0.norm() < 1e-6 {
        return Err(Error::ZeroDenominator("correlation value at t = 0"));
    }
    let (s0r, s0i) = (series.var_re[0], series.var_im[0]);
    let w = v0.inv();
    let mut out = series.clone();
    for m in 0..series.values.len() {
        let v = series.values[m];
        out.values[m] = if m == 0 { Complex64::new(1.0, 0.0) } else { v * w };
        if m == 0 {
            out.var_re[0] = 0.0;
            out.var_im[0] = 0.0;
            continue;
        }
        let u = -v * w * w;
        let (sr, si) = (series.var_re[m], series.var_im[m]);
        out.var_re[m] = w.re * w.re * sr + w.im * w.im * si + u.re * u.re * s0r + u.im * u.im * s0i;
        out.var_im[m] = w.im * w.im * sr + w.re * w.re * si + u.im * u.im * s0r + u.re * u.re * s0i;
    }
    out.corrected = true;
    Ok(out)
}
