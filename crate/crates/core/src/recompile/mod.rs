//! Fitting unitaries to shallow brick circuits, and two-qubit KAK synthesis.
//!
//! The fit maximizes the Uhlmann fidelity between `U ρ U†` and `V(θ) ρ V(θ)†`.
//! Writing `ρ = Σ p_k |ψ_k⟩⟨ψ_k|`, that fidelity equals the squared trace norm
//! of `M_jk = √(p_j p_k) ⟨Uψ_j|V(θ)ψ_k⟩`, which gives a cheap analytic
//! gradient through one backward sweep over the template.

pub mod kak;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, psd_sqrt, CMat, ZERO};
use crate::statesim::{u3_matrix, Circuit, DensityMatrix, Gate, SimState, StateVector};

pub use kak::{kak_decompose, reconstruction_error, KakDecomposition};

/// Uhlmann fidelity `(Tr √(√ρ_t ρ_r √ρ_t))² = ‖√ρ_t √ρ_r‖₁²`.
pub fn fidelity(rho_t: &DensityMatrix, rho_r: &DensityMatrix) -> Result<f64> {
    if rho_t.n_qubits() != rho_r.n_qubits() {
        return Err(Error::SizeMismatch(rho_t.n_qubits(), rho_r.n_qubits()));
    }
    for rho in [rho_t, rho_r] {
        if rho.min_eigenvalue() < -1e-8 {
            return Err(Error::InvalidArgument("density matrix is not positive".into()));
        }
    }
    let product = psd_sqrt(rho_t.matrix()) * psd_sqrt(rho_r.matrix());
    let root: f64 = product.singular_values().iter().sum();
    Ok(root * root)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateFamily {
    Ry,
    U3,
}

impl GateFamily {
    pub fn params_per_gate(self) -> usize {
        match self {
            GateFamily::Ry => 1,
            GateFamily::U3 => 3,
        }
    }
}

/// A base layer of single-qubit gates followed by `n_rounds` rounds of
/// CNOTs on adjacent pairs plus single-qubit gates on the touched qubits.
/// Odd rounds pair `(0,1), (2,3), …`; even rounds pair `(1,2), (3,4), …`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrickTemplate {
    n_qubits: usize,
    n_rounds: usize,
    family: GateFamily,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Single { qubit: usize, offset: usize },
    Cnot { control: usize, target: usize },
}

impl BrickTemplate {
    pub fn new(n_qubits: usize, n_rounds: usize, family: GateFamily) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 12 {
            return Err(Error::InvalidArgument(format!("template on {n_qubits} qubits")));
        }
        Ok(BrickTemplate { n_qubits, n_rounds, family })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_rounds(&self) -> usize {
        self.n_rounds
    }

    pub fn family(&self) -> GateFamily {
        self.family
    }

    /// CNOT pairs `(control, target)` of round `r ≥ 1`.
    pub fn pairs(&self, round: usize) -> Vec<(usize, usize)> {
        let start = if round % 2 == 1 { 0 } else { 1 };
        (start..self.n_qubits.saturating_sub(1)).step_by(2).map(|q| (q, q + 1)).collect()
    }

    pub fn n_params(&self) -> usize {
        let touched: usize = (1..=self.n_rounds).map(|r| 2 * self.pairs(r).len()).sum();
        (self.n_qubits + touched) * self.family.params_per_gate()
    }

    fn ops(&self) -> Vec<Op> {
        let k = self.family.params_per_gate();
        let mut ops = Vec::new();
        let mut offset = 0;
        for qubit in 0..self.n_qubits {
            ops.push(Op::Single { qubit, offset });
            offset += k;
        }
        for r in 1..=self.n_rounds {
            let pairs = self.pairs(r);
            for &(control, target) in &pairs {
                ops.push(Op::Cnot { control, target });
            }
            for &(a, b) in &pairs {
                for qubit in [a, b] {
                    ops.push(Op::Single { qubit, offset });
                    offset += k;
                }
            }
        }
        ops
    }

    fn single(&self, theta: &[f64], offset: usize) -> [Complex64; 4] {
        let m = match self.family {
            GateFamily::Ry => u3_matrix(theta[offset], 0.0, 0.0),
            GateFamily::U3 => u3_matrix(theta[offset], theta[offset + 1], theta[offset + 2]),
        };
        [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]
    }

    /// Derivatives of the single-qubit gate at `offset` with respect to each
    /// of its parameters.
    fn single_derivatives(&self, theta: &[f64], offset: usize) -> Vec<[Complex64; 4]> {
        let t = theta[offset];
        let (s, c) = (t / 2.0).sin_cos();
        let (phi, lam) = match self.family {
            GateFamily::Ry => (0.0, 0.0),
            GateFamily::U3 => (theta[offset + 1], theta[offset + 2]),
        };
        let e = |a: f64| Complex64::from_polar(1.0, a);
        let i = Complex64::i();
        let d_theta = [
            Complex64::new(-s / 2.0, 0.0),
            -e(lam) * (c / 2.0),
            e(phi) * (c / 2.0),
            -e(lam + phi) * (s / 2.0),
        ];
        match self.family {
            GateFamily::Ry => vec![d_theta],
            GateFamily::U3 => vec![
                d_theta,
                [ZERO, ZERO, i * e(phi) * s, i * e(lam + phi) * c],
                [ZERO, -i * e(lam) * s, ZERO, i * e(lam + phi) * c],
            ],
        }
    }

    pub fn circuit(&self, theta: &[f64]) -> Result<Circuit> {
        self.check_len(theta)?;
        let mut circ = Circuit::new(self.n_qubits);
        for op in self.ops() {
            let gate = match op {
                Op::Cnot { control, target } => Gate::Cnot { control, target },
                Op::Single { qubit, offset } => match self.family {
                    GateFamily::Ry => Gate::Ry { qubit, theta: theta[offset] },
                    GateFamily::U3 => Gate::U3 {
                        qubit,
                        theta: theta[offset],
                        phi: theta[offset + 1],
                        lambda: theta[offset + 2],
                    },
                },
            };
            circ.push(gate)?;
        }
        Ok(circ)
    }

    pub fn unitary(&self, theta: &[f64]) -> Result<CMat> {
        self.circuit(theta)?.unitary()
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::InvalidArgument(format!(
                "template takes {} parameters, got {}",
                self.n_params(),
                theta.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMethod {
    Analytic,
    /// Central differences with the given step.
    FiniteDifference(f64),
}

#[derive(Debug, Clone)]
pub struct RecompileOptions {
    pub target_fidelity: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    pub init_spread: f64,
    pub gradient: GradientMethod,
    pub seed: u64,
    pub warm_start: Option<Vec<f64>>,
    pub label: String,
}

impl Default for RecompileOptions {
    fn default() -> Self {
        RecompileOptions {
            target_fidelity: 0.999,
            max_iterations: 2000,
            restarts: 5,
            init_spread: 0.1,
            gradient: GradientMethod::Analytic,
            seed: 0,
            warm_start: None,
            label: String::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecompileResult {
    pub parameters: Vec<f64>,
    pub fidelity: f64,
    pub iterations: usize,
    pub target: String,
    pub reached: bool,
    /// Best fidelity seen so far, recorded after every accepted step.
    pub history: Vec<f64>,
}

/// Ensemble `{(√p_k, ψ_k, Uψ_k)}` on a register whose low `n` qubits carry
/// the template.
struct Objective<'a> {
    template: &'a BrickTemplate,
    ops: Vec<Op>,
    sqrt_w: Vec<f64>,
    inputs: Vec<Vec<Complex64>>,
    targets: Vec<Vec<Complex64>>,
}

fn apply_single(v: &mut [Complex64], q: usize, g: &[Complex64; 4]) {
    let m = 1usize << q;
    for b in 0..v.len() {
        if b & m == 0 {
            let (a0, a1) = (v[b], v[b | m]);
            v[b] = g[0] * a0 + g[1] * a1;
            v[b | m] = g[2] * a0 + g[3] * a1;
        }
    }
}

fn apply_cnot(v: &mut [Complex64], control: usize, target: usize) {
    let (cm, tm) = (1usize << control, 1usize << target);
    for b in 0..v.len() {
        if b & cm != 0 && b & tm == 0 {
            v.swap(b, b | tm);
        }
    }
}

fn adjoint2(g: &[Complex64; 4]) -> [Complex64; 4] {
    [g[0].conj(), g[2].conj(), g[1].conj(), g[3].conj()]
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl<'a> Objective<'a> {
    fn new(u: &CMat, template: &'a BrickTemplate, ensemble: Vec<(f64, Vec<Complex64>)>) -> Result<Self> {
        let n = template.n_qubits;
        let d = 1usize << n;
        if u.nrows() != d || u.ncols() != d {
            return Err(Error::InvalidArgument(format!("target is not {d}x{d}")));
        }
        let targets_gate = Gate::DenseUnitary { targets: (0..n).collect(), matrix: u.clone() };
        let mut sqrt_w = Vec::new();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (w, psi) in ensemble {
            let mut t = psi.clone();
            let total = t.len().trailing_zeros() as usize;
            targets_gate.apply_to(&mut t, total);
            sqrt_w.push(w.sqrt());
            inputs.push(psi);
            targets.push(t);
        }
        Ok(Objective { template, ops: template.ops(), sqrt_w, inputs, targets })
    }

    fn forward(&self, theta: &[f64]) -> Vec<Vec<Complex64>> {
        let mut states = self.inputs.clone();
        for op in &self.ops {
            match *op {
                Op::Cnot { control, target } => states.iter_mut().for_each(|v| apply_cnot(v, control, target)),
                Op::Single { qubit, offset } => {
                    let g = self.template.single(theta, offset);
                    states.iter_mut().for_each(|v| apply_single(v, qubit, &g));
                }
            }
        }
        states
    }

    fn overlap(&self, out: &[Vec<Complex64>]) -> DMatrix<Complex64> {
        let r = out.len();
        DMatrix::from_fn(r, r, |j, k| dot(&self.targets[j], &out[k]) * (self.sqrt_w[j] * self.sqrt_w[k]))
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let out = self.forward(theta);
        let s: f64 = self.overlap(&out).singular_values().iter().sum();
        s * s
    }

    fn value_and_gradient(&self, theta: &[f64], method: GradientMethod) -> (f64, Vec<f64>) {
        match method {
            GradientMethod::Analytic => self.analytic(theta),
            GradientMethod::FiniteDifference(h) => {
                let f = self.value(theta);
                let mut g = vec![0.0; theta.len()];
                let mut probe = theta.to_vec();
                for p in 0..theta.len() {
                    probe[p] = theta[p] + h;
                    let up = self.value(&probe);
                    probe[p] = theta[p] - h;
                    let down = self.value(&probe);
                    probe[p] = theta[p];
                    g[p] = (up - down) / (2.0 * h);
                }
                (f, g)
            }
        }
    }

    fn analytic(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut phi = self.forward(theta);
        let svd = self.overlap(&phi).svd(true, true);
        let s: f64 = svd.singular_values.iter().sum();
        let w = svd.u.unwrap() * svd.v_t.unwrap();
        let r = phi.len();
        let mut lam: Vec<Vec<Complex64>> = (0..r)
            .map(|k| {
                let mut chi = vec![ZERO; phi[k].len()];
                for j in 0..r {
                    let c = w[(j, k)] * self.sqrt_w[j];
                    for (x, t) in chi.iter_mut().zip(&self.targets[j]) {
                        *x += c * t;
                    }
                }
                chi
            })
            .collect();
        let mut grad = vec![0.0; theta.len()];
        for op in self.ops.iter().rev() {
            match *op {
                Op::Cnot { control, target } => {
                    for k in 0..r {
                        apply_cnot(&mut phi[k], control, target);
                        apply_cnot(&mut lam[k], control, target);
                    }
                }
                Op::Single { qubit, offset } => {
                    let gd = adjoint2(&self.template.single(theta, offset));
                    for v in phi.iter_mut() {
                        apply_single(v, qubit, &gd);
                    }
                    let m = 1usize << qubit;
                    for (p, dg) in self.template.single_derivatives(theta, offset).iter().enumerate() {
                        let mut acc = 0.0;
                        for k in 0..r {
                            let (l, f) = (&lam[k], &phi[k]);
                            let mut z = ZERO;
                            for b in 0..f.len() {
                                if b & m == 0 {
                                    let (f0, f1) = (f[b], f[b | m]);
                                    z += l[b].conj() * (dg[0] * f0 + dg[1] * f1);
                                    z += l[b | m].conj() * (dg[2] * f0 + dg[3] * f1);
                                }
                            }
                            acc += self.sqrt_w[k] * z.re;
                        }
                        grad[offset + p] = 2.0 * s * acc;
                    }
                    for v in lam.iter_mut() {
                        apply_single(v, qubit, &gd);
                    }
                }
            }
        }
        (s * s, grad)
    }
}

fn ensemble_of(rho: &DensityMatrix) -> Vec<(f64, Vec<Complex64>)> {
    let (values, vectors) = hermitian_eigen(rho.matrix());
    let top = values.iter().cloned().fold(0.0, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > top * 1e-12)
        .map(|(j, &p)| (p, vectors.column(j).iter().cloned().collect()))
        .collect()
}

fn objective_for_rho<'a>(
    u: &CMat,
    rho_in: &DensityMatrix,
    template: &'a BrickTemplate,
) -> Result<Objective<'a>> {
    if rho_in.n_qubits() != template.n_qubits {
        return Err(Error::SizeMismatch(template.n_qubits, rho_in.n_qubits()));
    }
    Objective::new(u, template, ensemble_of(rho_in))
}

fn objective_for_state<'a>(u: &CMat, psi: &StateVector, template: &'a BrickTemplate) -> Result<Objective<'a>> {
    if psi.n_qubits() < template.n_qubits {
        return Err(Error::SizeMismatch(template.n_qubits, psi.n_qubits()));
    }
    Objective::new(u, template, vec![(1.0, psi.amplitudes().to_vec())])
}

/// Fidelity of the template at `theta` against `U` on `ρ_in`.
pub fn template_fidelity(u: &CMat, rho_in: &DensityMatrix, template: &BrickTemplate, theta: &[f64]) -> Result<f64> {
    template.check_len(theta)?;
    Ok(objective_for_rho(u, rho_in, template)?.value(theta))
}

/// Gradient of [`template_fidelity`] with respect to `theta`.
pub fn template_gradient(
    u: &CMat,
    rho_in: &DensityMatrix,
    template: &BrickTemplate,
    theta: &[f64],
    method: GradientMethod,
) -> Result<Vec<f64>> {
    template.check_len(theta)?;
    Ok(objective_for_rho(u, rho_in, template)?.value_and_gradient(theta, method).1)
}

/// Fits `template` to `u` on the input state `ρ_in`.
pub fn recompile_unitary(
    u: &CMat,
    rho_in: &DensityMatrix,
    template: &BrickTemplate,
    opts: &RecompileOptions,
) -> Result<RecompileResult> {
    optimize(&objective_for_rho(u, rho_in, template)?, opts)
}

/// Fits `template` to `u` on a pure state of a possibly larger register.
/// The template acts on the low qubits and the remaining qubits idle, so
/// coherences with them are preserved by the fit.
pub fn recompile_on_state(
    u: &CMat,
    psi: &StateVector,
    template: &BrickTemplate,
    opts: &RecompileOptions,
) -> Result<RecompileResult> {
    optimize(&objective_for_state(u, psi, template)?, opts)
}

fn optimize(obj: &Objective, opts: &RecompileOptions) -> Result<RecompileResult> {
    let n_params = obj.template.n_params();
    if let Some(w) = &opts.warm_start {
        obj.template.check_len(w)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    for attempt in 0..=opts.restarts {
        let mut theta: Vec<f64> = (0..n_params)
            .map(|_| if opts.init_spread > 0.0 { rng.random_range(-opts.init_spread..=opts.init_spread) } else { 0.0 })
            .collect();
        if attempt == 0 {
            if let Some(w) = &opts.warm_start {
                theta = w.clone();
            }
        }
        let (t, f, its) = ascend(obj, theta, opts, &mut history, best.as_ref().map_or(0.0, |b| b.1));
        iterations += its;
        if best.as_ref().is_none_or(|b| f > b.1) {
            best = Some((t, f));
        }
        if best.as_ref().unwrap().1 >= opts.target_fidelity {
            break;
        }
    }
    let (parameters, fidelity) = best.unwrap();
    Ok(RecompileResult {
        parameters,
        fidelity,
        iterations,
        target: opts.label.clone(),
        reached: fidelity >= opts.target_fidelity,
        history,
    })
}

/// Gradient ascent with a Barzilai–Borwein trial step and Armijo
/// backtracking. Only improving steps are accepted.
fn ascend(
    obj: &Objective,
    mut theta: Vec<f64>,
    opts: &RecompileOptions,
    history: &mut Vec<f64>,
    best_so_far: f64,
) -> (Vec<f64>, f64, usize) {
    let (mut f, mut g) = obj.value_and_gradient(&theta, opts.gradient);
    let mut best = best_so_far.max(f);
    history.push(best);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut alpha = 1.0;
    let mut stagnant = 0;
    let mut its = 0;
    while its < opts.max_iterations && f < opts.target_fidelity {
        let gg: f64 = g.iter().map(|x| x * x).sum();
        if gg < 1e-24 {
            break;
        }
        if let Some((tp, gp)) = &prev {
            let (mut ss, mut sy) = (0.0, 0.0);
            for p in 0..theta.len() {
                let s = theta[p] - tp[p];
                ss += s * s;
                sy += s * (g[p] - gp[p]);
            }
            alpha = if sy < 0.0 { (-ss / sy).clamp(1e-6, 1e3) } else { (alpha * 2.0).min(1e3) };
        }
        let mut accepted = None;
        while alpha > 1e-14 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t + alpha * d).collect();
            let fc = obj.value(&cand);
            if fc >= f + 1e-4 * alpha * gg {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        stagnant = if fc - f < 1e-12 { stagnant + 1 } else { 0 };
        prev = Some((std::mem::replace(&mut theta, cand), g));
        let (fn_, gn) = obj.value_and_gradient(&theta, opts.gradient);
        debug_assert!((fn_ - fc).abs() < 1e-9);
        f = fn_;
        g = gn;
        its += 1;
        best = best.max(f);
        history.push(best);
        if stagnant >= 25 {
            break;
        }
    }
    (theta, f, its)
}
