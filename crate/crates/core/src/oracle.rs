//! Reference implementations used to cross-check the fast paths.
//!
//! Nothing here calls into the simulator kernels, the circuit builder or the
//! network code: unitaries are full `2^n x 2^n` Kronecker products of 2x2
//! matrix exponentials, the network is evaluated by plain matrix products,
//! and expected rewards come from enumerating the slot outcomes. Each
//! function is slow and only meant for small instances.

use num_complex::Complex64;

use crate::env::EnvConfig;
use crate::qsim::{Gate, Pauli, PauliProduct, RotationAxis};

type C = Complex64;

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub dim: usize,
    pub data: Vec<C>,
}

impl Matrix {
    pub fn identity(dim: usize) -> Matrix {
        let mut data = vec![C::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C::new(1.0, 0.0);
        }
        Matrix { dim, data }
    }

    fn from_2x2(m: [[C; 2]; 2]) -> Matrix {
        Matrix { dim: 2, data: vec![m[0][0], m[0][1], m[1][0], m[1][1]] }
    }

    pub fn get(&self, r: usize, c: usize) -> C {
        self.data[r * self.dim + c]
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let n = self.dim;
        let mut data = vec![C::new(0.0, 0.0); n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.get(r, k);
                if a == C::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    data[r * n + c] += a * other.get(k, c);
                }
            }
        }
        Matrix { dim: n, data }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        Matrix { dim: self.dim, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn scale(&self, s: C) -> Matrix {
        Matrix { dim: self.dim, data: self.data.iter().map(|a| a * s).collect() }
    }

    /// `self (x) other`, with `self` acting on the more significant index.
    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (n, m) = (self.dim, other.dim);
        let d = n * m;
        let mut data = vec![C::new(0.0, 0.0); d * d];
        for r1 in 0..n {
            for c1 in 0..n {
                let a = self.get(r1, c1);
                for r2 in 0..m {
                    for c2 in 0..m {
                        data[(r1 * m + r2) * d + c1 * m + c2] = a * other.get(r2, c2);
                    }
                }
            }
        }
        Matrix { dim: d, data }
    }

    pub fn apply(&self, v: &[C]) -> Vec<C> {
        (0..self.dim).map(|r| (0..self.dim).map(|c| self.get(r, c) * v[c]).sum()).collect()
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }
}

pub fn pauli_2x2(p: Pauli) -> Matrix {
    let (o, l, i) = (C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 1.0));
    Matrix::from_2x2(match p {
        Pauli::X => [[o, l], [l, o]],
        Pauli::Y => [[o, -i], [i, o]],
        Pauli::Z => [[l, o], [o, -l]],
    })
}

/// `exp(m)` by scaling and squaring with a truncated Taylor series.
pub fn expm(m: &Matrix) -> Matrix {
    let norm = m.max_abs() * m.dim as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let a = m.scale(C::new(0.5f64.powi(squarings as i32), 0.0));
    let mut sum = Matrix::identity(m.dim);
    let mut term = Matrix::identity(m.dim);
    for k in 1..=30 {
        term = term.mul(&a).scale(C::new(1.0 / k as f64, 0.0));
        sum = sum.add(&term);
    }
    for _ in 0..squarings {
        sum = sum.mul(&sum);
    }
    sum
}

/// `exp(-i angle/2 P)` evaluated as a matrix exponential.
pub fn rotation_2x2(axis: RotationAxis, angle: f64) -> Matrix {
    let p = pauli_2x2(match axis {
        RotationAxis::X => Pauli::X,
        RotationAxis::Y => Pauli::Y,
        RotationAxis::Z => Pauli::Z,
    });
    expm(&p.scale(C::new(0.0, -angle / 2.0)))
}

/// `m` on qubit `k` of an `n`-qubit register, identity elsewhere. Qubit `k`
/// is bit `k` of the basis index.
pub fn embed(n: usize, k: usize, m: &Matrix) -> Matrix {
    let id = Matrix::identity(2);
    (0..n).rev().fold(Matrix::identity(1), |acc, q| acc.kron(if q == k { m } else { &id }))
}

pub fn gate_matrix(n: usize, gate: &Gate) -> Matrix {
    match *gate {
        Gate::Rotation { axis, target, angle } => embed(n, target, &rotation_2x2(axis, angle)),
        Gate::Cz { control, target } => {
            let (o, l) = (C::new(0.0, 0.0), C::new(1.0, 0.0));
            let p0 = Matrix::from_2x2([[l, o], [o, o]]);
            let p1 = Matrix::from_2x2([[o, o], [o, l]]);
            embed(n, control, &p0).add(&embed(n, control, &p1).mul(&embed(n, target, &pauli_2x2(Pauli::Z))))
        }
    }
}

/// Product of the gate matrices, first gate rightmost.
pub fn circuit_unitary(n: usize, gates: &[Gate]) -> Matrix {
    gates.iter().fold(Matrix::identity(1 << n), |u, g| gate_matrix(n, g).mul(&u))
}

/// Final state of `gates` applied to `|0...0>`.
pub fn run_dense(n: usize, gates: &[Gate]) -> Vec<C> {
    let mut e0 = vec![C::new(0.0, 0.0); 1 << n];
    e0[0] = C::new(1.0, 0.0);
    circuit_unitary(n, gates).apply(&e0)
}

pub fn observable_matrix(n: usize, obs: &PauliProduct) -> Matrix {
    obs.factors().iter().fold(Matrix::identity(1 << n), |m, &(q, p)| m.mul(&embed(n, q, &pauli_2x2(p))))
}

/// `<psi|O|psi>`.
pub fn expectation_dense(n: usize, psi: &[C], obs: &PauliProduct) -> f64 {
    let o_psi = observable_matrix(n, obs).apply(psi);
    psi.iter().zip(&o_psi).map(|(a, b)| a.conj() * b).sum::<C>().re
}

/// Gate list of the re-uploading circuit written out from its definition:
/// a variational layer `RX RY RZ` on every qubit, then per encoding layer
/// the CZ entanglers, `RX(lambda * x)` on each qubit and another variational
/// layer.
pub fn reuploading_gates(
    n: usize,
    n_layers: usize,
    pairs: &[(usize, usize)],
    features: &[f64],
    phi: &[f64],
    lambda: &[f64],
) -> Vec<Gate> {
    let rot = |axis, target, angle| Gate::Rotation { axis, target, angle };
    let mut gates = Vec::new();
    for layer in 0..=n_layers {
        if layer > 0 {
            gates.extend(pairs.iter().map(|&(a, b)| Gate::Cz { control: a, target: b }));
            for (k, x) in features.iter().enumerate() {
                gates.push(rot(RotationAxis::X, k, lambda[(layer - 1) * n + k] * x));
            }
        }
        for k in 0..n {
            let base = 3 * (layer * n + k);
            gates.push(rot(RotationAxis::X, k, phi[base]));
            gates.push(rot(RotationAxis::Y, k, phi[base + 1]));
            gates.push(rot(RotationAxis::Z, k, phi[base + 2]));
        }
    }
    gates
}

/// Policy of the re-uploading circuit on the dense simulator.
pub fn reuploading_policy(
    n: usize,
    n_layers: usize,
    pairs: &[(usize, usize)],
    observables: &[PauliProduct],
    features: &[f64],
    phi: &[f64],
    lambda: &[f64],
    w: &[f64],
    xi: f64,
) -> Vec<f64> {
    let psi = run_dense(n, &reuploading_gates(n, n_layers, pairs, features, phi, lambda));
    let logits: Vec<f64> = observables
        .iter()
        .zip(w)
        .map(|(o, wa)| xi * wa * expectation_dense(n, &psi, o))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Fully connected `tanh` network evaluated with explicit matrix products.
/// `params` holds, per layer, an `out x in` row-major weight block followed
/// by the biases.
pub fn mlp_forward(sizes: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    let mut offset = 0;
    let n_layers = sizes.len() - 1;
    for l in 0..n_layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let weights = &params[offset..offset + n_in * n_out];
        let bias = &params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
        let mut y = vec![0.0; n_out];
        for r in 0..n_out {
            y[r] = bias[r];
            for c in 0..n_in {
                y[r] += weights[r * n_in + c] * x[c];
            }
            if l + 1 < n_layers {
                y[r] = y[r].tanh();
            }
        }
        offset += (n_in + 1) * n_out;
        x = y;
    }
    x
}

/// Mean and variance of the per-slot throughput, and the mean raw reward,
/// for a fixed geometry when actions are drawn from `probs` (idle, active,
/// backscatter), by enumerating (action, CU active, protected).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotMoments {
    pub mean_throughput: f64,
    pub var_throughput: f64,
    pub mean_reward: f64,
}

pub fn slot_moments(config: &EnvConfig, d2d_rate: f64, backscatter_rate: f64, probs: [f64; 3]) -> SlotMoments {
    let (pa, pp) = (config.p_access, config.p_protected);
    let mut outcomes: Vec<(f64, f64)> = Vec::new(); // (probability, reward)
    for (action, &p_action) in probs.iter().enumerate() {
        for (cu, p_cu) in [(false, 1.0 - pa), (true, pa)] {
            for (prot, p_prot) in [(false, 1.0 - pp), (true, pp)] {
                // the protected draw only matters with an active CU
                let p_prot = if cu { p_prot } else if prot { 0.0 } else { 1.0 };
                let reward = match action {
                    0 => 0.0,
                    1 if !cu || prot => d2d_rate,
                    1 => config.penalty,
                    _ if config.backscatter_needs_cu && !cu => 0.0,
                    _ => backscatter_rate,
                };
                outcomes.push((p_action * p_cu * p_prot, reward));
            }
        }
    }
    let mean_reward = outcomes.iter().map(|(p, r)| p * r).sum();
    let mean: f64 = outcomes.iter().map(|(p, r)| p * r.max(0.0)).sum();
    let second: f64 = outcomes.iter().map(|(p, r)| p * r.max(0.0).powi(2)).sum();
    SlotMoments { mean_throughput: mean, var_throughput: second - mean * mean, mean_reward }
}
