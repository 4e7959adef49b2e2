//! Dense statevector simulator.
//!
//! Qubit `k` is bit `k` of the basis-state index, so `|q_{n-1} ... q_1 q_0>`
//! has index `sum_k q_k 2^k`. Gates are applied in place by visiting the
//! amplitude pairs that differ only in the target bit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationAxis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    /// `exp(-i angle/2 P)` for the Pauli `P` of `axis`.
    Rotation { axis: RotationAxis, target: usize, angle: f64 },
    /// Controlled-Z; symmetric in its two qubits.
    Cz { control: usize, target: usize },
}

impl Gate {
    pub fn rx(target: usize, angle: f64) -> Gate {
        Gate::Rotation { axis: RotationAxis::X, target, angle }
    }

    pub fn ry(target: usize, angle: f64) -> Gate {
        Gate::Rotation { axis: RotationAxis::Y, target, angle }
    }

    pub fn rz(target: usize, angle: f64) -> Gate {
        Gate::Rotation { axis: RotationAxis::Z, target, angle }
    }

    pub fn cz(control: usize, target: usize) -> Gate {
        Gate::Cz { control, target }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rotation { angle, .. } => Some(angle),
            Gate::Cz { .. } => None,
        }
    }

    /// Copy of a rotation with its angle offset by `delta`; CZ is returned unchanged.
    pub fn shifted(&self, delta: f64) -> Gate {
        match *self {
            Gate::Rotation { axis, target, angle } => Gate::Rotation { axis, target, angle: angle + delta },
            g => g,
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let check = |index: usize| {
            if index < n_qubits {
                Ok(())
            } else {
                Err(Error::QubitIndex { index, n_qubits })
            }
        };
        match *self {
            Gate::Rotation { target, .. } => check(target),
            Gate::Cz { control, target } => {
                check(control)?;
                check(target)?;
                if control == target {
                    return Err(Error::Domain(format!("CZ control and target coincide on qubit {target}")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

/// Tensor product of single-qubit Paulis (identity elsewhere).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliProduct {
    factors: Vec<(usize, Pauli)>,
}

impl PauliProduct {
    pub fn new(mut factors: Vec<(usize, Pauli)>) -> Result<PauliProduct> {
        factors.sort_by_key(|&(q, _)| q);
        if factors.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("a qubit appears twice in a Pauli product".into()));
        }
        Ok(PauliProduct { factors })
    }

    /// `Z` on every listed qubit.
    pub fn z_on(qubits: &[usize]) -> Result<PauliProduct> {
        PauliProduct::new(qubits.iter().map(|&q| (q, Pauli::Z)).collect())
    }

    pub fn factors(&self) -> &[(usize, Pauli)] {
        &self.factors
    }

    fn z_mask(&self) -> Option<usize> {
        self.factors
            .iter()
            .try_fold(0usize, |m, &(q, p)| (p == Pauli::Z).then_some(m | (1 << q)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl Statevector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Statevector> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Domain(format!("qubit count must be in 1..={MAX_QUBITS}, got {n_qubits}")));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Statevector { n_qubits, amps })
    }

    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Statevector> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() || len > 1 << MAX_QUBITS {
            return Err(Error::Shape(format!("amplitude count {len} is not 2^n with 1 <= n <= {MAX_QUBITS}")));
        }
        Ok(Statevector { n_qubits: len.trailing_zeros() as usize, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    pub fn apply_all<'a, I: IntoIterator<Item = &'a Gate>>(&mut self, gates: I) -> Result<()> {
        for g in gates {
            self.apply(g)?;
        }
        Ok(())
    }

    /// Caller guarantees `gate.validate(self.n_qubits())` holds.
    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        match *gate {
            Gate::Rotation { axis, target, angle } => {
                let (s, c) = (angle * 0.5).sin_cos();
                match axis {
                    RotationAxis::X => self.rotate_x(target, c, s),
                    RotationAxis::Y => self.rotate_y(target, c, s),
                    RotationAxis::Z => self.rotate_z(target, c, s),
                }
            }
            Gate::Cz { control, target } => {
                let mask = (1 << control) | (1 << target);
                for (i, a) in self.amps.iter_mut().enumerate() {
                    if i & mask == mask {
                        *a = -*a;
                    }
                }
            }
        }
    }

    fn for_each_pair(&mut self, target: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
        let stride = 1 << target;
        for block in self.amps.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                f(a, b);
            }
        }
    }

    fn rotate_x(&mut self, target: usize, c: f64, s: f64) {
        // [[c, -is], [-is, c]]
        self.for_each_pair(target, |a, b| {
            let (x, y) = (*a, *b);
            *a = Complex64::new(c * x.re + s * y.im, c * x.im - s * y.re);
            *b = Complex64::new(s * x.im + c * y.re, -s * x.re + c * y.im);
        });
    }

    fn rotate_y(&mut self, target: usize, c: f64, s: f64) {
        // [[c, -s], [s, c]]
        self.for_each_pair(target, |a, b| {
            let (x, y) = (*a, *b);
            *a = x * c - y * s;
            *b = x * s + y * c;
        });
    }

    fn rotate_z(&mut self, target: usize, c: f64, s: f64) {
        let down = Complex64::new(c, -s);
        let up = Complex64::new(c, s);
        self.for_each_pair(target, |a, b| {
            *a *= down;
            *b *= up;
        });
    }

    /// `<psi|O|psi>` for a Pauli product `O`.
    pub fn expectation(&self, observable: &PauliProduct) -> Result<f64> {
        for &(q, _) in observable.factors() {
            if q >= self.n_qubits {
                return Err(Error::QubitIndex { index: q, n_qubits: self.n_qubits });
            }
        }
        if let Some(mask) = observable.z_mask() {
            return Ok(self.z_parity(mask));
        }
        let mut image = self.amps.clone();
        for &(q, p) in observable.factors() {
            let bit = 1 << q;
            match p {
                Pauli::X => {
                    for i in 0..image.len() {
                        if i & bit == 0 {
                            image.swap(i, i | bit);
                        }
                    }
                }
                Pauli::Y => {
                    for i in 0..image.len() {
                        if i & bit == 0 {
                            let (a, b) = (image[i], image[i | bit]);
                            image[i] = Complex64::new(0.0, -1.0) * b;
                            image[i | bit] = Complex64::new(0.0, 1.0) * a;
                        }
                    }
                }
                Pauli::Z => {
                    for (i, a) in image.iter_mut().enumerate() {
                        if i & bit != 0 {
                            *a = -*a;
                        }
                    }
                }
            }
        }
        Ok(self.amps.iter().zip(&image).map(|(a, b)| (a.conj() * b).re).sum())
    }

    /// `sum_i |amp_i|^2 (-1)^{popcount(i & mask)}`.
    pub(crate) fn z_parity(&self, mask: usize) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| if (i & mask).count_ones() % 2 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum()
    }
}
