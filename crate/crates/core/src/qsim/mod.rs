//! Exact state-vector simulation for small registers.
//!
//! Amplitudes are stored little-endian: qubit `q` is bit `q` of the
//! amplitude index, so qubit 0 is the least significant bit. The brute-force
//! oracle in [`oracle`] uses the same convention.

pub mod oracle;

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// Largest register the simulator accepts.
pub const MAX_QUBITS: usize = 12;

const UNITARY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("qubit count {0} outside supported range 1..={MAX_QUBITS}")]
    QubitCount(usize),
    #[error("qubit index {index} out of range for {n_qubits}-qubit register")]
    QubitIndex { index: usize, n_qubits: usize },
    #[error("control and target must differ (both {0})")]
    SameQubit(usize),
    #[error("gate is not unitary (max deviation {0:e})")]
    NonUnitary(f64),
    #[error("oracle supports at most {max} qubits, got {got}")]
    OracleScale { max: usize, got: usize },
}

/// A 2x2 complex matrix acting on one qubit, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gate2x2 {
    pub entries: [[Complex64; 2]; 2],
}

impl Gate2x2 {
    pub fn new(entries: [[Complex64; 2]; 2]) -> Self {
        Self { entries }
    }

    pub fn from_real(m: [[f64; 2]; 2]) -> Self {
        let c = |v: f64| Complex64::new(v, 0.0);
        Self::new([[c(m[0][0]), c(m[0][1])], [c(m[1][0]), c(m[1][1])]])
    }

    /// Y-rotation `[[cos t/2, -sin t/2], [sin t/2, cos t/2]]`. Angle encoding
    /// uses the same matrix with the data value as the angle.
    pub fn ry(theta: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        Self::from_real([[c, -s], [s, c]])
    }

    pub fn identity() -> Self {
        Self::from_real([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn pauli_x() -> Self {
        Self::from_real([[0.0, 1.0], [1.0, 0.0]])
    }

    pub fn dagger(&self) -> Self {
        let e = &self.entries;
        Self::new([[e[0][0].conj(), e[1][0].conj()], [e[0][1].conj(), e[1][1].conj()]])
    }

    pub fn mul(&self, rhs: &Gate2x2) -> Self {
        let (a, b) = (&self.entries, &rhs.entries);
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Self::new(out)
    }

    /// Largest elementwise deviation of `G G^dagger` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.mul(&self.dagger());
        let id = Self::identity();
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((p.entries[i][j] - id.entries[i][j]).norm());
            }
        }
        worst
    }

    pub fn check_unitary(&self) -> Result<(), SimError> {
        let err = self.unitarity_error();
        if err > UNITARY_TOL {
            Err(SimError::NonUnitary(err))
        } else {
            Ok(())
        }
    }
}

/// A gate placed on specific qubits of a register.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlacedGate {
    Ry { qubit: usize, theta: f64 },
    Single { qubit: usize, gate: Gate2x2 },
    Cnot { control: usize, target: usize },
}

impl PlacedGate {
    fn check(&self, n_qubits: usize) -> Result<(), SimError> {
        match *self {
            PlacedGate::Ry { qubit, .. } | PlacedGate::Single { qubit, .. } => {
                check_index(qubit, n_qubits)
            }
            PlacedGate::Cnot { control, target } => check_pair(control, target, n_qubits),
        }
    }
}

fn check_index(index: usize, n_qubits: usize) -> Result<(), SimError> {
    if index < n_qubits {
        Ok(())
    } else {
        Err(SimError::QubitIndex { index, n_qubits })
    }
}

fn check_pair(control: usize, target: usize, n_qubits: usize) -> Result<(), SimError> {
    check_index(control, n_qubits)?;
    check_index(target, n_qubits)?;
    if control == target {
        return Err(SimError::SameQubit(control));
    }
    Ok(())
}

/// Pure state of an n-qubit register.
#[derive(Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateVector")
            .field("n_qubits", &self.n_qubits)
            .field("amplitudes", &self.amplitudes)
            .finish()
    }
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn new_zero_state(n_qubits: usize) -> Result<Self, SimError> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(SimError::QubitCount(n_qubits));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amplitudes })
    }

    /// Wraps raw amplitudes. The length must be a power of two within range;
    /// normalization is the caller's responsibility.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self, SimError> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(SimError::QubitCount(0));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(SimError::QubitCount(n_qubits));
        }
        Ok(Self { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies a 2x2 gate with a strided in-place sweep over amplitude pairs
    /// differing only in bit `qubit`.
    pub fn apply_single_qubit(&mut self, qubit: usize, gate: &Gate2x2) -> Result<(), SimError> {
        check_index(qubit, self.n_qubits)?;
        #[cfg(debug_assertions)]
        gate.check_unitary()?;
        let [[g00, g01], [g10, g11]] = gate.entries;
        let stride = 1usize << qubit;
        for block in self.amplitudes.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = g00 * x0 + g01 * x1;
                *a1 = g10 * x0 + g11 * x1;
            }
        }
        Ok(())
    }

    /// Real Y-rotation, specialised so the hot path avoids complex
    /// multiplications by the zero imaginary parts of the gate.
    pub fn apply_ry(&mut self, qubit: usize, theta: f64) -> Result<(), SimError> {
        check_index(qubit, self.n_qubits)?;
        let (s, c) = (theta / 2.0).sin_cos();
        let stride = 1usize << qubit;
        for block in self.amplitudes.chunks_exact_mut(stride << 1) {
            let (lo, hi) = block.split_at_mut(stride);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x0, x1) = (*a0, *a1);
                *a0 = x0 * c - x1 * s;
                *a1 = x0 * s + x1 * c;
            }
        }
        Ok(())
    }

    /// Swaps the target bit of every amplitude whose control bit is set.
    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<(), SimError> {
        check_pair(control, target, self.n_qubits)?;
        let cmask = 1usize << control;
        let tmask = 1usize << target;
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, gate: &PlacedGate) -> Result<(), SimError> {
        match *gate {
            PlacedGate::Ry { qubit, theta } => self.apply_ry(qubit, theta),
            PlacedGate::Single { qubit, ref gate } => self.apply_single_qubit(qubit, gate),
            PlacedGate::Cnot { control, target } => self.apply_cnot(control, target),
        }
    }

    pub fn apply_all<'a>(
        &mut self,
        gates: impl IntoIterator<Item = &'a PlacedGate>,
    ) -> Result<(), SimError> {
        for g in gates {
            self.apply(g)?;
        }
        Ok(())
    }

    /// `<Z>` on one qubit: probability of bit 0 minus probability of bit 1.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64, SimError> {
        check_index(qubit, self.n_qubits)?;
        let mask = 1usize << qubit;
        let z: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum();
        Ok(z.clamp(-1.0, 1.0))
    }

    /// `<Z>` for every qubit in a single pass over the amplitudes.
    pub fn expectation_z_all(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits];
        self.expectation_z_all_into(&mut out);
        out
    }

    pub(crate) fn expectation_z_all_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_qubits);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, a) in self.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            for (q, v) in out.iter_mut().enumerate() {
                if (i >> q) & 1 == 0 {
                    *v += p;
                } else {
                    *v -= p;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    }
}

/// Validates every gate of a circuit against a register size.
pub fn validate_circuit(n_qubits: usize, gates: &[PlacedGate]) -> Result<(), SimError> {
    gates.iter().try_for_each(|g| g.check(n_qubits))
}
