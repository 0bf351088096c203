//! Dense-matrix reference path used to validate the strided kernels.
//!
//! Every gate is lifted to a full `2^n x 2^n` operator with Kronecker
//! products of per-qubit 2x2 factors and the operators are multiplied in
//! circuit order. Exponential in memory; only for tests at <= 8 qubits.

use num_complex::Complex64;

use super::{validate_circuit, Gate2x2, PlacedGate, SimError, StateVector};

pub const ORACLE_MAX_QUBITS: usize = 8;

/// Square dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        Self { dim, data }
    }

    pub fn from_gate(g: &Gate2x2) -> Self {
        let e = g.entries;
        Self { dim: 2, data: vec![e[0][0], e[0][1], e[1][0], e[1][1]] }
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    /// `self (x) rhs`.
    pub fn kron(&self, rhs: &DenseMatrix) -> DenseMatrix {
        let dim = self.dim * rhs.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let a = self.get(i, j);
                for k in 0..rhs.dim {
                    for l in 0..rhs.dim {
                        data[(i * rhs.dim + k) * dim + (j * rhs.dim + l)] = a * rhs.get(k, l);
                    }
                }
            }
        }
        DenseMatrix { dim, data }
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.dim, rhs.dim);
        let n = self.dim;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * rhs.get(k, j);
                }
            }
        }
        DenseMatrix { dim: n, data }
    }

    pub fn add(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.dim, rhs.dim);
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        DenseMatrix { dim: self.dim, data }
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }
}

/// Kronecker product of one factor per qubit. Qubit `n-1` is the leftmost
/// factor, which places qubit 0 on the least significant index bit.
fn lift(n_qubits: usize, factor_for: impl Fn(usize) -> DenseMatrix) -> DenseMatrix {
    let mut m = factor_for(n_qubits - 1);
    for q in (0..n_qubits - 1).rev() {
        m = m.kron(&factor_for(q));
    }
    m
}

fn gate_matrix(n_qubits: usize, gate: &PlacedGate) -> DenseMatrix {
    let id = DenseMatrix::identity(2);
    match *gate {
        PlacedGate::Ry { qubit, theta } => {
            let g = DenseMatrix::from_gate(&Gate2x2::ry(theta));
            lift(n_qubits, |q| if q == qubit { g.clone() } else { id.clone() })
        }
        PlacedGate::Single { qubit, gate } => {
            let g = DenseMatrix::from_gate(&gate);
            lift(n_qubits, |q| if q == qubit { g.clone() } else { id.clone() })
        }
        PlacedGate::Cnot { control, target } => {
            // |0><0|_c (x) I + |1><1|_c (x) X_t
            let p0 = DenseMatrix::from_gate(&Gate2x2::from_real([[1.0, 0.0], [0.0, 0.0]]));
            let p1 = DenseMatrix::from_gate(&Gate2x2::from_real([[0.0, 0.0], [0.0, 1.0]]));
            let x = DenseMatrix::from_gate(&Gate2x2::pauli_x());
            let off = lift(n_qubits, |q| if q == control { p0.clone() } else { id.clone() });
            let on = lift(n_qubits, |q| {
                if q == control {
                    p1.clone()
                } else if q == target {
                    x.clone()
                } else {
                    id.clone()
                }
            });
            off.add(&on)
        }
    }
}

/// Full-register unitary of a circuit, `U = G_last ... G_first`.
pub fn brute_force_circuit_matrix(
    n_qubits: usize,
    gates: &[PlacedGate],
) -> Result<DenseMatrix, SimError> {
    if n_qubits == 0 {
        return Err(SimError::QubitCount(0));
    }
    if n_qubits > ORACLE_MAX_QUBITS {
        return Err(SimError::OracleScale { max: ORACLE_MAX_QUBITS, got: n_qubits });
    }
    validate_circuit(n_qubits, gates)?;
    let mut u = DenseMatrix::identity(1 << n_qubits);
    for g in gates {
        u = gate_matrix(n_qubits, g).matmul(&u);
    }
    Ok(u)
}

/// Runs a circuit from `|0...0>` through the dense path.
pub fn brute_force_run(n_qubits: usize, gates: &[PlacedGate]) -> Result<StateVector, SimError> {
    let u = brute_force_circuit_matrix(n_qubits, gates)?;
    let zero = StateVector::new_zero_state(n_qubits)?;
    StateVector::from_amplitudes(u.apply(zero.amplitudes()))
}

/// `<Z_q>` computed as `<psi| Z_q |psi>` with a lifted dense Z.
pub fn brute_force_expectation_z(state: &StateVector, qubit: usize) -> f64 {
    let n = state.n_qubits();
    let z = DenseMatrix::from_gate(&Gate2x2::from_real([[1.0, 0.0], [0.0, -1.0]]));
    let id = DenseMatrix::identity(2);
    let zq = lift(n, |q| if q == qubit { z.clone() } else { id.clone() });
    let zpsi = zq.apply(state.amplitudes());
    state.amplitudes().iter().zip(&zpsi).map(|(a, b)| (a.conj() * b).re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_qubit_base_case_is_gate_itself() {
        let m = brute_force_circuit_matrix(1, &[PlacedGate::Ry { qubit: 0, theta: 0.8 }]).unwrap();
        assert_eq!(m, DenseMatrix::from_gate(&Gate2x2::ry(0.8)));
    }

    #[test]
    fn cnot_matrix_control_on_high_bit() {
        // Control on qubit 1 (the high bit) yields the textbook 4x4 CNOT.
        let m = brute_force_circuit_matrix(2, &[PlacedGate::Cnot { control: 1, target: 0 }])
            .unwrap();
        let expected = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for (r, row) in expected.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(m.get(r, c), Complex64::new(*v, 0.0));
            }
        }
    }

    #[test]
    fn oracle_scale_limit() {
        assert_eq!(
            brute_force_circuit_matrix(9, &[]),
            Err(SimError::OracleScale { max: 8, got: 9 })
        );
    }
}
