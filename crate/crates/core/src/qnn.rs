//! Parameterized quantum neural network: angle encoding, the Ry-Ry-CNOT pair
//! ansatz over a ring of qubit pairs, `<Z>` readout, and exact gradients.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qsim::{PlacedGate, SimError, StateVector, MAX_QUBITS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QnnError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("ring topology needs at least 2 qubits, got {0}")]
    Topology(usize),
    #[error("expected {expected} pairs, got {got}")]
    PairCount { expected: usize, got: usize },
    #[error("expected {expected} circuit parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("input has length {got}, circuit has {expected} qubits")]
    InputLength { expected: usize, got: usize },
    #[error("parameter index {index} out of range for {count} parameters")]
    ParamIndex { index: usize, count: usize },
}

/// Nearest-neighbour ring: `(0,1), (1,2), ..., (n-2,n-1), (n-1,0)`.
pub fn ring_topology(n: usize) -> Result<Vec<(usize, usize)>, QnnError> {
    if n < 2 {
        return Err(QnnError::Topology(n));
    }
    Ok((0..n).map(|i| (i, (i + 1) % n)).collect())
}

/// Circuit description for one n -> n quantum projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QnnSpec {
    n_qubits: usize,
    pairs: Vec<(usize, usize)>,
    params: Vec<f64>,
}

impl QnnSpec {
    pub fn new(
        n_qubits: usize,
        pairs: Vec<(usize, usize)>,
        params: Vec<f64>,
    ) -> Result<Self, QnnError> {
        if !(1..=MAX_QUBITS).contains(&n_qubits) {
            return Err(SimError::QubitCount(n_qubits).into());
        }
        if pairs.len() != n_qubits {
            return Err(QnnError::PairCount { expected: n_qubits, got: pairs.len() });
        }
        for &(c, t) in &pairs {
            for idx in [c, t] {
                if idx >= n_qubits {
                    return Err(SimError::QubitIndex { index: idx, n_qubits }.into());
                }
            }
            if c == t {
                return Err(SimError::SameQubit(c).into());
            }
        }
        if params.len() != 2 * n_qubits {
            return Err(QnnError::ParamCount { expected: 2 * n_qubits, got: params.len() });
        }
        Ok(Self { n_qubits, pairs, params })
    }

    pub fn ring(n_qubits: usize, params: Vec<f64>) -> Result<Self, QnnError> {
        Self::new(n_qubits, ring_topology(n_qubits)?, params)
    }

    /// Ring spec with parameters drawn uniformly from `[-pi, pi]`.
    pub fn random_ring<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Result<Self, QnnError> {
        let params = (0..2 * n_qubits).map(|_| rng.gen_range(-PI..=PI)).collect();
        Self::ring(n_qubits, params)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self, QnnError> {
        Self::new(self.n_qubits, self.pairs.clone(), params)
    }

    /// Ansatz gates in application order (encoding excluded).
    pub fn ansatz_gates(&self) -> Vec<PlacedGate> {
        let mut gates = Vec::with_capacity(3 * self.pairs.len());
        for (k, &(c, t)) in self.pairs.iter().enumerate() {
            gates.push(PlacedGate::Ry { qubit: c, theta: self.params[2 * k] });
            gates.push(PlacedGate::Ry { qubit: t, theta: self.params[2 * k + 1] });
            gates.push(PlacedGate::Cnot { control: c, target: t });
        }
        gates
    }

    /// Encoding followed by the ansatz, as a flat gate list from `|0...0>`.
    pub fn full_circuit(&self, x: &[f64]) -> Result<Vec<PlacedGate>, QnnError> {
        self.check_input(x)?;
        let mut gates: Vec<PlacedGate> =
            x.iter().enumerate().map(|(q, &theta)| PlacedGate::Ry { qubit: q, theta }).collect();
        gates.extend(self.ansatz_gates());
        Ok(gates)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), QnnError> {
        if x.len() != self.n_qubits {
            return Err(QnnError::InputLength { expected: self.n_qubits, got: x.len() });
        }
        Ok(())
    }
}

/// Jacobians of one QNN evaluation, row-major with one row per output qubit.
#[derive(Clone, Debug, PartialEq)]
pub struct QnnGradients {
    pub n_qubits: usize,
    /// `[j * n + i] = dy_j / dx_i`
    pub d_output_d_input: Vec<f64>,
    /// `[j * 2n + k] = dy_j / dtheta_k`
    pub d_output_d_params: Vec<f64>,
}

impl QnnGradients {
    pub fn d_input(&self, output: usize, input: usize) -> f64 {
        self.d_output_d_input[output * self.n_qubits + input]
    }

    pub fn d_param(&self, output: usize, param: usize) -> f64 {
        self.d_output_d_params[output * 2 * self.n_qubits + param]
    }
}

/// Product state `(x) Ry(x_i)|0>`, built directly from the per-qubit factors.
pub fn angle_encode(x: &[f64]) -> Result<StateVector, QnnError> {
    let n = x.len();
    if !(1..=MAX_QUBITS).contains(&n) {
        return Err(SimError::QubitCount(n).into());
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    amps[0] = Complex64::new(1.0, 0.0);
    let mut len = 1;
    for &xi in x {
        let (s, c) = (xi / 2.0).sin_cos();
        for b in 0..len {
            let a = amps[b];
            amps[b] = a * c;
            amps[b + len] = a * s;
        }
        len <<= 1;
    }
    Ok(StateVector::from_amplitudes(amps)?)
}

/// Ry(theta1) on `q1`, Ry(theta2) on `q2`, then CNOT with `q1` controlling.
pub fn pair_ansatz(
    state: &mut StateVector,
    q1: usize,
    q2: usize,
    theta1: f64,
    theta2: f64,
) -> Result<(), QnnError> {
    if q1 == q2 {
        return Err(SimError::SameQubit(q1).into());
    }
    state.apply_ry(q1, theta1)?;
    state.apply_ry(q2, theta2)?;
    state.apply_cnot(q1, q2)?;
    Ok(())
}

/// Encode, apply the ansatz, read out `<Z>` per qubit.
pub fn qnn_forward(x: &[f64], spec: &QnnSpec) -> Result<Vec<f64>, QnnError> {
    spec.check_input(x)?;
    let mut state = angle_encode(x)?;
    for (k, &(c, t)) in spec.pairs.iter().enumerate() {
        pair_ansatz(&mut state, c, t, spec.params[2 * k], spec.params[2 * k + 1])?;
    }
    Ok(state.expectation_z_all())
}

/// Parameter-shift derivative of every output with respect to one circuit
/// parameter. Exact for Ry gates.
pub fn parameter_shift_gradient(
    x: &[f64],
    spec: &QnnSpec,
    param_index: usize,
) -> Result<Vec<f64>, QnnError> {
    if param_index >= spec.n_params() {
        return Err(QnnError::ParamIndex { index: param_index, count: spec.n_params() });
    }
    let shifted = |delta: f64| {
        let mut p = spec.params.clone();
        p[param_index] += delta;
        qnn_forward(x, &spec.with_params(p)?)
    };
    let plus = shifted(FRAC_PI_2)?;
    let minus = shifted(-FRAC_PI_2)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / 2.0).collect())
}

/// Outputs and full Jacobians in one forward sweep plus one reverse sweep.
///
/// Every gate in the circuit is real, so amplitudes stay real and the sweep
/// runs on `f64`. The reverse pass carries one adjoint vector per output
/// qubit, interleaved as `lam[b * n + j]`, and un-computes the forward state
/// by applying inverse gates. For an Ry on qubit `q` the derivative is
/// `2 <lam_j| A_q |psi_after>` with `A = [[0, -1/2], [1/2, 0]]`, since the
/// generator commutes with the rotation.
pub fn qnn_forward_with_gradients(
    x: &[f64],
    spec: &QnnSpec,
) -> Result<(Vec<f64>, QnnGradients), QnnError> {
    spec.check_input(x)?;
    let n = spec.n_qubits;
    let dim = 1usize << n;
    let n_params = 2 * n;
    let trig: Vec<(f64, f64)> = spec.params.iter().map(|t| (t / 2.0).sin_cos()).collect();
    let mut psi = forward_real(x, spec, &trig);

    let mut y = vec![0.0; n];
    let mut lam = vec![0.0; dim * n];
    for (b, &a) in psi.iter().enumerate() {
        let p = a * a;
        for (j, yj) in y.iter_mut().enumerate() {
            if (b >> j) & 1 == 0 {
                *yj += p;
                lam[b * n + j] = a;
            } else {
                *yj -= p;
                lam[b * n + j] = -a;
            }
        }
    }
    y.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));

    let mut d_params = vec![0.0; n * n_params];
    for (k, &(c, t)) in spec.pairs.iter().enumerate().rev() {
        cnot_real(&mut psi, c, t);
        cnot_lam(&mut lam, n, c, t);
        for (qubit, slot) in [(t, 2 * k + 1), (c, 2 * k)] {
            let (s, co) = trig[slot];
            generator_overlap(&psi, &lam, n, qubit, |j, v| d_params[j * n_params + slot] = v);
            ry_real(&mut psi, qubit, (-s, co));
            ry_lam(&mut lam, n, qubit, (-s, co));
        }
    }

    // psi is now the encoded product state; encoding rotations on distinct
    // qubits commute, so every input derivative reads off the same adjoints.
    let mut d_input = vec![0.0; n * n];
    for q in 0..n {
        generator_overlap(&psi, &lam, n, q, |j, v| d_input[j * n + q] = v);
    }

    Ok((
        y,
        QnnGradients { n_qubits: n, d_output_d_input: d_input, d_output_d_params: d_params },
    ))
}

/// Outputs through the real-arithmetic kernel used by
/// [`qnn_forward_with_gradients`], bit-identical to its first return value.
pub fn qnn_forward_fast(x: &[f64], spec: &QnnSpec) -> Result<Vec<f64>, QnnError> {
    qnn_forward_state(x, spec).map(|(y, _)| y)
}

fn forward_real(x: &[f64], spec: &QnnSpec, trig: &[(f64, f64)]) -> Vec<f64> {
    let mut psi = vec![0.0f64; 1 << spec.n_qubits];
    psi[0] = 1.0;
    let mut len = 1;
    for &xi in x {
        let (s, c) = (xi / 2.0).sin_cos();
        for b in 0..len {
            let a = psi[b];
            psi[b] = a * c;
            psi[b + len] = a * s;
        }
        len <<= 1;
    }
    for (k, &(c, t)) in spec.pairs.iter().enumerate() {
        ry_real(&mut psi, c, trig[2 * k]);
        ry_real(&mut psi, t, trig[2 * k + 1]);
        cnot_real(&mut psi, c, t);
    }
    psi
}

/// Outputs together with the final real state, for a later [`qnn_vjp`].
pub fn qnn_forward_state(x: &[f64], spec: &QnnSpec) -> Result<(Vec<f64>, Vec<f64>), QnnError> {
    spec.check_input(x)?;
    let trig: Vec<(f64, f64)> = spec.params.iter().map(|t| (t / 2.0).sin_cos()).collect();
    let psi = forward_real(x, spec, &trig);
    let n = spec.n_qubits;
    let mut y = vec![0.0; n];
    for (b, &a) in psi.iter().enumerate() {
        let p = a * a;
        for (j, yj) in y.iter_mut().enumerate() {
            if (b >> j) & 1 == 0 {
                *yj += p;
            } else {
                *yj -= p;
            }
        }
    }
    y.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok((y, psi))
}

/// Vector-Jacobian product: given the final state of a forward pass and an
/// upstream gradient `g` on the outputs, returns `(g^T dy/dx, g^T dy/dtheta)`.
///
/// A single adjoint `lam = sum_j g_j Z_j |psi>` is swept backwards, so the
/// cost does not grow with the number of outputs.
pub fn qnn_vjp(spec: &QnnSpec, state: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>), QnnError> {
    let n = spec.n_qubits;
    if g.len() != n {
        return Err(QnnError::InputLength { expected: n, got: g.len() });
    }
    let dim = 1usize << n;
    if state.len() != dim {
        return Err(QnnError::InputLength { expected: dim, got: state.len() });
    }
    let trig: Vec<(f64, f64)> = spec.params.iter().map(|t| (t / 2.0).sin_cos()).collect();

    // w[b] = sum_j g_j z_j(b): setting bit j flips z_j from +1 to -1
    let mut lam = vec![0.0; dim];
    lam[0] = g.iter().sum();
    for b in 1..dim {
        lam[b] = lam[b & (b - 1)] - 2.0 * g[b.trailing_zeros() as usize];
    }
    let mut psi = state.to_vec();
    for (l, p) in lam.iter_mut().zip(&psi) {
        *l *= p;
    }

    let mut d_params = vec![0.0; 2 * n];
    for (k, &(c, t)) in spec.pairs.iter().enumerate().rev() {
        cnot_real(&mut psi, c, t);
        cnot_real(&mut lam, c, t);
        for (qubit, slot) in [(t, 2 * k + 1), (c, 2 * k)] {
            let (s, co) = trig[slot];
            d_params[slot] = single_overlap(&psi, &lam, qubit);
            ry_real(&mut psi, qubit, (-s, co));
            ry_real(&mut lam, qubit, (-s, co));
        }
    }
    let d_input = (0..n).map(|q| single_overlap(&psi, &lam, q)).collect();
    Ok((d_input, d_params))
}

/// `2 <lam| A_q |psi>` for a single adjoint vector.
#[inline]
fn single_overlap(psi: &[f64], lam: &[f64], qubit: usize) -> f64 {
    let stride = 1usize << qubit;
    let mut acc = 0.0;
    for (pb, lb) in psi.chunks_exact(stride << 1).zip(lam.chunks_exact(stride << 1)) {
        let (p0, p1) = pb.split_at(stride);
        let (l0, l1) = lb.split_at(stride);
        for i in 0..stride {
            acc += l1[i] * p0[i] - l0[i] * p1[i];
        }
    }
    acc
}

/// Jacobians only; see [`qnn_forward_with_gradients`].
pub fn qnn_adjoint_gradients(x: &[f64], spec: &QnnSpec) -> Result<QnnGradients, QnnError> {
    qnn_forward_with_gradients(x, spec).map(|(_, g)| g)
}

#[inline]
fn ry_real(psi: &mut [f64], qubit: usize, (s, c): (f64, f64)) {
    let stride = 1usize << qubit;
    for block in psi.chunks_exact_mut(stride << 1) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
            let (x0, x1) = (*a0, *a1);
            *a0 = c * x0 - s * x1;
            *a1 = s * x0 + c * x1;
        }
    }
}

#[inline]
fn cnot_real(psi: &mut [f64], control: usize, target: usize) {
    let (lo, hi) = (control.min(target), control.max(target));
    let tm = 1usize << target;
    let cm = 1usize << control;
    for k in 0..psi.len() >> 2 {
        // insert zero bits at `lo` then `hi` to enumerate indices with both clear
        let a = ((k >> lo) << (lo + 1)) | (k & ((1 << lo) - 1));
        let base = ((a >> hi) << (hi + 1)) | (a & ((1 << hi) - 1));
        psi.swap(base | cm, base | cm | tm);
    }
}

#[inline]
fn ry_lam(lam: &mut [f64], n: usize, qubit: usize, (s, c): (f64, f64)) {
    let stride = n << qubit;
    for block in lam.chunks_exact_mut(stride << 1) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
            let (x0, x1) = (*a0, *a1);
            *a0 = c * x0 - s * x1;
            *a1 = s * x0 + c * x1;
        }
    }
}

#[inline]
fn cnot_lam(lam: &mut [f64], n: usize, control: usize, target: usize) {
    let (cm, tm) = (1usize << control, 1usize << target);
    let dim = lam.len() / n;
    for i in 0..dim {
        if i & cm != 0 && i & tm == 0 {
            let (lo, hi) = lam.split_at_mut((i | tm) * n);
            lo[i * n..i * n + n].swap_with_slice(&mut hi[..n]);
        }
    }
}

/// Writes `2 <lam_j| A_q |psi>` for each output `j` through `emit`.
#[inline]
fn generator_overlap(
    psi: &[f64],
    lam: &[f64],
    n: usize,
    qubit: usize,
    mut emit: impl FnMut(usize, f64),
) {
    let mut acc = [0.0f64; MAX_QUBITS];
    let stride = 1usize << qubit;
    for base in (0..psi.len()).step_by(stride << 1) {
        for b0 in base..base + stride {
            let b1 = b0 + stride;
            let (p0, p1) = (psi[b0], psi[b1]);
            let l0 = &lam[b0 * n..b0 * n + n];
            let l1 = &lam[b1 * n..b1 * n + n];
            for j in 0..n {
                // A|psi>: component 0 gets -p1/2, component 1 gets p0/2.
                acc[j] += l1[j] * p0 - l0[j] * p1;
            }
        }
    }
    for (j, v) in acc.iter().take(n).enumerate() {
        emit(j, *v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::oracle::{brute_force_expectation_z, brute_force_run};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn ring_examples() {
        assert_eq!(ring_topology(4).unwrap(), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        let r8 = ring_topology(8).unwrap();
        assert_eq!(r8.len(), 8);
        assert_eq!(*r8.last().unwrap(), (7, 0));
        assert_eq!(ring_topology(2).unwrap(), vec![(0, 1), (1, 0)]);
        assert_eq!(ring_topology(1), Err(QnnError::Topology(1)));
    }

    #[test]
    fn angle_encode_examples() {
        let s = angle_encode(&[0.0; 4]).unwrap();
        assert_eq!(s, StateVector::new_zero_state(4).unwrap());

        // qubit 0 flipped: little-endian index 1
        let s = angle_encode(&[PI, 0.0, 0.0, 0.0]).unwrap();
        for (i, a) in s.amplitudes().iter().enumerate() {
            let expect = if i == 1 { 1.0 } else { 0.0 };
            assert!((a.re - expect).abs() < 1e-12 && a.im == 0.0);
        }

        let s = angle_encode(&[FRAC_PI_2, FRAC_PI_2]).unwrap();
        assert!(s.amplitudes().iter().all(|a| (a.re - 0.5).abs() < 1e-12));
    }

    #[test]
    fn pair_ansatz_examples() {
        let mut s = StateVector::new_zero_state(2).unwrap();
        pair_ansatz(&mut s, 0, 1, 0.0, 0.0).unwrap();
        assert_eq!(s, StateVector::new_zero_state(2).unwrap());

        let mut s = StateVector::new_zero_state(2).unwrap();
        pair_ansatz(&mut s, 0, 1, PI, 0.0).unwrap();
        assert!((s.amplitudes()[3].re - 1.0).abs() < 1e-12);

        let mut s = StateVector::new_zero_state(2).unwrap();
        pair_ansatz(&mut s, 0, 1, FRAC_PI_2, 0.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = s.amplitudes();
        assert!((a[0].re - h).abs() < 1e-12 && (a[3].re - h).abs() < 1e-12);
        assert!(a[1].norm() < 1e-12 && a[2].norm() < 1e-12);

        assert!(pair_ansatz(&mut s, 1, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(QnnSpec::ring(4, vec![0.0; 8]).is_ok());
        assert_eq!(
            QnnSpec::ring(4, vec![0.0; 7]),
            Err(QnnError::ParamCount { expected: 8, got: 7 })
        );
        assert!(QnnSpec::new(2, vec![(0, 0), (1, 0)], vec![0.0; 4]).is_err());
        assert!(QnnSpec::new(2, vec![(0, 1)], vec![0.0; 4]).is_err());
        assert!(QnnSpec::new(2, vec![(0, 2), (1, 0)], vec![0.0; 4]).is_err());
    }

    #[test]
    fn forward_identity_params() {
        let spec = QnnSpec::ring(4, vec![0.0; 8]).unwrap();
        assert_eq!(qnn_forward(&[0.0; 4], &spec).unwrap(), vec![1.0; 4]);
        assert_eq!(
            qnn_forward(&[0.0; 3], &spec),
            Err(QnnError::InputLength { expected: 4, got: 3 })
        );
    }

    #[test]
    fn forward_two_qubit_matches_dense_oracle() {
        // x = [a, 0], zero parameters, pairs (0,1),(1,0). Dense evaluation:
        // after CNOT(0,1) the register is cos(a/2)|00> + sin(a/2)|11>, and
        // CNOT(1,0) maps |11> -> |10> (qubit 1 set, qubit 0 cleared).
        let a = 0.9;
        let spec = QnnSpec::ring(2, vec![0.0; 4]).unwrap();
        let y = qnn_forward(&[a, 0.0], &spec).unwrap();
        let dense = brute_force_run(2, &spec.full_circuit(&[a, 0.0]).unwrap()).unwrap();
        let oracle: Vec<f64> = (0..2).map(|q| brute_force_expectation_z(&dense, q)).collect();
        assert!(close(&y, &oracle, 1e-12));
        assert!(close(&y, &[1.0, a.cos()], 1e-12));
    }

    #[test]
    fn one_qubit_adjoint_closed_form() {
        // Ry(x) then Ry(theta) on qubit 0 gives cos(x + theta); the two
        // CNOTs of a 2-qubit ring with zero remaining angles move that value
        // onto qubit 1's readout.
        let spec = QnnSpec::ring(2, vec![PI / 4.0, 0.0, 0.0, 0.0]).unwrap();
        let x = [PI / 4.0, 0.0];
        let (y, g) = qnn_forward_with_gradients(&x, &spec).unwrap();
        // qubit 1 holds cos(x0 + t0) after both CNOTs; qubit 0 returns to |0>.
        assert!((y[1] - 0.0).abs() < 1e-12);
        assert!((g.d_param(1, 0) + 1.0).abs() < 1e-12);
        assert!((g.d_input(1, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_outputs_match_complex_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3, 4, 8] {
            let spec = QnnSpec::random_ring(n, &mut rng).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (y, _) = qnn_forward_with_gradients(&x, &spec).unwrap();
            assert!(close(&y, &qnn_forward(&x, &spec).unwrap(), 1e-12));
            assert_eq!(y, qnn_forward_fast(&x, &spec).unwrap());
        }
    }

    #[test]
    fn parameter_shift_examples() {
        let spec = QnnSpec::ring(2, vec![0.0; 4]).unwrap();
        let g = parameter_shift_gradient(&[0.0, 0.0], &spec, 0).unwrap();
        assert!(close(&g, &[0.0, 0.0], 1e-15));
        assert_eq!(
            parameter_shift_gradient(&[0.0, 0.0], &spec, 4),
            Err(QnnError::ParamIndex { index: 4, count: 4 })
        );
    }

    #[test]
    fn disconnected_parameter_has_zero_shift_gradient() {
        // Slot 7 is the rotation on qubit 0 in the closing pair (3, 0). Only
        // CNOT(3, 0) follows it, and that gate changes qubit 0 alone, so the
        // outputs of qubits 1..=3 cannot depend on it.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = QnnSpec::random_ring(4, &mut rng).unwrap();
        let x = [0.3, -0.2, 1.1, 0.5];
        let g = parameter_shift_gradient(&x, &spec, 7).unwrap();
        for j in 1..4 {
            assert!(g[j].abs() < 1e-12, "{g:?}");
        }
        assert!(g[0].abs() > 1e-6);
    }

    #[test]
    fn vjp_matches_jacobian_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [2, 3, 4, 8] {
            let spec = QnnSpec::random_ring(n, &mut rng).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..PI)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (y, jac) = qnn_forward_with_gradients(&x, &spec).unwrap();
            let (y2, state) = qnn_forward_state(&x, &spec).unwrap();
            assert_eq!(y, y2);
            let (dx, dp) = qnn_vjp(&spec, &state, &g).unwrap();
            for i in 0..n {
                let want: f64 = (0..n).map(|j| g[j] * jac.d_input(j, i)).sum();
                assert!((dx[i] - want).abs() < 1e-12, "n={n} dx[{i}]");
            }
            for k in 0..2 * n {
                let want: f64 = (0..n).map(|j| g[j] * jac.d_param(j, k)).sum();
                assert!((dp[k] - want).abs() < 1e-12, "n={n} dp[{k}]");
            }
        }
    }
}
