use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use qvit::qsim::oracle::{brute_force_expectation_z, brute_force_run};
use qvit::qsim::{Gate2x2, PlacedGate, StateVector};

fn gate(n: usize) -> impl Strategy<Value = PlacedGate> {
    let ry = (0..n, -4.0 * PI..4.0 * PI).prop_map(|(qubit, theta)| PlacedGate::Ry { qubit, theta });
    let single = (0..n, 0.0..PI, -PI..PI, -PI..PI, -PI..PI).prop_map(|(qubit, t, p, q, phi)| {
        let a = Complex64::from_polar(t.cos(), p);
        let b = Complex64::from_polar(t.sin(), q);
        let g = Complex64::from_polar(1.0, phi);
        PlacedGate::Single { qubit, gate: Gate2x2::new([[g * a, g * b], [-g * b.conj(), g * a.conj()]]) }
    });
    if n == 1 {
        return prop_oneof![ry, single].boxed();
    }
    let cnot = (0..n, 1..n).prop_map(move |(control, off)| PlacedGate::Cnot { control, target: (control + off) % n });
    prop_oneof![ry, single, cnot].boxed()
}

fn circuit(max_qubits: usize, max_gates: usize) -> impl Strategy<Value = (usize, Vec<PlacedGate>)> {
    (1..=max_qubits).prop_flat_map(move |n| (Just(n), prop::collection::vec(gate(n), 0..=max_gates)))
}

fn run(n: usize, gates: &[PlacedGate]) -> StateVector {
    let mut s = StateVector::new_zero_state(n).unwrap();
    s.apply_all(gates).unwrap();
    s
}

fn max_diff(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_is_preserved((n, gates) in circuit(10, 48)) {
        prop_assert!((run(n, &gates).norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strided_matches_dense((n, gates) in circuit(6, 32)) {
        let fast = run(n, &gates);
        let dense = brute_force_run(n, &gates).unwrap();
        prop_assert!(max_diff(&fast, &dense) <= 1e-12);
        for q in 0..n {
            let z = fast.expectation_z(q).unwrap();
            prop_assert!((z - brute_force_expectation_z(&dense, q)).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&z));
        }
    }

    #[test]
    fn ry_angles_add((n, prefix) in circuit(5, 12), q in 0usize..5, a in -PI..PI, b in -PI..PI) {
        let q = q % n;
        let mut split = run(n, &prefix);
        split.apply_ry(q, a).unwrap();
        split.apply_ry(q, b).unwrap();
        let mut joined = run(n, &prefix);
        joined.apply_ry(q, a + b).unwrap();
        prop_assert!(max_diff(&split, &joined) < 1e-12);
    }

    #[test]
    fn cnot_is_self_inverse((n, prefix) in circuit(5, 12), c in 0usize..5, off in 1usize..5) {
        prop_assume!(n > 1);
        let (c, t) = (c % n, (c % n + 1 + off % (n - 1)) % n);
        prop_assume!(c != t);
        let before = run(n, &prefix);
        let mut s = before.clone();
        s.apply_cnot(c, t).unwrap();
        s.apply_cnot(c, t).unwrap();
        prop_assert!(max_diff(&s, &before) == 0.0);
    }

    #[test]
    fn ry_periodicity((n, prefix) in circuit(4, 8), q in 0usize..4, theta in -PI..PI) {
        let q = q % n;
        let base = run(n, &prefix);
        let mut s = base.clone();
        s.apply_ry(q, theta).unwrap();
        // a full 2*pi turn negates the state; 4*pi returns it
        let mut half = base.clone();
        half.apply_ry(q, theta + 2.0 * PI).unwrap();
        let mut full = base;
        full.apply_ry(q, theta + 4.0 * PI).unwrap();
        let neg = StateVector::from_amplitudes(half.amplitudes().iter().map(|a| -a).collect()).unwrap();
        prop_assert!(max_diff(&neg, &s) < 1e-12);
        prop_assert!(max_diff(&full, &s) < 1e-12);
        for k in 0..n {
            prop_assert!((half.expectation_z(k).unwrap() - s.expectation_z(k).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn bad_indices_are_rejected() {
    let mut s = StateVector::new_zero_state(3).unwrap();
    assert!(s.apply_ry(3, 0.1).is_err());
    assert!(s.apply_cnot(1, 1).is_err());
    assert!(s.apply_cnot(0, 5).is_err());
    assert!(StateVector::new_zero_state(0).is_err());
    let bad = Gate2x2::from_real([[1.0, 1.0], [0.0, 1.0]]);
    assert!(s.apply_single_qubit(0, &bad).is_err());
    // failed calls leave the state untouched
    assert_eq!(s, StateVector::new_zero_state(3).unwrap());
}
