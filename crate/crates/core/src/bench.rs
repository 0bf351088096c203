//! Throughput of the QNN forward and adjoint-gradient kernels.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::qnn::{qnn_forward_fast, qnn_forward_state, qnn_vjp, QnnSpec};

#[derive(Clone, Debug, Serialize)]
pub struct BenchResult {
    pub n_qubits: usize,
    pub forward_per_sec: f64,
    pub gradient_per_sec: f64,
    /// Cost of one forward-plus-adjoint evaluation (outputs and the
    /// vector-Jacobian product for both inputs and angles) in units of one
    /// forward evaluation.
    pub gradient_cost_ratio: f64,
    pub parallel_forward_per_sec: f64,
    pub parallel_gradient_per_sec: f64,
    pub threads: usize,
}

/// Runs `body` over `inputs` repeatedly until `min_time` has elapsed and
/// returns evaluations per second.
fn rate(inputs: &[Vec<f64>], min_time: Duration, mut body: impl FnMut(&[Vec<f64>])) -> f64 {
    body(inputs); // warm-up
    let start = Instant::now();
    let mut evals = 0usize;
    while start.elapsed() < min_time {
        body(inputs);
        evals += inputs.len();
    }
    evals as f64 / start.elapsed().as_secs_f64()
}

const ROUNDS: u32 = 5;

/// Serial rates use `min_time` per kernel split over several rounds; the
/// parallel rates use it once each.
pub fn bench_qnn(n_qubits: usize, min_time: Duration, seed: u64) -> BenchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = QnnSpec::random_ring(n_qubits, &mut rng).expect("valid width");
    let inputs: Vec<Vec<f64>> = (0..256)
        .map(|_| (0..n_qubits).map(|_| rng.gen_range(0.0..std::f64::consts::PI)).collect())
        .collect();
    let upstream: Vec<f64> = (0..n_qubits).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grad = |x: &[f64]| {
        let (_, psi) = qnn_forward_state(x, &spec).expect("forward");
        qnn_vjp(&spec, &psi, &upstream).expect("vjp")
    };

    // Alternate short rounds and keep the best of each, so a burst of
    // machine noise does not land on one side of the ratio only.
    let round = min_time / ROUNDS;
    let (mut forward, mut gradient) = (0.0f64, 0.0f64);
    for _ in 0..ROUNDS {
        forward = forward.max(rate(&inputs, round, |xs| {
            for x in xs {
                black_box(qnn_forward_fast(black_box(x), &spec).expect("forward"));
            }
        }));
        gradient = gradient.max(rate(&inputs, round, |xs| {
            for x in xs {
                black_box(grad(black_box(x)));
            }
        }));
    }
    let par_forward = rate(&inputs, min_time, |xs| {
        xs.par_iter().for_each(|x| {
            black_box(qnn_forward_fast(x, &spec).expect("forward"));
        })
    });
    let par_gradient = rate(&inputs, min_time, |xs| {
        xs.par_iter().for_each(|x| {
            black_box(grad(x));
        })
    });
    BenchResult {
        n_qubits,
        forward_per_sec: forward,
        gradient_per_sec: gradient,
        gradient_cost_ratio: forward / gradient,
        parallel_forward_per_sec: par_forward,
        parallel_gradient_per_sec: par_gradient,
        threads: rayon::current_num_threads(),
    }
}
