//! Acceptance run. Prints one line per criterion and exits non-zero if any
//! criterion fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- 1 2 8`.
//!
//! Criterion 7 needs the official RetinaMNIST file and only runs when
//! `QVIT_DATA_ROOT` points at a directory holding `retinamnist.npz`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qvit::bench::bench_qnn;
use qvit::data::{
    load_medmnist, load_npz_splits, normalize_to_angles, parse_npy, parse_npz, synthetic_dataset, write_npy,
    write_npz, AngleRange, DatasetSplit, NpyError, Splits, SyntheticOptions, MEDMNIST,
};
use qvit::model::{count_parameters, AttentionKind, Model, ModelConfig};
use qvit::qnn::{parameter_shift_gradient, qnn_forward, qnn_forward_with_gradients, QnnSpec};
use qvit::qsim::oracle::brute_force_run;
use qvit::qsim::{Gate2x2, PlacedGate, StateVector};
use qvit::train::{
    batch_gradients, evaluate, kd_direct_logits, kd_pretrain, linear_probe, softmax, train_loop, train_teacher,
    transfer_head, KdConfig, Objective, StepSchedule, TrainConfig,
};

enum Outcome {
    Pass,
    Fail,
    NotRun,
}

type Check = (Outcome, String);

fn verdict(ok: bool, detail: String) -> Check {
    (if ok { Outcome::Pass } else { Outcome::Fail }, detail)
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn random_unitary(rng: &mut ChaCha8Rng) -> Gate2x2 {
    // e^{i phi} [[a, b], [-b*, a*]] with |a|^2 + |b|^2 = 1
    let t = rng.gen_range(0.0..PI);
    let (p, q, phi) = (rng.gen_range(-PI..PI), rng.gen_range(-PI..PI), rng.gen_range(-PI..PI));
    let a = Complex64::from_polar(t.cos(), p);
    let b = Complex64::from_polar(t.sin(), q);
    let g = Complex64::from_polar(1.0, phi);
    Gate2x2::new([[g * a, g * b], [-g * b.conj(), g * a.conj()]])
}

fn random_circuit(rng: &mut ChaCha8Rng) -> (usize, Vec<PlacedGate>) {
    let n = rng.gen_range(1..=8);
    let len = rng.gen_range(1..=64);
    let gates = (0..len)
        .map(|_| match rng.gen_range(0..3) {
            0 => PlacedGate::Ry { qubit: rng.gen_range(0..n), theta: rng.gen_range(-2.0 * PI..2.0 * PI) },
            1 if n > 1 => {
                let control = rng.gen_range(0..n);
                let target = (control + rng.gen_range(1..n)) % n;
                PlacedGate::Cnot { control, target }
            }
            _ => PlacedGate::Single { qubit: rng.gen_range(0..n), gate: random_unitary(rng) },
        })
        .collect();
    (n, gates)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, gates) = random_circuit(&mut rng);
        let mut fast = StateVector::new_zero_state(n).unwrap();
        fast.apply_all(&gates).unwrap();
        let dense = brute_force_run(n, &gates).unwrap();
        for (a, b) in fast.amplitudes().iter().zip(dense.amplitudes()) {
            worst = worst.max((a - b).norm());
        }
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-12 && within(t, 10.0),
        format!("100 circuits, max |strided - dense| = {worst:.2e} (tol 1e-12), {:.2}s (limit 10s)", t.as_secs_f64()),
    )
}

fn rel_err(a: f64, reference: f64) -> f64 {
    // relative error with a floor so near-zero derivatives compare absolutely
    (a - reference).abs() / reference.abs().max(1e-3)
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut adj_vs_shift, mut vs_fd) = (0.0f64, 0.0f64);
    let h = 1e-5;
    let mut instances = 0;
    for n in [2, 4, 8] {
        for _ in 0..100 {
            let spec = QnnSpec::random_ring(n, &mut rng).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..PI)).collect();
            let (_, g) = qnn_forward_with_gradients(&x, &spec).unwrap();
            let eval_x = |i: usize, d: f64| {
                let mut xs = x.clone();
                xs[i] += d;
                qnn_forward(&xs, &spec).unwrap()
            };
            let eval_p = |k: usize, d: f64| {
                let mut p = spec.params().to_vec();
                p[k] += d;
                qnn_forward(&x, &spec.with_params(p).unwrap()).unwrap()
            };
            for i in 0..n {
                let (sp, sm) = (eval_x(i, PI / 2.0), eval_x(i, -PI / 2.0));
                let (fp, fm) = (eval_x(i, h), eval_x(i, -h));
                for j in 0..n {
                    let (adj, shift, fd) = (g.d_input(j, i), (sp[j] - sm[j]) / 2.0, (fp[j] - fm[j]) / (2.0 * h));
                    adj_vs_shift = adj_vs_shift.max((adj - shift).abs());
                    vs_fd = vs_fd.max(rel_err(adj, fd)).max(rel_err(shift, fd));
                }
            }
            for k in 0..spec.n_params() {
                let shift = parameter_shift_gradient(&x, &spec, k).unwrap();
                let (fp, fm) = (eval_p(k, h), eval_p(k, -h));
                for j in 0..n {
                    let (adj, fd) = (g.d_param(j, k), (fp[j] - fm[j]) / (2.0 * h));
                    adj_vs_shift = adj_vs_shift.max((adj - shift[j]).abs());
                    vs_fd = vs_fd.max(rel_err(adj, fd)).max(rel_err(shift[j], fd));
                }
            }
            instances += 1;
        }
    }
    let t = start.elapsed();
    verdict(
        adj_vs_shift <= 1e-10 && vs_fd <= 1e-5 && within(t, 30.0),
        format!(
            "{instances} instances over n=2,4,8: adjoint vs shift {adj_vs_shift:.2e} (tol 1e-10), \
             vs central FD {vs_fd:.2e} rel (tol 1e-5), {:.2}s (limit 30s)",
            t.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, want_q, want_c) in [(4, 24, 48), (8, 48, 192)] {
        let q = count_parameters(&ModelConfig::reference(224, 16, n, AttentionKind::Quantum, 3, 5));
        let c = count_parameters(&ModelConfig::reference(224, 16, n, AttentionKind::Classical, 3, 5));
        ok &= q.attention_per_block == want_q && c.attention_per_block == want_c;
        parts.push(format!("n={n}: QSA {} SA {}", q.attention_per_block, c.attention_per_block));
    }
    let total = count_parameters(&ModelConfig::preset("qvit4_28", 3, 5).unwrap()).total;
    ok &= (500..=2000).contains(&total);
    verdict(ok, format!("{}; QViT_28 total {total} (range 500..=2000)", parts.join(", ")))
}

fn cross_entropy(model: &Model, image: &[f64], label: usize) -> f64 {
    -softmax(&model.predict(image).unwrap())[label].ln()
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let (mut n_circuit, mut n_classical) = (0, 0);
    let h = 1e-5;
    for (residual, layer_norm) in [(false, false), (true, true)] {
        let mut cfg = ModelConfig::reference(8, 2, 4, AttentionKind::Quantum, 1, 3);
        cfg.residual = residual;
        cfg.layer_norm = layer_norm;
        let model = Model::init(cfg, rng.gen()).unwrap();
        let image: Vec<f64> = (0..model.config.image_len()).map(|_| rng.gen_range(0.0..PI)).collect();
        let label = rng.gen_range(0..3);
        let bg = batch_gradients(&model, &[(&image, Objective::CrossEntropy(label))]).unwrap();

        let params = model.params.as_slice();
        let circuit: Vec<usize> = (0..params.len()).filter(|&i| params[i].name.contains(".attn.")).collect();
        let classical: Vec<usize> = (0..params.len()).filter(|&i| !params[i].name.contains(".attn.")).collect();
        let mut picks = Vec::new();
        for _ in 0..6 {
            picks.push(circuit[rng.gen_range(0..circuit.len())]);
            picks.push(classical[rng.gen_range(0..classical.len())]);
        }
        for p in picks {
            let e = rng.gen_range(0..params[p].len());
            let loss_at = |d: f64| {
                let mut m = model.clone();
                m.params.iter_mut().nth(p).unwrap().values[e] += d;
                cross_entropy(&m, &image, label)
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            worst = worst.max(rel_err(bg.grads[p][e], fd));
            if params[p].name.contains(".attn.") {
                n_circuit += 1;
            } else {
                n_classical += 1;
            }
        }
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-4 && within(t, 60.0),
        format!(
            "{} parameters ({n_circuit} circuit, {n_classical} classical): max rel err {worst:.2e} (tol 1e-4), \
             {:.2}s (limit 60s)",
            n_circuit + n_classical,
            t.as_secs_f64()
        ),
    )
}

fn synthetic(seed: u64, n_per_class: usize, separability: f64) -> Splits {
    let opts = SyntheticOptions { seed, n_classes: 2, n_per_class, image_size: 16, channels: 1, separability };
    synthetic_dataset(&opts).unwrap().map(|s| normalize_to_angles(&s, AngleRange::Pi)).unwrap()
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..3 {
        let splits = synthetic(seed, 256, 0.6);
        let cfg = TrainConfig { epochs: 50, batch_size: 32, seed, schedule: StepSchedule::default(), keep_best: false };
        let mut test_acc = [0.0; 2];
        for (i, kind) in [AttentionKind::Quantum, AttentionKind::Classical].into_iter().enumerate() {
            let model = Model::init(ModelConfig::reference(16, 2, 4, kind, 1, 2), seed).unwrap();
            let out = train_loop(model, &splits, &cfg).unwrap();
            let train_acc = evaluate(&out.model, &splits.train).unwrap().accuracy;
            test_acc[i] = out.test.accuracy;
            ok &= train_acc >= 0.95 && out.test.accuracy >= 0.90;
            parts.push(format!("s{seed} {kind} {train_acc:.3}/{:.3}", out.test.accuracy));
        }
        ok &= (test_acc[0] - test_acc[1]).abs() <= 0.05;
    }
    verdict(
        ok,
        format!(
            "train/test ACC {} (need 0.95/0.90, |quantum - classical| test <= 0.05), {:.0}s",
            parts.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn features(model: &Model, split: &DatasetSplit) -> Vec<f64> {
    (0..split.len()).flat_map(|i| model.intermediate(split.image(i)).unwrap()).collect()
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let (mut identity, mut probe_wins, mut kd_wins) = (true, 0, 0);
    let mut parts = Vec::new();
    for seed in 0..3 {
        let splits = synthetic(seed, 256, 0.3);
        let student_cfg = ModelConfig::reference(16, 2, 4, AttentionKind::Quantum, 1, 2);
        let mut teacher_cfg = ModelConfig::reference(16, 2, 16, AttentionKind::Classical, 1, 2);
        teacher_cfg.depth = 2;
        teacher_cfg.residual = true;
        teacher_cfg.layer_norm = true;
        teacher_cfg.head_bottleneck = Some(student_cfg.intermediate_dim());
        let tc = TrainConfig { epochs: 30, batch_size: 32, seed, schedule: StepSchedule::constant(1e-3), keep_best: true };
        let (_, bundle) = train_teacher(teacher_cfg, seed, &splits, &tc).unwrap();

        // teacher logits are its head applied to its bottleneck
        for i in 0..bundle.n_samples() {
            let row = &bundle.logits[i * bundle.n_classes..(i + 1) * bundle.n_classes];
            identity &= bundle.head_logits(bundle.target(i)).unwrap() == row;
        }

        let student = Model::init(student_cfg, seed + 100).unwrap();
        let kc = KdConfig { epochs: 50, seed, ..Default::default() };
        let probe = |m: &Model| {
            let (train, test) = (features(m, &splits.train), features(m, &splits.test));
            linear_probe((&train, &splits.train.labels), (&test, &splits.test.labels), 4, 2, 300).unwrap().test_accuracy
        };
        let random_probe = probe(&student);
        let (kd, _) = kd_pretrain(student.clone(), &bundle, &splits.train, &kc).unwrap();
        let kd_probe = probe(&kd);
        probe_wins += usize::from(kd_probe > random_probe);

        let kd = transfer_head(kd, &bundle).unwrap();
        for i in 0..splits.test.len() {
            let x = splits.test.image(i);
            identity &= kd.predict(x).unwrap() == bundle.head_logits(&kd.intermediate(x).unwrap()).unwrap();
        }
        let (direct, _) = kd_direct_logits(student, &bundle, &splits.train, &kc).unwrap();
        let ft = TrainConfig { epochs: 5, batch_size: 32, seed, schedule: StepSchedule::constant(1e-3), keep_best: false };
        let kd_acc = train_loop(kd, &splits, &ft).unwrap().test.accuracy;
        let direct_acc = train_loop(direct, &splits, &ft).unwrap().test.accuracy;
        kd_wins += usize::from(kd_acc >= direct_acc);
        parts.push(format!("s{seed} probe {random_probe:.3}->{kd_probe:.3} kd {kd_acc:.3} vs direct {direct_acc:.3}"));
    }
    verdict(
        identity && probe_wins == 3 && kd_wins >= 2,
        format!(
            "head identity {}, probe gain {probe_wins}/3 (need 3), intermediate >= direct {kd_wins}/3 (need 2); {}; {:.0}s",
            if identity { "exact" } else { "BROKEN" },
            parts.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_7() -> Check {
    let Some(root) = std::env::var_os("QVIT_DATA_ROOT").map(PathBuf::from) else {
        return (Outcome::NotRun, "QVIT_DATA_ROOT not set; RetinaMNIST files required".into());
    };
    if !root.join("retinamnist.npz").is_file() {
        return (Outcome::NotRun, format!("{} has no retinamnist.npz", root.display()));
    }
    let start = Instant::now();
    let splits = match load_medmnist(&root, "retinamnist") {
        Ok(s) => s.map(|s| normalize_to_angles(&s, AngleRange::Pi)).unwrap(),
        Err(e) => return (Outcome::Fail, format!("could not load RetinaMNIST: {e}")),
    };
    let mut best = (0.0, 0.0);
    let mut parts = Vec::new();
    for seed in 0..3 {
        let model = Model::init(ModelConfig::preset("qvit4_28", 3, 5).unwrap(), seed).unwrap();
        let cfg = TrainConfig { seed, ..Default::default() };
        let out = train_loop(model, &splits, &cfg).unwrap();
        parts.push(format!("s{seed} {:.3}/{:.3}", out.test.accuracy, out.test.auc));
        if out.test.accuracy >= 0.50 && out.test.auc >= 0.68 || out.test.auc > best.1 {
            best = (out.test.accuracy, out.test.auc);
        }
    }
    verdict(
        best.0 >= 0.50 && best.1 >= 0.68,
        format!("test ACC/AUC {} (need 0.50/0.68 on one seed), {:.0}s", parts.join(", "), start.elapsed().as_secs_f64()),
    )
}

fn criterion_8() -> Check {
    let (r4, r8) = (bench_qnn(4, Duration::from_secs(1), 8), bench_qnn(8, Duration::from_secs(1), 8));
    verdict(
        r4.forward_per_sec >= 1e5
            && r8.forward_per_sec >= 1e4
            && r4.gradient_cost_ratio <= 4.0
            && r8.gradient_cost_ratio <= 4.0,
        format!(
            "forward/s n=4 {:.3e} (need 1e5), n=8 {:.3e} (need 1e4); gradient cost n=4 {:.2}x, n=8 {:.2}x (limit 4x)",
            r4.forward_per_sec, r8.forward_per_sec, r4.gradient_cost_ratio, r8.gradient_cost_ratio
        ),
    )
}

fn criterion_9() -> Check {
    let dir = fixtures();
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["f64_2x3.npy", "u8_4x2x2.npy", "i64_5.npy", "bool_3.npy"] {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        let same = parse_npy(&bytes).map(|a| write_npy(&a) == bytes).unwrap_or(false);
        ok &= same;
        if !same {
            notes.push(format!("{name} differs"));
        }
    }
    ok &= matches!(parse_npy(&std::fs::read(dir.join("f32_fortran.npy")).unwrap()), Err(NpyError::FortranOrder));

    for (name, compress) in [("tiny_medmnist.npz", true), ("tiny_stored.npz", false)] {
        let members = parse_npz(&std::fs::read(dir.join(name)).unwrap()).unwrap();
        let refs: Vec<(&str, _)> = members.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let again = parse_npz(&write_npz(&refs, compress).unwrap()).unwrap();
        ok &= again == members;
    }
    let tiny = load_npz_splits(&parse_npz(&std::fs::read(dir.join("tiny_medmnist.npz")).unwrap()).unwrap(), None);
    ok &= tiny.map(|s| (s.train.len(), s.val.len(), s.test.len()) == (6, 2, 3)).unwrap_or(false);

    let mut on_disk = 0;
    if let Some(root) = std::env::var_os("QVIT_DATA_ROOT").map(PathBuf::from) {
        for d in MEDMNIST {
            if root.join(format!("{}.npz", d.name)).is_file() {
                on_disk += 1;
                let good = load_medmnist(&root, d.name).is_ok();
                ok &= good;
                notes.push(format!("{} {}", d.name, if good { "sizes match" } else { "MISMATCH" }));
            }
        }
    }
    if on_disk == 0 {
        notes.push("no MedMNIST files on disk, split sizes not checked".into());
    }
    verdict(ok, format!("numpy fixtures round-trip bit-exact: {}; {}", ok, notes.join(", ")))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Check); 9] = [
        (1, "simulator oracle equivalence", criterion_1),
        (2, "gradient triple-check", criterion_2),
        (3, "parameter counts", criterion_3),
        (4, "end-to-end differentiability", criterion_4),
        (5, "desk-scale learning", criterion_5),
        (6, "distillation mechanics", criterion_6),
        (7, "RetinaMNIST target", criterion_7),
        (8, "performance gate", criterion_8),
        (9, "data layer", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let (outcome, detail) = run();
        let tag = match outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => {
                failed += 1;
                "FAIL"
            }
            Outcome::NotRun => "NOT RUN",
        };
        println!("criterion {n} {tag:<7} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
