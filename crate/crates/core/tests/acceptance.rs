//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line with the measured values.
//!
//! Criteria 4 and 5 need the real MNIST IDX files, which this library
//! deliberately does not download. Point `INVFORGE_MNIST_DIR` at a
//! directory with the standard four files (train/t10k images/labels) to
//! run them; without it they report SKIP and do not fail.

use std::collections::HashMap;

use invforge::autodiff::{finite_diff_check, Tape};
use invforge::data::{
    build_mnist_dil, build_mnist_rot, gen_synthetic, load_mnist_dir, read_idx, write_idx, Dataset,
    DilSpec, IdxArray, RotSpec, SplitTag, SyntheticSpec,
};
use invforge::eval::{
    embed_dataset, eta_sweep, eval_invariance, export_embeddings, prediction_embedding,
    train_probe, ProbeConfig,
};
use invforge::losses::LossWeights;
use invforge::model::{
    ArchitectureSpec, ModelGraph, ModelVariant,
};
use invforge::params::{init_dense_layer, ParamStore};
use invforge::tensor::Tensor;
use invforge::trainer::{
    train_baseline, NullSink, Player, TrainConfig, Trainer,
};
use invforge::{checkpoint, rng};
use rand::Rng;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

// ── Criterion 1: gradient oracle ─────────────────────────────────────
//
// For 20 seeds and every op family, the finite-difference check (f64
// replay) stays below 1e-3 relative error.

#[test]
fn criterion_1_gradient_oracle() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        for graph in 0..4 {
            let err = finite_diff_for_graph(seed, graph);
            if err > worst {
                worst = err;
            }
        }
    }
    report(
        "1 (gradient oracle)",
        worst < 1e-3,
        &format!("max relative error {worst:.2e} over 20 seeds x 4 graph families"),
    );
}

/// Four graph families jointly covering every tape op: dense stacks with
/// relu/sigmoid/tanh/softmax + cross-entropy, dropout + mse, the
/// concat/slice/mul/sub/scale family, and the row-bias/sum family.
fn finite_diff_for_graph(seed: u64, which: usize) -> f64 {
    let mut store = ParamStore::new();
    let mut data_rng = rng::indexed_stream(seed, "acc1-data", which as u64);
    let mut rand_mat = |rows: usize, cols: usize| -> Tensor {
        Tensor::new(
            vec![rows, cols],
            (0..rows * cols).map(|_| data_rng.random_range(-0.9..0.9)).collect(),
        )
        .unwrap()
    };
    match which {
        0 => {
            init_dense_layer(&mut store, "a", 0, 5, 6, seed);
            init_dense_layer(&mut store, "a", 1, 6, 4, seed);
            let x = rand_mat(3, 5);
            let y = vec![0u32, 2, 3];
            finite_diff_check(&store, 1e-3, |tape, b| {
                let x = tape.leaf(x.clone());
                let h = tape.matmul(x, b.node("a.layer0.weight"))?;
                let h = tape.add_row_bias(h, b.node("a.layer0.bias"))?;
                let h = tape.tanh(h)?;
                let o = tape.matmul(h, b.node("a.layer1.weight"))?;
                let o = tape.add_row_bias(o, b.node("a.layer1.bias"))?;
                let p = tape.softmax_rows(o)?;
                tape.cross_entropy_from_probs(p, &y)
            })
            .unwrap()
        }
        1 => {
            init_dense_layer(&mut store, "b", 0, 6, 8, seed);
            init_dense_layer(&mut store, "b", 1, 8, 6, seed);
            let x = rand_mat(4, 6);
            let t = rand_mat(4, 6);
            finite_diff_check(&store, 1e-3, |tape, b| {
                let mut drop_rng = rng::indexed_stream(seed, "acc1-drop", which as u64);
                let x = tape.leaf(x.clone());
                let t = tape.leaf(t.clone());
                let h = tape.matmul(x, b.node("b.layer0.weight"))?;
                let h = tape.add_row_bias(h, b.node("b.layer0.bias"))?;
                let h = tape.sigmoid(h)?;
                let h = tape.dropout(h, 0.4, &mut drop_rng, true)?;
                let o = tape.matmul(h, b.node("b.layer1.weight"))?;
                let o = tape.add_row_bias(o, b.node("b.layer1.bias"))?;
                tape.mse(o, t)
            })
            .unwrap()
        }
        2 => {
            store.insert("c.left", rand_mat(3, 4));
            store.insert("c.right", rand_mat(3, 2));
            finite_diff_check(&store, 1e-3, |tape, b| {
                let cat = tape.concat_cols(b.node("c.left"), b.node("c.right"))?;
                let mid = tape.slice_cols(cat, 1, 4)?;
                let sq = tape.mul(mid, mid)?;
                let scaled = tape.scale(sq, 0.7)?;
                let shifted = tape.sub(scaled, mid)?;
                tape.mean_all(shifted)
            })
            .unwrap()
        }
        _ => {
            init_dense_layer(&mut store, "d", 0, 4, 5, seed);
            let x = rand_mat(6, 4);
            finite_diff_check(&store, 1e-3, |tape, b| {
                let x = tape.leaf(x.clone());
                let h = tape.matmul(x, b.node("d.layer0.weight"))?;
                let h = tape.add_row_bias(h, b.node("d.layer0.bias"))?;
                let h = tape.relu(h)?;
                let s = tape.add(h, h)?;
                tape.sum_all(s)
            })
            .unwrap()
        }
    }
}

// ── Criterion 2: freeze & schedule contract ──────────────────────────

#[test]
fn criterion_2_freeze_and_schedule() {
    let arch = ArchitectureSpec::dense(
        8,
        &[8],
        2,
        3,
        &[6],
        3,
        &[8],
        invforge::model::Activation::Linear,
        &[],
        0.4,
    );
    let model = ModelGraph::new(arch, ModelVariant::Full, 31).unwrap();
    let cfg = TrainConfig { k: 5, batch_size: 8, epochs: u32::MAX, seed: 31, ..TrainConfig::default() };

    let mut ds_rng = rng::stream(31, "acc2-data");
    let n = 64;
    let x: Vec<f32> = (0..n * 8).map(|_| ds_rng.random_range(0.0..1.0)).collect();
    let y: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
    let ds = Dataset::new(
        Tensor::new(vec![n, 8], x).unwrap(),
        y,
        None,
        3,
        None,
        SplitTag::Train,
    )
    .unwrap();

    let mut trainer = Trainer::new(model, cfg).unwrap();
    let mut m1_steps = 0u64;
    let mut violations = 0u64;
    let batch_indices: Vec<usize> = (0..8).collect();
    for step in 0..1000u64 {
        let (bx, by, _) = ds.gather(
            &batch_indices.iter().map(|&i| (i + step as usize * 8) % n).collect::<Vec<_>>(),
        );
        let batch = invforge::trainer::Batch { x: bx, y: by };
        let player = trainer.player_for_step(step);
        let m1_before = trainer.model.store.value_bytes("enc");
        let m2_before = trainer.model.store.value_bytes("dis");
        match player {
            Player::M1 => {
                m1_steps += 1;
                invforge::trainer::train_step_m1(&mut trainer.model, &batch, &trainer.cfg, step)
                    .unwrap();
                if trainer.model.store.value_bytes("dis") != m2_before {
                    violations += 1;
                }
            }
            Player::M2 => {
                invforge::trainer::train_step_m2(&mut trainer.model, &batch, &trainer.cfg, step)
                    .unwrap();
                if trainer.model.store.value_bytes("enc") != m1_before {
                    violations += 1;
                }
                let pred_dec = trainer.model.store.value_bytes("pred");
                let _ = pred_dec;
            }
        }
    }
    let expected = 1000.0 / 6.0;
    let schedule_ok = (m1_steps as f64 - expected).abs() <= 1.0;
    report(
        "2 (freeze & schedule)",
        violations == 0 && schedule_ok,
        &format!(
            "{violations} freeze violations over 1000 steps; {m1_steps} M1 steps (expected {expected:.1} +- 1)"
        ),
    );
}

// ── Criteria 3 & 6: synthetic end-to-end and eta asymptotics ─────────
//
// Shared data: 10 y-classes, 5 z-classes, 50k train / 10k test, seed 7.

fn synth_data() -> (Dataset, Dataset) {
    let mut train_spec = SyntheticSpec::new(10, 5, 50_000, 7);
    train_spec.split = SplitTag::Train;
    let mut test_spec = train_spec.clone();
    test_spec.n = 10_000;
    test_spec.split = SplitTag::Test;
    (gen_synthetic(&train_spec).unwrap(), gen_synthetic(&test_spec).unwrap())
}

/// Architecture frozen from the calibration runs: tight prediction
/// bottleneck, hidden-layer disentanglers, psi 0.7.
fn synth_arch(input_dim: usize) -> ArchitectureSpec {
    ArchitectureSpec::dense(
        input_dim,
        &[64],
        6,
        16,
        &[32],
        10,
        &[64],
        invforge::model::Activation::Linear,
        &[64],
        0.7,
    )
}

fn synth_train_config() -> TrainConfig {
    TrainConfig {
        weights: LossWeights::paper_defaults(),
        k: 5,
        epochs: 90,
        batch_size: 128,
        lr_m1: 5e-4,
        lr_m2: 5e-3,
        psi_rate: 0.7,
        seed: 1,
        clip_norm: 5.0,
        detach_dis_targets: true,
    }
}

#[test]
fn criterion_3_synthetic_end_to_end() {
    let (train, test) = synth_data();
    let arch = synth_arch(train.feature_dim());
    let cfg = synth_train_config();
    let probe = ProbeConfig { seed: cfg.seed, ..ProbeConfig::default() };

    let model = ModelGraph::new(arch.clone(), ModelVariant::Full, cfg.seed).unwrap();
    let mut trainer = Trainer::new(model, cfg.clone()).unwrap();
    trainer.run(&train, &mut NullSink, None).unwrap();
    let full_report = eval_invariance(
        &trainer.model,
        &[("test".to_string(), &test)],
        &probe,
    )
    .unwrap();

    let b0 = train_baseline(ModelVariant::B0, arch, &train, &cfg, &mut NullSink).unwrap();
    let b0_report =
        eval_invariance(&b0, &[("test".to_string(), &test)], &probe).unwrap();

    let a_y = full_report.a_y["test"];
    let a_z_e1 = full_report.a_z_e1.unwrap();
    let a_z_e2 = full_report.a_z_e2.unwrap();
    let b0_a_z = b0_report.a_z_e1.unwrap();
    let pass = a_y >= 0.95 && a_z_e1 <= 0.35 && a_z_e2 >= 0.85 && b0_a_z >= a_z_e1 + 0.15;
    report(
        "3 (synthetic end-to-end)",
        pass,
        &format!(
            "A_y={a_y:.3} (>=0.95), A_z(e1)={a_z_e1:.3} (<=0.35, chance 0.2), \
             A_z(e2)={a_z_e2:.3} (>=0.85), B0 A_z={b0_a_z:.3} (>= A_z(e1)+0.15)"
        ),
    );
}

#[test]
fn criterion_6_eta_asymptotics() {
    let (train, test) = synth_data();
    let arch = synth_arch(train.feature_dim());
    // Sweep protocol frozen from calibration: the asymptotic cells need a
    // faster encoder, a longer horizon, and a stronger disentanglement
    // weight than the operating-point run to approach their limits.
    let cfg = TrainConfig {
        weights: LossWeights { alpha: 100.0, beta: 0.1, gamma: 4.0 },
        epochs: 220,
        lr_m1: 1e-3,
        lr_m2: 5e-3,
        seed: 2,
        ..synth_train_config()
    };
    let probe = ProbeConfig { seed: cfg.seed, ..ProbeConfig::default() };

    let grid = [(100.0f32, 0.0f32), (100.0, 0.1), (0.0, 0.1)];
    let rows = eta_sweep(&train, &test, &grid, &arch, &cfg, &probe).unwrap();

    let b0 = train_baseline(ModelVariant::B0, arch, &train, &cfg, &mut NullSink).unwrap();
    let b0_emb = embed_dataset(&b0, &test).unwrap();
    let b0_a_y = train_probe(&prediction_embedding(&b0, &b0_emb), &b0_emb.y, &probe).unwrap();

    let beta_zero = &rows[0];
    let operating = &rows[1];
    let alpha_zero = &rows[2];
    let chance_y = 0.1;

    let a_ok = (beta_zero.a_y - b0_a_y).abs() <= 0.02;
    let b_ok = alpha_zero.a_y <= chance_y + 0.15;
    let c_ok = operating.a_z_e1 < beta_zero.a_z_e1;
    report(
        "6 (eta asymptotics)",
        a_ok && b_ok && c_ok,
        &format!(
            "(a) beta=0 A_y={:.3} vs B0 {:.3} (|diff|<=0.02); \
             (b) alpha=0 probe A_y(e1)={:.3} (<= {:.2}); \
             (c) A_z(e1) {:.3} @ (100,0.1) < {:.3} @ (100,0)",
            beta_zero.a_y,
            b0_a_y,
            alpha_zero.a_y,
            chance_y + 0.15,
            operating.a_z_e1,
            beta_zero.a_z_e1
        ),
    );
}

// ── Criterion 7: round trips ─────────────────────────────────────────

#[test]
fn criterion_7_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng::stream(77, "acc7");

    // IDX bit-exactness, both element types.
    let u8_array = IdxArray::U8 {
        dims: vec![4, 3, 3],
        data: (0..36).map(|_| rng.random()).collect(),
    };
    let u8_path = dir.path().join("a.idx");
    write_idx(&u8_path, &u8_array).unwrap();
    let idx_u8_ok = read_idx(&u8_path).unwrap() == u8_array;

    let f32_array = IdxArray::F32 {
        dims: vec![5, 4],
        data: (0..20).map(|_| rng.random_range(-3.0..3.0)).collect(),
    };
    let f32_path = dir.path().join("b.idx");
    write_idx(&f32_path, &f32_array).unwrap();
    let idx_f32_ok = read_idx(&f32_path).unwrap() == f32_array;

    // Checkpoint round trip is forward-equivalent bit for bit.
    let arch = ArchitectureSpec::dense(
        6,
        &[8],
        2,
        3,
        &[4],
        3,
        &[8],
        invforge::model::Activation::Linear,
        &[8],
        0.4,
    );
    let model = ModelGraph::new(arch, ModelVariant::Full, 7).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 16, seed: 7, ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, cfg).unwrap();
    let mut spec = SyntheticSpec::new(3, 2, 128, 5);
    spec.latent_y = 3;
    spec.latent_z = 3;
    let ds = gen_synthetic(&spec).unwrap();
    trainer.run(&ds, &mut NullSink, None).unwrap();
    let ckpt_path = dir.path().join("m.ckpt");
    checkpoint::save_checkpoint(&trainer, &ckpt_path).unwrap();
    let loaded = checkpoint::load_checkpoint(&ckpt_path).unwrap();
    let x = ds.features();
    let (a, b) = (trainer.model.encode(x).unwrap(), loaded.model.encode(x).unwrap());
    let ckpt_ok = a.e1.data() == b.e1.data()
        && a.e2.data() == b.e2.data()
        && trainer.model.predict(&a.e1).unwrap().data()
            == loaded.model.predict(&b.e1).unwrap().data();

    // Embedding CSV parses back within 1e-6.
    let emb = embed_dataset(&trainer.model, &ds).unwrap();
    let csv_path = dir.path().join("emb.csv");
    export_embeddings(
        2,
        3,
        emb.e1.data(),
        emb.e2.data(),
        &emb.y,
        emb.z.as_deref(),
        &csv_path,
    )
    .unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut csv_ok = true;
    for (i, line) in text.lines().skip(1).enumerate() {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        for j in 0..2 {
            csv_ok &= (fields[j] - emb.e1.row(i)[j] as f64).abs() < 1e-6;
        }
        for j in 0..3 {
            csv_ok &= (fields[2 + j] - emb.e2.row(i)[j] as f64).abs() < 1e-6;
        }
        csv_ok &= fields[5] as u32 == emb.y[i];
    }

    report(
        "7 (round trips)",
        idx_u8_ok && idx_f32_ok && ckpt_ok && csv_ok,
        &format!(
            "idx u8 {idx_u8_ok}, idx f32 {idx_f32_ok}, checkpoint forward {ckpt_ok}, csv 1e-6 {csv_ok}"
        ),
    );
}

// ── Criterion 8: dropout statistics ──────────────────────────────────

#[test]
fn criterion_8_dropout_statistics() {
    let n = 100_000usize;
    let mut detail = String::new();
    let mut pass = true;
    for &rate in &[0.25f32, 0.5] {
        let mut tape = Tape::new();
        let ones = tape.leaf(Tensor::filled(vec![n], 1.0));
        let mut stream = rng::stream(88, "acc8");
        let out = tape.dropout(ones, rate, &mut stream, true).unwrap();
        let mean = tape.value(out).data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let sigma = (rate as f64 / ((1.0 - rate as f64) * n as f64)).sqrt();
        let ok = (mean - 1.0).abs() <= 3.0 * sigma;
        pass &= ok;
        detail.push_str(&format!("rate {rate}: mean {mean:.4} (1 +- {:.4}); ", 3.0 * sigma));
    }
    // Rate zero is the exact identity.
    let mut tape = Tape::new();
    let mut stream = rng::stream(88, "acc8-zero");
    let mut vals_rng = rng::stream(88, "acc8-vals");
    let input = Tensor::new(
        vec![1000],
        (0..1000).map(|_| vals_rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let leaf = tape.leaf(input.clone());
    let out = tape.dropout(leaf, 0.0, &mut stream, true).unwrap();
    let identity_ok = tape.value(out).data() == input.data();
    pass &= identity_ok;
    detail.push_str(&format!("rate 0 identity {identity_ok}"));
    report("8 (dropout statistics)", pass, &detail);
}

// ── Criteria 4 & 5: MNIST-ROT and MNIST-DIL (data-gated) ─────────────

fn mnist_dir() -> Option<std::path::PathBuf> {
    if let Ok(dir) = std::env::var("INVFORGE_MNIST_DIR") {
        return Some(dir.into());
    }
    // Conventional in-repo location.
    let candidate = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist");
    if candidate.join("train-images-idx3-ubyte").exists() {
        return Some(candidate);
    }
    None
}

/// MNIST-ROT protocol shared by criteria 4 and 5: the spec realization
/// (two-layer encoder/predictor, three-layer decoder, single-layer
/// disentanglers, 128+128 embedding), paper loss weights, and the
/// stabilized learning rates from the synthetic calibration.
fn train_mnist_models(
    train: &Dataset,
) -> (ModelGraph, ModelGraph) {
    let arch = ArchitectureSpec::mnist();
    let cfg = TrainConfig {
        weights: LossWeights::paper_defaults(),
        k: 5,
        epochs: 30,
        batch_size: 128,
        lr_m1: 5e-4,
        lr_m2: 5e-3,
        psi_rate: 0.5,
        seed: 1,
        clip_norm: 5.0,
        detach_dis_targets: true,
    };
    let model = ModelGraph::new(arch.clone(), ModelVariant::Full, cfg.seed).unwrap();
    let mut trainer = Trainer::new(model, cfg.clone()).unwrap();
    trainer.run(train, &mut NullSink, None).unwrap();
    let b0 = train_baseline(ModelVariant::B0, arch, train, &cfg, &mut NullSink).unwrap();
    (trainer.model, b0)
}

#[test]
fn criterion_4_mnist_rot_reproduction() {
    let Some(dir) = mnist_dir() else {
        println!(
            "ACCEPTANCE 4 (mnist-rot): SKIP - MNIST IDX files not found; \
             set INVFORGE_MNIST_DIR (this artifact does not download data)"
        );
        return;
    };
    let (train_base, test_base) = load_mnist_dir(&dir).unwrap();
    let theta = RotSpec::new(vec![0.0, 22.5, -22.5, 45.0, -45.0]);
    let train = build_mnist_rot(&train_base, &theta, 7, true).unwrap();
    let test_theta = build_mnist_rot(&test_base, &theta, 8, true).unwrap();
    let test_55 = build_mnist_rot(&test_base, &RotSpec::new(vec![55.0, -55.0]), 9, false).unwrap();
    let test_65 = build_mnist_rot(&test_base, &RotSpec::new(vec![65.0, -65.0]), 10, false).unwrap();

    let (full, _b0) = train_mnist_models(&train);
    let probe = ProbeConfig { seed: 1, ..ProbeConfig::default() };
    let sets = [
        ("theta".to_string(), &test_theta),
        ("55".to_string(), &test_55),
        ("65".to_string(), &test_65),
    ];
    let r = eval_invariance(&full, &sets, &probe).unwrap();

    let (a_y_theta, a_y_55, a_y_65) = (r.a_y["theta"], r.a_y["55"], r.a_y["65"]);
    let a_z_e1 = r.a_z_e1.unwrap();
    let a_z_e2 = r.a_z_e2.unwrap();
    let pass = a_y_theta >= 0.95
        && a_y_55 >= 0.80
        && a_y_65 >= 0.62
        && a_z_e1 <= 0.45
        && a_z_e2 >= 0.65;
    report(
        "4 (mnist-rot)",
        pass,
        &format!(
            "A_y(theta)={a_y_theta:.3} (>=0.95, paper 0.977), A_y(55)={a_y_55:.3} (>=0.80, paper 0.856), \
             A_y(65)={a_y_65:.3} (>=0.62, paper 0.696), A_z(e1)={a_z_e1:.3} (<=0.45, paper 0.338), \
             A_z(e2)={a_z_e2:.3} (>=0.65, paper 0.77)"
        ),
    );
}

#[test]
fn criterion_5_mnist_dil_transfer() {
    let Some(dir) = mnist_dir() else {
        println!(
            "ACCEPTANCE 5 (mnist-dil): SKIP - MNIST IDX files not found; \
             set INVFORGE_MNIST_DIR (this artifact does not download data)"
        );
        return;
    };
    let (train_base, test_base) = load_mnist_dir(&dir).unwrap();
    let theta = RotSpec::new(vec![0.0, 22.5, -22.5, 45.0, -45.0]);
    let train = build_mnist_rot(&train_base, &theta, 7, true).unwrap();
    let (full, b0) = train_mnist_models(&train);

    let kernels =
        [DilSpec { kernel: -2 }, DilSpec { kernel: 2 }, DilSpec { kernel: 3 }, DilSpec { kernel: 4 }];
    let sets = build_mnist_dil(&test_base, &kernels).unwrap();
    let paper: HashMap<i32, f64> =
        [(-2, 0.880), (2, 0.958), (3, 0.874), (4, 0.606)].into_iter().collect();
    let probe = ProbeConfig { seed: 1, ..ProbeConfig::default() };

    let mut detail = String::new();
    let mut wins = 0;
    let mut within = true;
    for (kernel, ds) in &sets {
        let full_emb = embed_dataset(&full, ds).unwrap();
        let full_ay =
            train_probe(&prediction_embedding(&full, &full_emb), &full_emb.y, &probe).unwrap();
        let b0_emb = embed_dataset(&b0, ds).unwrap();
        let b0_ay = train_probe(&prediction_embedding(&b0, &b0_emb), &b0_emb.y, &probe).unwrap();
        if full_ay >= b0_ay {
            wins += 1;
        }
        let tolerance = if *kernel == 4 { 0.12 } else { 0.08 };
        let in_tol = (full_ay - paper[kernel]).abs() <= tolerance;
        within &= in_tol;
        detail.push_str(&format!(
            "k={kernel}: full {full_ay:.3} vs B0 {b0_ay:.3}, paper {:.3} (+-{tolerance}); ",
            paper[kernel]
        ));
    }
    let pass = wins >= 3 && within;
    report("5 (mnist-dil)", pass, &format!("{detail}full>=B0 on {wins}/4 kernels"));
}
