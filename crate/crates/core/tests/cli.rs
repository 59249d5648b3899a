//! End-to-end checks of the `invforge` binary: reproducibility of runs,
//! output contracts, and failure exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn invforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    let manifest = dir.join("data/manifest.txt");
    let text = format!(
        "seed=3\n\
         data.manifest={}\n\
         arch.encoder_hidden=16\n\
         arch.dim_e1=4\n\
         arch.dim_e2=6\n\
         arch.predictor_hidden=8\n\
         arch.decoder_hidden=16\n\
         arch.decoder_output=linear\n\
         arch.dis_hidden=8\n\
         train.epochs=2\n\
         train.batch_size=64\n\
         {extra}",
        manifest.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn make_synth_data(dir: &Path) {
    let out = invforge(&[
        "data",
        "synth",
        "--y-classes",
        "4",
        "--z-classes",
        "3",
        "--n",
        "600",
        "--test-n",
        "200",
        "--seed",
        "5",
        "--out",
        dir.join("data").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_data_writes_manifest_and_idx_pairs() {
    let dir = tempfile::tempdir().unwrap();
    make_synth_data(dir.path());
    let data = dir.path().join("data");
    for f in [
        "manifest.txt",
        "train-images.idx",
        "train-labels.idx",
        "train-z.idx",
        "test-images.idx",
        "test-labels.idx",
        "test-z.idx",
    ] {
        assert!(data.join(f).exists(), "missing {f}");
    }
    // No stray temp files.
    for entry in std::fs::read_dir(&data).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(!name.to_string_lossy().ends_with(".tmp"), "leftover {name:?}");
    }
}

#[test]
fn rerun_with_same_config_gives_byte_identical_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    make_synth_data(dir.path());
    let config = write_config(dir.path(), "");

    for run in ["run1", "run2"] {
        let out = invforge(&[
            "train",
            "--model",
            "full",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join(run).to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("run1/checkpoint.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("run2/checkpoint.ckpt")).unwrap();
    assert_eq!(a, b, "checkpoints differ across identical runs");

    // The echoed config alone reproduces the run byte-exactly.
    let echoed = dir.path().join("run1/config.txt");
    assert!(echoed.exists());
    let out = invforge(&[
        "train",
        "--model",
        "full",
        "--config",
        echoed.to_str().unwrap(),
        "--out",
        dir.path().join("run3").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = std::fs::read(dir.path().join("run3/checkpoint.ckpt")).unwrap();
    assert_eq!(a, c, "echoed config did not reproduce the checkpoint");

    // Metrics CSV has the documented header.
    let metrics = std::fs::read_to_string(dir.path().join("run1/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,step,player,l_pred,l_dec,l_dis1,l_dis2,j_m1,j_m2,ms"));
}

#[test]
fn b0_warns_about_ignored_keys() {
    let dir = tempfile::tempdir().unwrap();
    make_synth_data(dir.path());
    let config = write_config(dir.path(), "");
    let out = invforge(&[
        "train",
        "--model",
        "b0",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("b0").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ignores"), "no warning on stderr: {stderr}");
}

#[test]
fn eval_reports_expected_keys_and_embedding_export() {
    let dir = tempfile::tempdir().unwrap();
    make_synth_data(dir.path());
    let config = write_config(dir.path(), "");
    let run = dir.path().join("run");
    assert!(invforge(&[
        "train",
        "--model",
        "full",
        "--config",
        config.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ])
    .status
    .success());

    let eval_dir = dir.path().join("eval");
    let out = invforge(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.ckpt").to_str().unwrap(),
        "--test-sets",
        dir.path().join("data/manifest.txt").to_str().unwrap(),
        "--export-embeddings",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(eval_dir.join("report.txt")).unwrap();
    for key in ["a_y_test=", "a_z_e1=", "a_z_e2=", "chance_z="] {
        assert!(report.contains(key), "missing {key} in: {report}");
    }
    let csv = std::fs::read_to_string(eval_dir.join("embeddings_test.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 4 + 6 + 2);
}

#[test]
fn eval_without_z_labels_omits_a_z_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    make_synth_data(dir.path());
    let config = write_config(dir.path(), "");
    let run = dir.path().join("run");
    assert!(invforge(&[
        "train",
        "--model",
        "full",
        "--config",
        config.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ])
    .status
    .success());

    // Strip the z entries from a copy of the manifest.
    let data = dir.path().join("data");
    let manifest = std::fs::read_to_string(data.join("manifest.txt")).unwrap();
    let stripped: String = manifest
        .lines()
        .filter(|l| !l.contains(".z=") && !l.starts_with("z_classes="))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(data.join("noz.txt"), stripped).unwrap();

    let eval_dir = dir.path().join("eval_noz");
    let out = invforge(&[
        "eval",
        "--checkpoint",
        run.join("checkpoint.ckpt").to_str().unwrap(),
        "--test-sets",
        data.join("noz.txt").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(eval_dir.join("report.txt")).unwrap();
    assert!(report.contains("a_y_test="));
    assert!(!report.contains("a_z_e1"), "a_z keys should be absent: {report}");
}

#[test]
fn sweep_emits_rows_in_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    make_synth_data(dir.path());
    let config = write_config(dir.path(), "train.epochs=1\n");
    let out = invforge(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--grid",
        "100,0;100,0.1;0,0.1",
        "--out",
        dir.path().join("sweep").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "alpha,beta,eta,a_y,a_z_e1,recon_mse_e2");
    assert!(lines[1].starts_with("100,0,inf"));
    assert!(lines[2].starts_with("100,0.1,"));
    assert!(lines[3].starts_with("0,0.1,0,"));
}

#[test]
fn failures_exit_nonzero_with_messages() {
    let dir = tempfile::tempdir().unwrap();

    // Empty sweep grid is a usage error.
    make_synth_data(dir.path());
    let config = write_config(dir.path(), "");
    let out = invforge(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--grid",
        "",
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--grid"));

    // Config with unknown keys lists the problem.
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "train.bogus=1\ntrain.k=0\n").unwrap();
    let out = invforge(&[
        "train",
        "--model",
        "full",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown key"), "{stderr}");
    assert!(stderr.contains("train.k"), "{stderr}");

    // Missing MNIST directory is reported, not panicked.
    let out = invforge(&[
        "data",
        "mnist-rot",
        "--mnist-dir",
        dir.path().join("nowhere").to_str().unwrap(),
        "--out",
        dir.path().join("mr").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing MNIST file"));
}

/// Synthesizes a tiny fake MNIST directory (the standard four IDX files)
/// so the image pipelines can run without the real dataset.
fn make_fake_mnist(dir: &Path) {
    use invforge::data::{write_idx, IdxArray};
    use rand::Rng;
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = invforge::rng::stream(99, "fake-mnist");
    let mut write_set = |n: usize, img_name: &str, lbl_name: &str| {
        let images: Vec<u8> = (0..n * 28 * 28).map(|_| rng.random()).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        write_idx(&dir.join(img_name), &IdxArray::U8 { dims: vec![n, 28, 28], data: images })
            .unwrap();
        write_idx(&dir.join(lbl_name), &IdxArray::U8 { dims: vec![n], data: labels }).unwrap();
    };
    write_set(40, "train-images-idx3-ubyte", "train-labels-idx1-ubyte");
    write_set(20, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");
}

#[test]
fn mnist_rot_pipeline_builds_all_sets_and_enforces_angle_separation() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = dir.path().join("mnist");
    make_fake_mnist(&mnist);

    let out_dir = dir.path().join("rot");
    let out = invforge(&[
        "data",
        "mnist-rot",
        "--mnist-dir",
        mnist.to_str().unwrap(),
        "--angles",
        "0,22.5,-22.5,45,-45",
        "--seed",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("angles=0,22.5,-22.5,45,-45"), "{manifest}");
    for set in ["train", "theta", "55", "65"] {
        assert!(manifest.contains(&format!("set.{set}.images=")), "missing {set}: {manifest}");
    }
    // Train and theta carry z labels, the holdout sets do not.
    assert!(manifest.contains("set.train.z="));
    assert!(manifest.contains("set.theta.z="));
    assert!(!manifest.contains("set.55.z="));

    // Overlapping holdout angles are rejected.
    let out = invforge(&[
        "data",
        "mnist-rot",
        "--mnist-dir",
        mnist.to_str().unwrap(),
        "--angles",
        "0,45,-45",
        "--holdout-angles",
        "45,65",
        "--out",
        dir.path().join("bad").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlaps"));
}

#[test]
fn mnist_dil_pipeline_emits_one_set_per_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = dir.path().join("mnist");
    make_fake_mnist(&mnist);
    let out_dir = dir.path().join("dil");
    let out = invforge(&[
        "data",
        "mnist-dil",
        "--mnist-dir",
        mnist.to_str().unwrap(),
        "--kernels",
        "-2,2,3,4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("kernels=-2,2,3,4"));
    for k in ["-2", "2", "3", "4"] {
        assert!(manifest.contains(&format!("set.dil_{k}.images=")), "{manifest}");
    }
}

#[test]
fn worker_thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    make_synth_data(dir.path());
    let config = write_config(dir.path(), "");
    let mut checkpoints = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = Command::new(env!("CARGO_BIN_EXE_invforge"))
            .env("INVFORGE_THREADS", threads)
            .args([
                "train",
                "--model",
                "full",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        checkpoints.push(std::fs::read(out_dir.join("checkpoint.ckpt")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1], "thread count changed the training result");
}
