//! End-to-end subcommand tests against the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn ceb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ceb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_mini_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("mini.toml");
    std::fs::write(
        &path,
        r#"
objective = "ceb"
classifier = "linear"
rho = [3.0]
seeds = [5]

[dataset]
kind = "stripes"
classes = 4
size = 8
noise_std = 0.05
n_train = 160
n_test = 96

[encoder]
input_shape = [8, 8, 1]
hidden = [16]
latent_dim = 4

[schedule]
kind = "constant"

[train]
epochs = 12
batch_size = 32

[[attack_sweeps]]
norm = "linf"
epsilons = [0.0, 0.05, 0.1]
steps = 5
"#,
    )
    .unwrap();
    path
}

#[test]
fn train_is_bit_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_mini_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_ok(&ceb(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]));
    assert_ok(&ceb(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]));
    let ckpt_a = std::fs::read(out_a.join("ceb_rho3_seed5/checkpoint.ckpt")).unwrap();
    let ckpt_b = std::fs::read(out_b.join("ceb_rho3_seed5/checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ across reruns");
    let metrics_a = std::fs::read(out_a.join("ceb_rho3_seed5/metrics.json")).unwrap();
    let metrics_b = std::fs::read(out_b.join("ceb_rho3_seed5/metrics.json")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metrics differ across reruns");
}

#[test]
fn attack_evaluate_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_mini_config(dir.path());
    let out = dir.path().join("runs");
    assert_ok(&ceb(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let run_dir = out.join("ceb_rho3_seed5");
    let ckpt = run_dir.join("checkpoint.ckpt");

    assert_ok(&ceb(&[
        "attack",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]));
    assert!(run_dir.join("attack_report.json").exists());
    assert!(run_dir.join("accuracy_vs_epsilon_linf.csv").exists());

    assert_ok(&ceb(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]));
    assert!(run_dir.join("robustness_report.json").exists());

    let rendered = assert_ok(&ceb(&["report", "--run-dir", run_dir.to_str().unwrap()]));
    assert!(rendered.contains("clean test accuracy"));
    assert!(rendered.contains("untargeted linf PGD"));
    assert!(rendered.contains("gaussian_noise"));
    assert!(run_dir.join("epoch_vs_train_error.csv").exists());
    assert!(run_dir.join("corruption_vs_error.csv").exists());

    // the attack curve starts at the clean accuracy and never rises
    let csv = std::fs::read_to_string(run_dir.join("accuracy_vs_epsilon_linf.csv")).unwrap();
    let accs: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(accs.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn corrupt_dumps_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_mini_config(dir.path());
    let dest = dir.path().join("corrupted.bin");
    assert_ok(&ceb(&[
        "corrupt",
        "--config",
        config.to_str().unwrap(),
        "--kind",
        "impulse_noise",
        "--severity",
        "4",
        "--dest",
        dest.to_str().unwrap(),
    ]));
    let (ds, hash) = ceb_core::data::read_dataset(&dest).unwrap();
    assert_eq!(ds.len(), 96);
    assert!(ds.provenance.contains("impulse_noise"));
    assert_eq!(hash.len(), 64);
}

#[test]
fn shipped_example_configs_stay_valid() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ceb_core::config::load_config(&path)
                .unwrap_or_else(|e| panic!("{} no longer parses: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 2, "expected the example configs to exist");
}

#[test]
fn probe_prints_the_identities() {
    let out = assert_ok(&ceb(&["probe", "--seed", "3"]));
    assert!(out.contains("I(Z;X)"));
    assert!(out.contains("chain-rule gap"));
    assert!(out.contains("100/100 trials"));
}

#[test]
fn missing_files_and_bad_configs_give_actionable_errors() {
    let out = ceb(&["train", "--config", "/nonexistent/config.toml"]);
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "objective = \"ceb\"\nrho = []\nseeds = [1]\n").unwrap();
    let out = ceb(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());

    let out = ceb(&["report", "--run-dir", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("metrics.json"), "unhelpful error: {err}");
}

#[test]
fn corrupting_a_flat_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("flat.toml");
    std::fs::write(
        &config,
        r#"
objective = "ceb"
rho = [1.0]
seeds = [1]

[dataset]
kind = "blobs"
classes = 2
base_dim = 2
separation = 6.0
n_train = 32
n_test = 16

[encoder]
input_shape = [2]
hidden = []
latent_dim = 2

[schedule]
kind = "constant"

[train]
epochs = 2
batch_size = 16
"#,
    )
    .unwrap();
    let dest = dir.path().join("x.bin");
    let out = ceb(&[
        "corrupt",
        "--config",
        config.to_str().unwrap(),
        "--kind",
        "brightness",
        "--severity",
        "2",
        "--dest",
        dest.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("image"), "unhelpful error: {err}");
}
