use std::path::Path;
use std::process::{Command, Output};

use microadam::checkpoint;
use microadam::optim::ErrorStore;

fn microadam(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microadam"))
        .args(args)
        .current_dir(dir)
        .env_remove("MICROADAM_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn final_loss(path: &Path) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    data_rows(&text).last().unwrap()[1].parse().unwrap()
}

#[test]
fn run_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "run",
        "--problem",
        "rosenbrock",
        "--optimizer",
        "microadam",
        "--steps",
        "500",
        "--seed",
        "7",
        "--out",
        "t.csv",
    ];
    let out = microadam(&args, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,loss,grad_norm,error_norm,update_nnz,theta0,theta1"
    );
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 500);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 5 + 2);
        assert_eq!(row[0], (i + 1).to_string());
    }
}

#[test]
fn column_count_tracks_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = microadam(
        &[
            "run",
            "--problem",
            "quadratic",
            "--dim",
            "13",
            "--optimizer",
            "adam",
            "--steps",
            "5",
            "--out",
            "q.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("q.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 18);
    assert!(data_rows(&text).iter().all(|r| r.len() == 18));
}

#[test]
fn error_feedback_beats_plain_topk_on_rosenbrock() {
    let dir = tempfile::tempdir().unwrap();
    for opt in ["topk_adam", "microadam"] {
        let out = microadam(
            &[
                "run",
                "--problem",
                "rosenbrock",
                "--optimizer",
                opt,
                "--steps",
                "500",
                "--seed",
                "7",
                "--out",
                &format!("{opt}.csv"),
            ],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let plain = final_loss(&dir.path().join("topk_adam.csv"));
    let micro = final_loss(&dir.path().join("microadam.csv"));
    assert!(micro < plain, "microadam {micro} vs topk_adam {plain}");
}

#[test]
fn unknown_names_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--problem", "nope"][..],
        &["run", "--optimizer", "sgd"],
        &["run", "--schedule", "cosine"],
        &["run", "--rounding", "up"],
        &["run", "--density", "0"],
        &["run", "--steps", "0"],
        &["memory", "--model", "gpt5"],
        &["ef-lowrank", "--rank", "33", "--steps", "2"],
    ] {
        let out = microadam(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error:"), "{args:?}");
    }
    assert!(stderr(&microadam(&["run", "--problem", "nope"], dir.path())).contains("nope"));
}

#[test]
fn divergence_exits_3_and_flags_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = microadam(
        &[
            "run",
            "--problem",
            "rosenbrock",
            "--optimizer",
            "adam",
            "--lr",
            "1e9",
            "--steps",
            "50",
            "--out",
            "d.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("diverged"));
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert!(data_rows(&text).len() < 50);
    assert!(text
        .lines()
        .last()
        .unwrap()
        .starts_with("# diverged at step"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"problem": "quadratic", "dim": 3, "optimizer": "adam", "steps": 40, "lr": 0.01, "seed": 2}"#,
    )
    .unwrap();
    let out = microadam(
        &[
            "run", "--config", "cfg.json", "--steps", "7", "--out", "a.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("a.csv")).unwrap());
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0].len(), 5 + 3);

    // same run spelled out entirely on the command line
    let out = microadam(
        &[
            "run",
            "--problem",
            "quadratic",
            "--dim",
            "3",
            "--optimizer",
            "adam",
            "--steps",
            "7",
            "--lr",
            "0.01",
            "--seed",
            "2",
            "--out",
            "b.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("a.csv")).unwrap(),
        std::fs::read(dir.path().join("b.csv")).unwrap()
    );

    std::fs::write(dir.path().join("bad.json"), r#"{"learning_rate": 0.1}"#).unwrap();
    let out = microadam(&["run", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn output_directory_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("runs");
    let out = Command::new(env!("CARGO_BIN_EXE_microadam"))
        .args([
            "run",
            "--problem",
            "illcond",
            "--optimizer",
            "amsgrad",
            "--steps",
            "3",
            "--seed",
            "4",
        ])
        .current_dir(dir.path())
        .env("MICROADAM_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("illcond_amsgrad_s4.csv").exists());
}

#[test]
fn sweep_writes_one_file_per_optimizer() {
    let dir = tempfile::tempdir().unwrap();
    let out = microadam(
        &[
            "run",
            "--problem",
            "rosenbrock",
            "--sweep",
            "adam,topk_adam,microadam",
            "--steps",
            "30",
            "--out",
            "sweep",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let printed = stdout(&out);
    let order: Vec<&str> = printed
        .lines()
        .map(|l| l.split(' ').next().unwrap())
        .collect();
    assert_eq!(order, ["adam", "topk_adam", "microadam"]);
    for opt in ["adam", "topk_adam", "microadam"] {
        let path = dir.path().join(format!("sweep/rosenbrock_{opt}_s0.csv"));
        assert_eq!(data_rows(&std::fs::read_to_string(path).unwrap()).len(), 30);
    }
}

#[test]
fn checkpoint_holds_final_parameters_and_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = microadam(
        &[
            "run",
            "--problem",
            "quadratic",
            "--dim",
            "20",
            "--optimizer",
            "microadam",
            "--density",
            "0.1",
            "--window",
            "3",
            "--steps",
            "12",
            "--checkpoint",
            "s.bin",
            "--out",
            "s.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let bytes = std::fs::read(dir.path().join("s.bin")).unwrap();
    assert_eq!(&bytes[..4], b"MADM");
    let snap = checkpoint::decode(&bytes).unwrap();
    let rows = data_rows(&std::fs::read_to_string(dir.path().join("s.csv")).unwrap());
    let last: Vec<f64> = rows.last().unwrap()[5..]
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(snap.params, last);
    assert_eq!(snap.window.step(), 12);
    assert_eq!(snap.window.filled(), 3);
    assert_eq!(snap.window.row_width(), 2);
    assert!(matches!(snap.error, ErrorStore::Quantized { .. }));

    let out = microadam(
        &["run", "--optimizer", "adam", "--checkpoint", "x.bin"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn memory_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&microadam(&["memory", "--model", "llama2-7b"], dir.path()));
    for figure in [
        "50.21", "25.10", "12.55", "5.65", "1.36", "5.43", "2.04", "8.15",
    ] {
        assert!(text.contains(figure), "{figure} missing from\n{text}");
    }

    let csv = stdout(&microadam(
        &[
            "memory", "--d", "100", "--m", "0", "--k", "1", "--format", "csv",
        ],
        dir.path(),
    ));
    assert!(
        csv.lines().any(|l| l.starts_with("microadam-m0,50,")),
        "{csv}"
    );

    let csv = stdout(&microadam(
        &[
            "memory",
            "--model",
            "llama2-7b",
            "--galore",
            "--rank",
            "256",
            "--bits",
            "8",
            "--format",
            "csv",
        ],
        dir.path(),
    ));
    let galore: Vec<&str> = csv.lines().filter(|l| l.starts_with("galore")).collect();
    assert_eq!(galore.len(), 1);
    let gib: f64 = galore[0].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(format!("{gib:.2}"), "1.36");
}

fn constants(args: &[&str]) -> Vec<(String, f64)> {
    let dir = tempfile::tempdir().unwrap();
    let mut full = vec!["constants"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--format", "csv"]);
    let out = microadam(&full, dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    stdout(&out)
        .lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

fn lookup(table: &[(String, f64)], key: &str) -> f64 {
    table.iter().find(|(k, _)| k == key).unwrap().1
}

#[test]
fn constants_without_compression() {
    let t = constants(&["--q", "0", "--omega", "0", "--G", "1", "--eps", "1e-8"]);
    assert_eq!(lookup(&t, "C2"), 0.0);
    assert_eq!(lookup(&t, "ef_bound"), 0.0);
    assert!((lookup(&t, "C0") - (4.0f64 + 1e-8).sqrt()).abs() < 1e-12);
}

#[test]
fn constants_for_one_percent_topk() {
    let t = constants(&[
        "--k", "1", "--d", "100", "--omega", "0", "--G", "1", "--eps", "1e-8",
    ]);
    // q^2 = 0.99 exactly, so C0^2 = 4 * 1.99^3 / 0.01^2 + eps
    let c0 = (4.0 * 1.99f64.powi(3) / 1e-4 + 1e-8).sqrt();
    assert!((lookup(&t, "C0") - c0).abs() <= 1e-9 * c0);
    assert!((lookup(&t, "C0") - 561.448).abs() < 1e-3);
}

#[test]
fn constants_reject_divergent_compression() {
    let dir = tempfile::tempdir().unwrap();
    let out = microadam(&["constants", "--q", "0.9", "--omega", "0.2"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("q_ω = (1+ω)q = 1.08 ≥ 1"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn lowrank_diagnostic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = microadam(
        &[
            "ef-lowrank",
            "--rank",
            "31",
            "--steps",
            "50",
            "--out",
            "e.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "step,loss,grad_norm,error_norm,projected_error_norm,refreshed"
    );
    assert_eq!(data_rows(&text).len(), 50);

    let out = microadam(
        &["ef-lowrank", "--fixed", "--steps", "300", "--out", "f.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.iter().filter(|r| r[5] == "1").count(), 1);
    for r in rows {
        let (e, p): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!(p < 1e-8 * e);
    }
}
