use std::path::Path;
use std::process::{Command, Output};

fn tdsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdsnn")).args(args).output().expect("spawn tdsnn")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SUBCOMMANDS: &[&str] = &[
    "gen-data",
    "train-teacher",
    "train",
    "eval-sweep",
    "early-exit",
    "verify-bounds",
    "gradcheck",
    "dump-logits",
];

#[test]
fn help_for_every_subcommand() {
    assert!(tdsnn(&["--help"]).status.success());
    for sub in SUBCOMMANDS {
        let out = tdsnn(&[sub, "--help"]);
        assert!(out.status.success(), "{sub} --help");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--seed") && text.contains("--out"), "{sub}: {text}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(tdsnn(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(tdsnn(&["frobnicate"]).status.code(), Some(2));
    // --train-csv requires --test-csv
    assert_eq!(tdsnn(&["train", "--train-csv", "a.csv"]).status.code(), Some(2));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let out = tdsnn(&["train", "--config", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error["), "{err}");
    assert!(err.contains("nope.cfg"), "{err}");
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdsnn(&["train", "--set", "epochz=3", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    let out = tdsnn(&["train", "--set", "no_equals_sign", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_data_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdsnn(&["gen-data", "--seed", "2", "--classes", "4", "--train-per-class", "10", "--test-per-class", "5", "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let train = std::fs::read_to_string(dir.path().join("train.csv")).unwrap();
    let test = std::fs::read_to_string(dir.path().join("test.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 40);
    assert_eq!(test.lines().count(), 1 + 20);
    assert!(train.starts_with("label,"));
}

#[test]
fn pipeline_from_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert!(tdsnn(&["gen-data", "--seed", "1", "--train-per-class", "40", "--test-per-class", "20", "--out", p(&data)]).status.success());
    let (train, test) = (data.join("train.csv"), data.join("test.csv"));
    let csv = ["--train-csv", p(&train), "--test-csv", p(&test)];

    let teach = d.join("teacher");
    let out = tdsnn(&[&["train-teacher", "--seed", "1", "--epochs", "20", "--out", p(&teach)][..], &csv].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(teach.join("teacher.ckpt").exists());
    let logits = teach.join("teacher_logits.csv");
    assert_eq!(std::fs::read_to_string(&logits).unwrap().lines().count(), 1 + 120);

    let student = d.join("student");
    let out = tdsnn(&[
        &["train", "--seed", "1", "--epochs", "3", "--T", "4", "--loss-mode", "twce_twkl", "--teacher-logits", p(&logits), "--out", p(&student)][..],
        &csv,
    ]
    .concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = student.join("model.ckpt");
    let ck = std::fs::read_to_string(&ckpt).unwrap();
    assert!(ck.contains("trained_T 4") && ck.contains("loss_mode twce_twkl"));
    assert_eq!(std::fs::read_to_string(student.join("losses.csv")).unwrap().lines().count(), 1 + 3);

    let eval = d.join("eval");
    let out = tdsnn(&[&["eval-sweep", "--model", p(&ckpt), "--model", p(&ckpt), "--out", p(&eval)][..], &csv].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = std::fs::read_to_string(eval.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("trained_T,T1,T2,T3,T4\n"));
    assert_eq!(sweep.lines().count(), 3);
    assert!(eval.join("firing_rates.csv").exists());

    let out = tdsnn(&[&["early-exit", "--model", p(&ckpt), "--cs", "0.5,0.9", "--out", p(&eval)][..], &csv].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(eval.join("early_exit.csv")).unwrap().lines().count(), 3);

    let out = tdsnn(&[&["dump-logits", "--model", p(&ckpt), "--out", p(&eval)][..], &csv].concat());
    assert!(out.status.success());
    // 60 test samples, 4 timestep rows plus one ensemble row each
    assert_eq!(std::fs::read_to_string(eval.join("logits.csv")).unwrap().lines().count(), 1 + 60 * 5);

    let out = tdsnn(&[
        &["verify-bounds", "--model", p(&ckpt), "--teacher", p(&teach.join("teacher.ckpt")), "--out", p(&eval)][..],
        &csv,
    ]
    .concat());
    assert!(eval.join("bounds.csv").exists() && eval.join("bounds.txt").exists());
    assert!(matches!(out.status.code(), Some(0 | 1)));
}

#[test]
fn config_file_and_set_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nepochs = 2\nT = 3\nteacher_epochs = 5\nhidden = 8\n").unwrap();
    let out_dir = dir.path().join("o");
    let out = tdsnn(&["train", "--config", p(&cfg), "--set", "T=2", "--seed", "4", "--out", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = std::fs::read_to_string(out_dir.join("model.ckpt")).unwrap();
    assert!(ck.contains("trained_T 2"), "--set beats the file");
    assert!(ck.contains("seed 4"));
    assert!(ck.contains("layer_sizes 2 8 3"));
    assert_eq!(std::fs::read_to_string(out_dir.join("losses.csv")).unwrap().lines().count(), 1 + 2);

    // a named flag beats --set
    let out = tdsnn(&["train", "--config", p(&cfg), "--set", "T=2", "--T", "5", "--out", p(&out_dir)]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(out_dir.join("model.ckpt")).unwrap().contains("trained_T 5"));
}

#[test]
fn gradcheck_single_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdsnn(&["gradcheck", "--loss-mode", "twce_only", "--out", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("twce_only,"));
    // an impossible threshold fails with the gradcheck category
    let out = tdsnn(&["gradcheck", "--loss-mode", "twce_only", "--max-rel-error", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[gradcheck]"));
}

#[test]
fn random_bounds_report_the_failing_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = tdsnn(&["verify-bounds", "--trials", "50", "--seed", "7", "--out", p(dir.path())]);
    let txt = std::fs::read_to_string(dir.path().join("bounds.txt")).unwrap();
    assert!(txt.contains("jensen_split_first"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[bound-violation]"));
}
