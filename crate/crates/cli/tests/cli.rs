use std::path::Path;
use std::process::{Command, Output};

const BLOBS: &str = "dataset = blobs
teacher_arch = blobs-teacher
student_arch = blobs-student
m = 32
epochs = 3
lr = 0.005
k = 3
";

fn lpkd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpkd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lpkd(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blobs.cfg"), BLOBS).unwrap();
    dir
}

/// JSON lines with wall-clock fields removed.
fn timeless(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if let Some(o) = v.as_object_mut() {
                o.remove("seconds");
            }
            v
        })
        .collect()
}

#[test]
fn full_pipeline_on_blobs() {
    let tmp = setup();
    let d = tmp.path();
    ok(d, &["train-teacher", "--config", "blobs.cfg", "--out", "t", "--epochs", "8"]);
    for f in ["teacher.ckpt", "teacher.jsonl", "resolved_config.txt"] {
        assert!(d.join("t").join(f).exists(), "{f}");
    }
    let lines = timeless(&d.join("t/teacher.jsonl"));
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[8]["summary"], true);
    assert!(lines[8]["test_accuracy"].as_f64().unwrap() > 0.9);

    for strategy in ["bp", "kd", "lp", "fitnet"] {
        let out = format!("s-{strategy}");
        ok(
            d,
            &["train-student", "--config", "blobs.cfg", "--teacher-ckpt", "t/teacher.ckpt", "--strategy", strategy, "--out", &out],
        );
        let lines = timeless(&d.join(&out).join("student.jsonl"));
        assert_eq!(lines.last().unwrap()["strategy"], strategy);
    }
    // bp needs no teacher.
    ok(d, &["train-student", "--config", "blobs.cfg", "--strategy", "bp", "--out", "s-bare"]);

    ok(d, &["eval", "--config", "blobs.cfg", "--ckpt", "s-lp/student.ckpt", "--split", "val", "--out", "e"]);
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e/eval.json")).unwrap()).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() >= 0.0);
    assert_eq!(eval["per_class"].as_array().unwrap().len(), 4);

    ok(d, &["export-embeddings", "--config", "blobs.cfg", "--ckpt", "s-lp/student.ckpt", "--out", "x"]);
    let csv = std::fs::read_to_string(d.join("x/embeddings.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("id,label,f0,f1,f2"));
    assert_eq!(csv.lines().count(), 1 + 200);

    ok(
        d,
        &[
            "sweep", "--config", "blobs.cfg", "--teacher-ckpt", "t/teacher.ckpt", "--epochs", "1",
            "--set", "sweep_k=1,3", "--set", "sweep_gamma=0,1", "--out", "sw",
        ],
    );
    let sweep = std::fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("k,gamma,val_accuracy,test_accuracy"));
    assert_eq!(sweep.lines().count(), 5);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = setup();
    let d = tmp.path();
    ok(d, &["train-teacher", "--config", "blobs.cfg", "--seed", "4", "--set", "gamma=0.3", "--out", "a"]);
    ok(d, &["train-teacher", "--config", "a/resolved_config.txt", "--out", "b"]);
    assert_eq!(
        std::fs::read_to_string(d.join("a/resolved_config.txt")).unwrap(),
        std::fs::read_to_string(d.join("b/resolved_config.txt")).unwrap()
    );
    assert_eq!(timeless(&d.join("a/teacher.jsonl")), timeless(&d.join("b/teacher.jsonl")));
    assert_eq!(std::fs::read(d.join("a/teacher.ckpt")).unwrap(), std::fs::read(d.join("b/teacher.ckpt")).unwrap());
}

#[test]
fn bench_and_gradcheck_write_reports() {
    let tmp = setup();
    let d = tmp.path();
    let text = ok(d, &["bench", "--analytic-only", "--out", "b"]);
    assert!(text.contains("22.98"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("b/bench.json")).unwrap()).unwrap();
    assert_eq!(report["overhead_fitnet"], 5120 * 6912 + 6912);
    assert_eq!(report["overhead_lp"], 0);

    ok(d, &["bench", "--m", "16", "--dS", "32", "--dT", "48", "--reps", "5", "--out", "b2"]);
    ok(d, &["gradcheck", "--instances", "2", "--precision", "f64", "--out", "g"]);
    let g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("g/gradcheck.json")).unwrap()).unwrap();
    assert!(!g["cases"].as_array().unwrap().is_empty());
}

#[test]
fn exit_codes_distinguish_config_and_runtime_errors() {
    let tmp = setup();
    let d = tmp.path();
    let code = |args: &[&str]| lpkd(d, args).status.code();
    assert_eq!(code(&["train-teacher", "--config", "blobs.cfg", "--tau", "0", "--out", "o"]), Some(1));
    assert_eq!(code(&["train-teacher", "--config", "blobs.cfg", "--set", "bogus=1", "--out", "o"]), Some(1));
    assert_eq!(code(&["train-teacher", "--config", "missing.cfg", "--out", "o"]), Some(1));
    assert_eq!(code(&["no-such-subcommand"]), Some(1));
    assert_eq!(code(&["train-student", "--config", "blobs.cfg", "--strategy", "lp", "--out", "o"]), Some(1));
    assert_eq!(code(&["eval", "--config", "blobs.cfg", "--ckpt", "absent.ckpt", "--out", "o"]), Some(2));
    assert_eq!(code(&["--help"]), Some(0));
}
