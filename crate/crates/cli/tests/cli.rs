use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rcod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcod"))
        .args(args)
        .env_remove("RCOD_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rcod(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a tiny corpus and trains all three models quickly.
fn pipeline(dir: &Path) -> [PathBuf; 4] {
    let corpus = dir.join("corpus");
    ok(&["--threads", "1", "synth-data", "--out", s(&corpus), "--count", "40", "--seed", "9"]);
    let manifest = corpus.join("manifest.jsonl");
    let teacher = dir.join("teacher.ckpt");
    let student = dir.join("student.ckpt");
    let mem = dir.join("mem.ckpt");
    let m = s(&manifest);
    ok(&["--threads", "1", "train-teacher", "--manifest", m, "--out", s(&teacher), "--steps", "3", "--seed", "4"]);
    ok(&[
        "--threads", "1", "train", "--manifest", m, "--teacher", s(&teacher), "--out", s(&student), "--steps", "3",
        "--seed", "4",
    ]);
    ok(&["--threads", "1", "train-mem", "--manifest", m, "--out", s(&mem), "--steps", "20", "--seed", "4"]);
    [manifest, teacher, student, mem]
}

fn sidecar(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_lists_defaults_for_every_command() {
    for cmd in ["synth-data", "train-teacher", "train", "train-mem", "infer", "eval", "report"] {
        let out = rcod(&[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("--threads"), "{cmd}");
        if cmd != "report" {
            assert!(text.contains("[default:"), "{cmd}");
        }
    }
}

#[test]
fn unknown_flags_and_bad_env_are_user_errors() {
    assert_eq!(code(&rcod(&["train", "--out", "x", "--bogus"])), 1);
    assert_eq!(code(&rcod(&["frobnicate"])), 1);
    let out = Command::new(env!("CARGO_BIN_EXE_rcod"))
        .args(["synth-data", "--out", "unused", "--count", "0"])
        .env("RCOD_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_corpus_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcod(&["train-teacher", "--out", s(&dir.path().join("t.ckpt"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--manifest"));
    let out = rcod(&["train-teacher", "--manifest", "/nonexistent/manifest.jsonl", "--out", "t.ckpt"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn pipeline_realism_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let [manifest, _, student, mem] = pipeline(dir.path());
    let lr = dir.path().join("corpus/000003_lr.pgm");
    let out = dir.path().join("out.pgm");
    let run = |realism: &str, extra: &[&str]| {
        let mut args = vec!["infer", "--ckpt", s(&student), "--input", s(&lr), "--output", s(&out), "--realism", realism];
        args.extend_from_slice(extra);
        rcod(&args)
    };
    for (r, t) in [("fid", 250), ("neu", 500), ("real", 750), ("t=600", 600)] {
        assert_eq!(code(&run(r, &[])), 0, "{r}");
        let side = sidecar(&dir.path().join("out.pgm.json"));
        assert_eq!(side["t_used"], t);
        assert!(side.get("m_hat").is_none());
        assert!(side["runtime_ms"].as_f64().unwrap() >= 0.0);
    }
    assert_eq!(code(&run("adaptive", &["--mem-ckpt", s(&mem)])), 0);
    let side = sidecar(&dir.path().join("out.pgm.json"));
    assert!([250, 500, 750].contains(&side["t_used"].as_u64().unwrap()));
    assert!(side["m_hat"].as_f64().unwrap().abs() <= 1.0);

    assert_eq!(code(&run("adaptive", &[])), 1);
    assert_eq!(code(&run("t=0", &[])), 1);
    assert_eq!(code(&run("t=1001", &[])), 1);
    assert_eq!(code(&run("max", &[])), 1);

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let e = rcod(&["eval", "--ckpt", s(&student), "--manifest", s(&empty), "--report-path", "unused.json"]);
    assert_eq!(code(&e), 1);
    assert!(String::from_utf8_lossy(&e.stderr).contains("no pairs"));

    let mut reports = Vec::new();
    for mode in ["fid", "neu", "real"] {
        let p = dir.path().join(format!("{mode}.json"));
        ok(&["eval", "--ckpt", s(&student), "--manifest", s(&manifest), "--realism", mode, "--report-path", s(&p)]);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        for key in ["psnr_mean", "ssim_mean", "sharpness_mean"] {
            assert!(v["modes"][mode]["metrics"][key]["mean"].is_number(), "{mode} {key}");
        }
        reports.push(p);
    }
    let csv = dir.path().join("table.csv");
    let text = ok(&[
        "report", "--eval-jsons", s(&reports[0]), s(&reports[1]), s(&reports[2]), "--csv", s(&csv),
    ]);
    assert!(text.lines().next().unwrap().split_whitespace().eq(["metric", "fid", "neu", "real"]));
    assert_eq!(text.matches('*').count(), 3);
    let table = rcod::inference::Table::from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(table.columns, ["fid", "neu", "real"]);

    let single = ok(&["report", "--eval-jsons", s(&reports[0])]);
    assert_eq!(single.lines().next().unwrap().split_whitespace().count(), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"count": 1}"#).unwrap();
    assert_eq!(code(&rcod(&["report", "--eval-jsons", s(&bad)])), 1);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let mut bytes = std::fs::read(&p).unwrap();
                if rel.ends_with(".pgm.json") {
                    let mut v = sidecar(&p);
                    v.as_object_mut().unwrap().remove("runtime_ms");
                    bytes = serde_json::to_vec(&v).unwrap();
                }
                out.push((rel, bytes));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn single_threaded_runs_are_byte_identical() {
    // both runs use the same path: configs record the manifest location
    let base = tempfile::tempdir().unwrap();
    let work = base.path().join("run");
    let run = || {
        std::fs::create_dir_all(&work).unwrap();
        let dir = work.as_path();
        let [manifest, _, student, mem] = pipeline(dir);
        let lr = dir.join("corpus/000001_lr.pgm");
        for r in ["fid", "adaptive"] {
            ok(&[
                "--threads", "1", "infer", "--ckpt", s(&student), "--mem-ckpt", s(&mem), "--input", s(&lr), "--output",
                s(&dir.join(format!("{r}.pgm"))), "--realism", r, "--seed", "3",
            ]);
        }
        ok(&[
            "--threads", "1", "eval", "--ckpt", s(&student), "--manifest", s(&manifest), "--report-path",
            s(&dir.join("eval.json")), "--seed", "3",
        ]);
        let listing = files(dir);
        std::fs::remove_dir_all(dir).unwrap();
        listing
    };
    let first = run();
    let second = run();
    assert_eq!(first.len(), second.len());
    for ((na, ba), (nb, bb)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between runs");
    }
}
