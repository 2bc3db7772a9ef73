use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cadorder_core::datagen::{e1, e2};
use cadorder_core::polyset::serialize_problem;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadorder"))
        .current_dir(dir)
        .args(args)
        .env_remove("CADORDER_JOBS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_hand(dir: &Path) -> (PathBuf, PathBuf) {
    let p1 = dir.join("e1.poly");
    let p2 = dir.join("e2.poly");
    std::fs::write(&p1, serialize_problem(&e1())).unwrap();
    std::fs::write(&p2, serialize_problem(&e2())).unwrap();
    (p1, p2)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&run(tmp.path(), &["gen", "--seed", "7", "--count", "20", "--out", out])), 0);
    }
    let a = json(&tmp.path().join("a/manifest.json"));
    let b = json(&tmp.path().join("b/manifest.json"));
    assert_eq!(a, b);
    let mut names: Vec<_> = std::fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".poly"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 20);
    for n in names {
        let x = std::fs::read(tmp.path().join("a").join(&n)).unwrap();
        let y = std::fs::read(tmp.path().join("b").join(&n)).unwrap();
        assert_eq!(x, y, "{n:?}");
    }
    let manifest = json(&tmp.path().join("a/run_manifest.json"));
    assert_eq!(manifest["command"], "gen");
    assert!(manifest["outputs"].as_array().is_some_and(|o| !o.is_empty()));
}

#[test]
fn gen_rejects_zero_count() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["gen", "--count", "0", "--out", "d"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn features_with_small_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["gen", "--count", "1", "--out", "probe"])), 0);
    assert_eq!(code(&run(d, &["features", "--probe", "probe", "--out", "small.json"])), 0);
    assert_eq!(code(&run(d, &["features", "--out", "full.json"])), 0);
    let small = json(&d.join("small.json"));
    let full = json(&d.join("full.json"));
    assert!(small["count"].as_u64().unwrap() <= full["count"].as_u64().unwrap());
    assert_eq!(small["valid_descriptors"], full["valid_descriptors"]);
    assert!(d.join("full.json.manifest.json").exists());
}

#[test]
fn features_rejects_bad_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("empty")).unwrap();
    assert_ne!(code(&run(d, &["features", "--probe", "empty", "--out", "f.json"])), 0);
    assert_eq!(code(&run(d, &["features", "--probe", "nowhere", "--out", "f.json"])), 2);
}

#[test]
fn order_hand_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let (p1, _) = write_hand(tmp.path());
    let p1 = p1.to_str().unwrap();
    for h in ["brown", "nn"] {
        let out = run(tmp.path(), &["order", "--problem", p1, "--heuristic", h]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert_eq!(stdout(&out).trim(), "x>z>y");
    }
    let out = run(tmp.path(), &["order", "--problem", p1, "--heuristic", "brown", "--reverse"]);
    assert_eq!(stdout(&out).trim(), "y>z>x");
    let out = run(tmp.path(), &["order", "--problem", p1, "--heuristic", "nn", "--random-ties", "1"]);
    assert_eq!(code(&out), 1);
    let out = run(tmp.path(), &["order", "--problem", "missing.poly", "--heuristic", "brown"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn search_resume_matches_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["gen", "--seed", "3", "--count", "30", "--out", "data"])), 0);
    let args = ["search", "--dataset", "data", "--top-k", "0", "--checkpoint-every", "7"];
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", "full", "--journal", "j.txt"]);
    assert_eq!(code(&run(d, &full)), 0);

    let journal = std::fs::read_to_string(d.join("j.txt")).unwrap();
    let keep: Vec<&str> = journal.lines().take(40).collect();
    let torn = format!("{}\n41,12", keep.join("\n"));
    std::fs::write(d.join("j.txt"), torn).unwrap();

    let mut resumed: Vec<&str> = args.to_vec();
    resumed.extend(["--out", "resumed", "--resume", "j.txt"]);
    let out = run(d, &resumed);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["search_report.json", "search_report.csv"] {
        assert_eq!(
            std::fs::read(d.join("full").join(f)).unwrap(),
            std::fs::read(d.join("resumed").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn search_table_oracle_reports_missing_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("data")).unwrap();
    write_hand(&d.join("data"));
    std::fs::write(d.join("times.csv"), "problem,ordering,time_s,timed_out\ne1,x>y>z,1,false\n").unwrap();
    let out = run(d, &["search", "--dataset", "data", "--oracle", "table:times.csv", "--out", "s"]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("no timing record") && (err.contains("`e1`") || err.contains("`e2`")), "{err}");
}

#[test]
fn train_with_zero_rate_is_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["gen", "--seed", "1", "--count", "40", "--out", "tr"])), 0);
    assert_eq!(code(&run(d, &["gen", "--seed", "2", "--count", "20", "--out", "va"])), 0);
    let out = run(d, &["train", "--train", "tr", "--val", "va", "--lr", "0", "--epochs", "3", "--out", "t"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&d.join("t/train_report.json"));
    let history = report["history"].as_array().unwrap();
    assert_eq!(history.len(), 4);
    assert!(history.iter().all(|p| p["weights"] == history[0]["weights"]));
    assert!(history.iter().all(|p| p["val_total_cost"] == history[0]["val_total_cost"]));
    assert!(d.join("t/checkpoint.json").exists());

    let out = run(
        d,
        &["order", "--problem", "va/rnd-2-0.poly", "--heuristic", "triplet-file", "--triplet-file", "t/checkpoint.json"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn train_divergence_exits_with_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("data")).unwrap();
    write_hand(&d.join("data"));
    let out = run(
        d,
        &[
            "train", "--train", "data", "--val", "data", "--no-scaling", "--init", "1.7e308", "1.7e308", "0", "--out",
            "t",
        ],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn check_flags_undersized_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir(d.join("data")).unwrap();
    write_hand(&d.join("data"));
    assert_eq!(code(&run(d, &["check", "--dataset", "data"])), 0);
    let out = run(d, &["check", "--dataset", "data", "--force-w", "2", "--out", "r.json"]);
    assert_eq!(code(&out), 3);
    assert!(json(&d.join("r.json"))["violations"].as_array().is_some_and(|v| !v.is_empty()));
}

#[test]
fn check_rejects_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    assert_eq!(code(&run(tmp.path(), &["check", "--dataset", "empty"])), 1);
}

#[test]
fn help_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["search", "--help"]);
    assert_eq!(code(&out), 0);
    let help = stdout(&out);
    for flag in ["--dataset", "--oracle", "--top-k", "--resume", "--jobs"] {
        assert!(help.contains(flag), "{flag}");
    }
    assert_eq!(code(&run(tmp.path(), &["gen", "--bogus"])), 1);
    assert_eq!(code(&run(tmp.path(), &["frobnicate"])), 1);
}
