use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_candi-lab"))
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = bin();
    c.args(args);
    match threads {
        Some(n) => c.env("CANDI_LAB_THREADS", n),
        None => c.env_remove("CANDI_LAB_THREADS"),
    };
    c.output().unwrap()
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let args = ["sample", "--distribution", "builtin:reference_eight", "--nfe", "8", "--num-samples", "500", "--seed", "4"];
    let one = run(&args, Some("1"));
    let four = run(&args, Some("4"));
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
    let args = ["validate-formulas", "--vocab-list", "5", "--grid-points", "3", "--samples", "300"];
    assert_eq!(run(&args, Some("1")).stdout, run(&args, Some("3")).stdout);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["no-such-command"], None).status.code(), Some(2));
    assert_eq!(run(&["frontier", "--temps", "warm"], None).status.code(), Some(2));
    assert_eq!(run(&["sample", "--distribution", "builtin:two_class"], Some("zero")).status.code(), Some(2));
    assert_eq!(run(&["--version"], None).status.code(), Some(0));
    let bad = run(&["frontier", "--distribution", "builtin:two_class", "--temps", "1.0,0.5"], None);
    assert_eq!(bad.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(rec["error"], "config");
}

#[test]
fn config_file_train_then_sample_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "seed": 5, "train": {"steps": 300, "dim": 8, "hidden": 8},
            "sampler": {"mode": "hybrid_approx", "nfe": 6, "num_samples": 50},
            "paths": {"distribution": "builtin:reference_five"}}"#,
    )
    .unwrap();
    let ckpt = dir.path().join("ckpt.json");
    let manifest = dir.path().join("train-manifest.json");
    let c = cfg.to_str().unwrap();
    let t = run(&["train", "--config", c, "--out", ckpt.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()], None);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&t.stdout).unwrap();
    assert!(summary["heldout_loss"].as_f64().unwrap() > 0.0);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["train"]["dim"], 8);
    assert_eq!(m["artifacts"][0]["bytes"], std::fs::metadata(&ckpt).unwrap().len());

    let s = run(&["sample", "--config", c, "--checkpoint", ckpt.to_str().unwrap()], None);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let lines: Vec<serde_json::Value> = s.stdout.split(|&b| b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
    assert_eq!(lines.len(), 50);
    assert!(lines.iter().all(|l| l["mode"] == "hybrid_approx" && l["seed"] == 5));
}

#[test]
fn guided_sampling_reads_a_classifier_file() {
    let dir = tempfile::tempdir().unwrap();
    let clf = dir.path().join("clf.json");
    std::fs::write(&clf, r#"{"kind": "logistic", "weights": [[1, 1, -1, -1], [0, 0, 0, 0]], "bias": 0}"#).unwrap();
    let frac = |w: &str| {
        let o = run(
            &["sample", "--distribution", "builtin:two_class", "--classifier", clf.to_str().unwrap(), "--guidance-weight", w, "--num-samples", "2000", "--nfe", "16"],
            None,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = String::from_utf8(o.stdout).unwrap();
        text.lines().filter(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["tokens"][0].as_u64().unwrap() < 2
        }).count()
    };
    assert!(frac("0.05") > frac("0"));
    let no_clf = run(&["sample", "--distribution", "builtin:two_class", "--guidance-weight", "1"], None);
    assert_eq!(no_clf.status.code(), Some(2));
}

#[test]
fn frontier_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (mode, path) in [("hybrid_exact", &a), ("masked", &b)] {
        let o = run(
            &["frontier", "--distribution", "builtin:reference_eight", "--mode", mode, "--nfe", "4", "--num-samples", "1000", "--out", path.to_str().unwrap()],
            None,
        );
        assert!(o.status.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("temperature,diversity,coherence,tv\n"));
    assert_eq!(text.lines().count(), 5);
    let o = run(&["compare", a.to_str().unwrap(), b.to_str().unwrap()], None);
    let verdict = String::from_utf8(o.stdout).unwrap();
    assert!(["dominates: a\n", "dominates: b\n", "dominates: incomparable\n"].contains(&verdict.as_str()));
    let same = run(&["compare", a.to_str().unwrap(), a.to_str().unwrap()], None);
    assert_eq!(String::from_utf8(same.stdout).unwrap(), "dominates: incomparable\n");
}
