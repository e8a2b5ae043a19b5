use std::fs;
use std::path::Path;
use std::process::Command;

fn progsynth(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_progsynth")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "progsynth {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().skip(1).collect()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    progsynth(&[
        "gen-data", "--seed", "3", "--out", s(&data),
        "--set", "splits.train=24", "--set", "splits.val=8", "--set", "splits.test=8",
        "--set", "rollouts_per_program=3",
    ]);
    for f in ["manifest.json", "train.programs.txt", "val.rollouts.bin"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let cfg = tmp.path().join("train.conf");
    fs::write(&cfg, "# tiny model\nrounds = 1\nbatch_size = 8\nmodel.embed = 8\nmodel.hidden = 8\nmodel.latent = 4\n").unwrap();
    progsynth(&["train", "--data", s(&data), "--out", s(&run), "--config", s(&cfg), "--seed", "1"]);
    let ckpt = run.join("checkpoint.bin");
    assert!(ckpt.exists());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,phase,loss"));
    assert_eq!(data_rows(&log).len(), 2);
    for phase in ["supervised", "behavior"] {
        assert!(run.join(format!("checkpoints/r1-{phase}.bin")).exists(), "{phase}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 1);

    // Interpolation symmetry.
    let fwd = tmp.path().join("fwd");
    let bwd = tmp.path().join("bwd");
    progsynth(&["interpolate", "--checkpoint", s(&ckpt), "--out", s(&fwd), "--a", "WHILE", "--b", "Maze"]);
    progsynth(&["interpolate", "--checkpoint", s(&ckpt), "--out", s(&bwd), "--a", "Maze", "--b", "WHILE"]);
    let programs = |dir: &Path| -> Vec<String> {
        let text = fs::read_to_string(dir.join("interpolation.csv")).unwrap();
        data_rows(&text).iter().map(|l| l.split_once(',').unwrap().1.to_string()).collect()
    };
    let (a, mut b) = (programs(&fwd), programs(&bwd));
    assert_eq!(a.len(), 8);
    b.reverse();
    assert_eq!(a, b);

    // Latent export is deterministic and sized by the split.
    let e1 = tmp.path().join("e1");
    let e2 = tmp.path().join("e2");
    for e in [&e1, &e2] {
        progsynth(&["export-latents", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(e)]);
    }
    let l1 = fs::read(e1.join("latents.csv")).unwrap();
    assert_eq!(l1, fs::read(e2.join("latents.csv")).unwrap());
    let text = String::from_utf8(l1).unwrap();
    assert_eq!(data_rows(&text).len(), 8);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 1 + 4);

    let rec = tmp.path().join("rec");
    progsynth(&[
        "reconstruct", "--checkpoint", s(&ckpt), "--out", s(&rec),
        "--set", "seeds=2", "--set", r#"targets=["WHILE"]"#, "--set", r#"cem={"max_iters":3}"#,
    ]);
    let results = fs::read_to_string(rec.join("results.csv")).unwrap();
    assert_eq!(data_rows(&results).len(), 2);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(rec.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["checkpoint_sha256"].as_str().unwrap().len(), 64);

    let solve = tmp.path().join("solve");
    progsynth(&[
        "solve", "--checkpoint", s(&ckpt), "--out", s(&solve),
        "--set", "seeds=1", "--set", r#"tasks=["Maze","TopOff"]"#, "--set", r#"cem={"max_iters":2}"#,
    ]);
    let gen = tmp.path().join("gen");
    progsynth(&[
        "generalize", "--programs", s(&solve.join("results.csv")), "--out", s(&gen),
        "--set", "seeds=1", "--set", "eval_configs=2", "--set", "generalize_size=20",
    ]);
    assert_eq!(data_rows(&fs::read_to_string(gen.join("results.csv")).unwrap()).len(), 4);

    let unseen = tmp.path().join("unseen");
    progsynth(&[
        "unseen-config", "--checkpoint", s(&ckpt), "--out", s(&unseen),
        "--set", "seeds=1", "--set", "fractions=[0.5]", "--set", r#"cem={"max_iters":2}"#,
    ]);
    let u = fs::read_to_string(unseen.join("unseen.csv")).unwrap();
    assert_eq!(data_rows(&u).len(), 2);
    assert!(u.lines().nth(1).unwrap().ends_with(",0.00"));
}

#[test]
fn ground_truth_generalizes_to_large_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let out = progsynth(&[
        "generalize", "--out", s(tmp.path()),
        "--set", "seeds=2", "--set", "eval_configs=3", "--set", r#"tasks=["StairClimber","Maze"]"#,
    ]);
    let rows: Vec<&str> = out
        .lines()
        .filter(|l| l.starts_with("ground-truth@") && !l.contains(",avg,"))
        .collect();
    assert_eq!(rows.len(), 4, "{out}");
    for r in rows {
        assert!(r.ends_with(",1.0000,0.0000"), "{r}");
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    let bad = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_progsynth")).args(args).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
        String::from_utf8_lossy(&out.stderr).to_string()
    };
    let tmp = tempfile::tempdir().unwrap();
    assert!(bad(&["reconstruct", "--out", s(tmp.path())]).contains("checkpoint"));
    assert!(bad(&["unseen-config", "--checkpoint", "/nonexistent", "--out", s(tmp.path())]).contains("loading"));
    bad(&["generalize", "--set", "seeds"]);
}
