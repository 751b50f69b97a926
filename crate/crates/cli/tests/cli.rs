use std::path::Path;
use std::process::{Command, Output};

fn seqcritic(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcritic"))
        .args(args)
        .env("SEQCRITIC_OUT", out)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_corpus(root: &Path) -> String {
    let dir = root.join("data");
    ok(&seqcritic(
        &[
            "gen",
            "--examples",
            "120",
            "--attrs",
            "3",
            "--context-dim",
            "12",
            "--dir",
            dir.to_str().unwrap(),
        ],
        root,
    ));
    dir.to_str().unwrap().to_string()
}

const TINY: &[&str] = &[
    "--set",
    "embed_dim=8",
    "--set",
    "hidden_dim=12",
    "--set",
    "xent_epochs=2",
    "--set",
    "xent_batch=16",
    "--set",
    "rl_batch=8",
    "--set",
    "rl_max_steps=3",
    "--set",
    "rl_eval_every=2",
    "--n-schedule",
    "2:1",
];

#[test]
fn gen_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let dir = d.path().join(name);
        ok(&seqcritic(
            &["gen", "--examples", "50", "--dir", dir.to_str().unwrap()],
            d.path(),
        ));
    }
    for f in ["dataset.jsonl", "vocab.txt", "splits.json"] {
        let a = std::fs::read(d.path().join("a").join(f)).unwrap();
        let b = std::fs::read(d.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn output_root_comes_from_the_environment_unless_overridden() {
    let d = tempfile::tempdir().unwrap();
    ok(&seqcritic(&["gen", "--examples", "20"], d.path()));
    assert!(d.path().join("data/vocab.txt").exists());
    let other = d.path().join("other");
    ok(&seqcritic(
        &["--out", other.to_str().unwrap(), "gen", "--examples", "20"],
        d.path(),
    ));
    assert!(other.join("data/vocab.txt").exists());
}

#[test]
fn input_errors_exit_with_code_two() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nowhere");
    let o = seqcritic(&["train", "--data", missing.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));

    let data = small_corpus(d.path());
    let o = seqcritic(
        &["train", "--data", &data, "--n-schedule", "1:3,zz:9"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zz:9"), "{}", stderr(&o));

    let o = seqcritic(&["train", "--data", &data, "--set", "colour=red"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));

    let o = seqcritic(&["train", "--data", &data, "--phase", "rl"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cross-entropy"), "{}", stderr(&o));

    let o = seqcritic(
        &["compare", "--baseline", "x", "--candidate", "y"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(2));

    let o = seqcritic(&["frobnicate"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn k_with_maxpro_warns() {
    let d = tempfile::tempdir().unwrap();
    let data = small_corpus(d.path());
    let mut args = vec![
        "train",
        "--data",
        &data,
        "--phase",
        "xent",
        "--estimator",
        "maxpro",
        "--K",
        "5",
    ];
    args.extend_from_slice(TINY);
    let o = seqcritic(&args, d.path());
    ok(&o);
    assert!(stderr(&o).contains("K is ignored"));
}

#[test]
fn train_eval_advstats_compare_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let data = small_corpus(d.path());
    let run = d.path().join("run");
    let cfg = d.path().join("exp.cfg");
    std::fs::write(&cfg, "# tiny run\nestimator = krollout\nk = 2\nseed = 4\n").unwrap();
    let mut args = vec![
        "train",
        "--data",
        &data,
        "--config",
        cfg.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    let summary: serde_json::Value =
        serde_json::from_str(&ok(&seqcritic(&args, d.path()))).unwrap();
    assert!(summary["rl_final_val_cider"].is_number());
    for f in [
        "manifest.json",
        "run.csv",
        "steps.csv",
        "summary.json",
        "xent_best.ckpt",
        "xent_last.ckpt",
        "rl_final.ckpt",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert!(manifest["build_id"]
        .as_str()
        .unwrap()
        .starts_with("seqcritic "));
    let run_csv = std::fs::read_to_string(run.join("run.csv")).unwrap();
    assert!(run_csv.starts_with(&format!(
        "# config_hash={}",
        manifest["config_hash"].as_str().unwrap()
    )));
    assert!(run_csv.contains("krollout(K=2)"));

    let ckpt = run.join("rl_final.ckpt");
    let report: serde_json::Value = serde_json::from_str(&ok(&seqcritic(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            &data,
            "--split",
            "test",
        ],
        d.path(),
    )))
    .unwrap();
    assert_eq!(report["bleu"].as_array().unwrap().len(), 4);

    let csv = d.path().join("adv.csv");
    ok(&seqcritic(
        &[
            "advstats",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            &data,
            "--examples",
            "6",
            "--rollouts",
            "4",
            "--K",
            "2",
            "--csv",
            csv.to_str().unwrap(),
        ],
        d.path(),
    ));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    // 4 values of n, 2 estimators, one row per timestep 1..=max_len (16)
    assert_eq!(rows, 4 * 2 * 16);

    let out: serde_json::Value = serde_json::from_str(&ok(&seqcritic(
        &[
            "compare",
            "--baseline",
            run.to_str().unwrap(),
            "--candidate",
            run.to_str().unwrap(),
        ],
        d.path(),
    )))
    .unwrap();
    assert_eq!(out["mean_delta"], 0.0);
    let table = std::fs::read_to_string(d.path().join("compare.csv")).unwrap();
    for line in table.lines().skip(2) {
        assert_eq!(line.rsplit(',').next(), Some("0"), "{line}");
    }
}

#[test]
fn rerun_from_manifest_reproduces_the_run_record() {
    let d = tempfile::tempdir().unwrap();
    let data = small_corpus(d.path());
    let first = d.path().join("first");
    let mut args = vec![
        "train",
        "--data",
        &data,
        "--run-dir",
        first.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    ok(&seqcritic(&args, d.path()));
    let second = d.path().join("second");
    ok(&seqcritic(
        &[
            "--threads",
            "1",
            "train",
            "--manifest",
            first.join("manifest.json").to_str().unwrap(),
            "--run-dir",
            second.to_str().unwrap(),
        ],
        d.path(),
    ));
    let masked = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
            .collect()
    };
    assert_eq!(
        masked(&first.join("run.csv")),
        masked(&second.join("run.csv"))
    );
    assert_eq!(
        std::fs::read(first.join("steps.csv")).unwrap(),
        std::fs::read(second.join("steps.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(first.join("rl_final.ckpt")).unwrap(),
        std::fs::read(second.join("rl_final.ckpt")).unwrap()
    );
}
