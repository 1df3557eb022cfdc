use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mctm::io::{read_corpus, read_labels, read_scores, ModelFile};
use serde_json::Value;

const ENV_VARS: [&str; 7] = [
    "MCTM_CONFIG",
    "MCTM_EVENTS",
    "MCTM_TRAIN_CORPUS",
    "MCTM_MODEL",
    "MCTM_TEST_CORPUS",
    "MCTM_SCORES",
    "MCTM_LABELS",
];

fn mctm_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mctm"));
    cmd.current_dir(dir).args(args);
    for v in ENV_VARS {
        cmd.env_remove(v);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn mctm(dir: &Path, args: &[&str]) -> Output {
    mctm_env(dir, args, &[])
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mctm(dir, args);
    assert!(
        out.status.success(),
        "mctm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Small training corpus plus a 40-document test stream with anomalies.
fn fixture(dir: &Path) {
    ok(
        dir,
        &[
            "generate", "--vocab", "30", "--topics", "3", "--behaviours", "2", "--docs", "60", "--doc-length", "25",
            "--test-docs", "40", "--test-out", "test.txt", "--anomaly-rate", "0.1", "--seed", "3", "--out", "train.txt",
        ],
    );
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    for f in ["train.txt", "train.truth.json", "test.txt", "test.labels", "test.truth.json"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    assert_eq!(read_labels(&d.join("test.labels")).unwrap().iter().filter(|l| **l).count(), 4);

    ok(d, &["train", "--corpus", "train.txt", "--topics", "3", "--behaviours", "2", "--out", "m.json"]);
    let meta = json_file(&d.join("m.meta.json"));
    assert_eq!(meta["iterations"], 100);
    assert_eq!(meta["algorithm"], "em");

    ok(
        d,
        &["score", "--model", "m.json", "--corpus", "test.txt", "--train-corpus", "train.txt", "--top-n", "3", "--out", "s.tsv"],
    );
    let scores = read_scores(&d.join("s.tsv")).unwrap();
    assert_eq!(scores.len(), 40);
    assert!(scores.iter().all(|r| r.score.is_finite() && r.localisation.len() == 3));
    assert_eq!(fs::read_to_string(d.join("s.timing")).unwrap().lines().count(), 41);

    let out = ok(d, &["eval", "--scores", "s.tsv", "--labels", "test.labels", "--threshold", "-3.5", "--curve-out", "pr.csv"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let auc = report["mean_auc_pr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(report["runs"][0]["accuracy"].is_number());
    assert!(fs::read_to_string(d.join("pr.csv")).unwrap().starts_with("recall,precision\n"));

    let out = ok(
        d,
        &["localise", "--model", "m.json", "--corpus", "test.txt", "--truth", "test.truth.json", "--truth-fraction", "0.45"],
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 41);
    let recall: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(recall["abnormal_documents"], 4);
}

#[test]
fn same_seed_gives_identical_files() {
    let runs: Vec<(tempfile::TempDir, Vec<Vec<u8>>)> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let d = tmp.path();
            fixture(d);
            ok(d, &["train", "--corpus", "train.txt", "--topics", "3", "--behaviours", "2", "--algo", "vb", "--out", "m.json"]);
            ok(d, &["score", "--model", "m.json", "--corpus", "test.txt", "--approx", "mc", "--mc-samples", "7", "--out", "s.tsv"]);
            let bytes = ["train.txt", "test.txt", "test.labels", "m.json", "s.tsv"]
                .iter()
                .map(|f| fs::read(d.join(f)).unwrap())
                .collect();
            (tmp, bytes)
        })
        .collect();
    assert_eq!(runs[0].1, runs[1].1);
}

/// Every learner, prior and approximation combination trains and scores.
#[test]
fn learner_prior_approximation_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let mut combos = 0;
    for prior in ["1", "H", "H+1"] {
        for algo in ["em", "vb", "gs"] {
            let model = format!("{algo}-{prior}.json");
            let mut args = vec![
                "train", "--corpus", "train.txt", "--topics", "3", "--behaviours", "2", "--algo", algo, "--prior", prior,
                "--iters", "30", "--out", &model,
            ];
            if algo == "gs" {
                args.extend(["--samples", "100", "--burn-in", "5", "--spacing", "1"]);
            }
            ok(d, &args);
            let approximations: &[(&str, &str)] = if algo == "em" {
                &[("plugin", "1")]
            } else {
                &[("plugin", "1"), ("mc", "5"), ("mc", "100")]
            };
            for (approx, samples) in approximations {
                let scores = format!("{algo}-{prior}-{approx}{samples}.tsv");
                ok(
                    d,
                    &[
                        "score", "--model", &model, "--corpus", "test.txt", "--train-corpus", "train.txt", "--approx", approx,
                        "--mc-samples", samples, "--out", &scores,
                    ],
                );
                let out = ok(d, &["eval", "--scores", &scores, "--labels", "test.labels"]);
                let report: Value = serde_json::from_slice(&out.stdout).unwrap();
                let auc = report["mean_auc_pr"].as_f64().unwrap();
                assert!((0.0..=1.0).contains(&auc), "{scores}: {auc}");
                combos += 1;
            }
        }
    }
    assert_eq!(combos, 21);
}

#[test]
fn monte_carlo_needs_a_posterior() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    ok(d, &["train", "--corpus", "train.txt", "--topics", "2", "--behaviours", "2", "--iters", "5", "--out", "m.json"]);
    let out = mctm(d, &["score", "--model", "m.json", "--corpus", "test.txt", "--approx", "mc", "--out", "s.tsv"]);
    assert_eq!(code(&out), 2);
    assert!(!d.join("s.tsv").exists());
}

#[test]
fn multiple_runs_write_one_model_each() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    ok(
        d,
        &[
            "train", "--corpus", "train.txt", "--topics", "3", "--behaviours", "2", "--iters", "10", "--runs", "3",
            "--jobs", "2", "--restarts", "2", "--out", "m.json",
        ],
    );
    let summary = json_file(&d.join("m.summary.json"));
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);
    let mut score_files = Vec::new();
    for r in 0..3 {
        let model = format!("m.run{r:02}.json");
        assert_eq!(json_file(&d.join(format!("m.run{r:02}.meta.json")))["restarts"], 2);
        let scores = format!("s{r}.tsv");
        ok(d, &["score", "--model", &model, "--corpus", "test.txt", "--out", &scores]);
        score_files.push(scores);
    }
    let mut args = vec!["eval", "--labels", "test.labels", "--scores"];
    args.extend(score_files.iter().map(String::as_str));
    let report: Value = serde_json::from_slice(&ok(d, &args).stdout).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    let min = report["min_auc_pr"].as_f64().unwrap();
    let mean = report["mean_auc_pr"].as_f64().unwrap();
    assert!(min <= mean && mean <= report["max_auc_pr"].as_f64().unwrap());
}

#[test]
fn flags_override_config_and_config_fills_the_rest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    fs::write(
        d.join("c.toml"),
        "[train]\ncorpus = \"train.txt\"\ntopics = 4\nbehaviours = 3\niters = 7\nalgo = \"vb\"\nout = \"cfg.json\"\n",
    )
    .unwrap();
    ok(d, &["--config", "c.toml", "train", "--topics", "2"]);
    let model = ModelFile::load(&d.join("cfg.json")).unwrap();
    assert_eq!(model.spec().num_topics, 2);
    assert_eq!(model.spec().num_behaviours, 3);
    assert_eq!(json_file(&d.join("cfg.meta.json"))["iterations"], 7);

    let env_out = mctm_env(d, &["train", "--iters", "3"], &[("MCTM_CONFIG", "c.toml")]);
    assert!(env_out.status.success());
    assert_eq!(json_file(&d.join("cfg.meta.json"))["iterations"], 3);

    fs::write(d.join("bad.toml"), "[train]\ntopcs = 4\n").unwrap();
    let out = mctm(d, &["--config", "bad.toml", "train", "--corpus", "train.txt", "--out", "x.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("topcs"));
}

#[test]
fn environment_supplies_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let env = [
        ("MCTM_TRAIN_CORPUS", "train.txt"),
        ("MCTM_MODEL", "env.json"),
        ("MCTM_TEST_CORPUS", "test.txt"),
        ("MCTM_SCORES", "env.tsv"),
        ("MCTM_LABELS", "test.labels"),
    ];
    assert!(mctm_env(d, &["train", "--topics", "2", "--behaviours", "2", "--iters", "5"], &env).status.success());
    assert!(d.join("env.json").exists());
    assert!(mctm_env(d, &["score"], &env).status.success());
    assert_eq!(read_scores(&d.join("env.tsv")).unwrap().len(), 40);
    assert!(mctm_env(d, &["eval", "--scores", "env.tsv"], &env).status.success());

    // a flag beats the environment
    assert!(mctm_env(d, &["score", "--out", "flag.tsv"], &env).status.success());
    assert!(d.join("flag.tsv").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    assert_eq!(code(&mctm(d, &["train", "--bogus"])), 2);
    assert_eq!(code(&mctm(d, &["train", "--out", "m.json"])), 2);
    assert_eq!(code(&mctm(d, &["train", "--corpus", "missing.txt", "--out", "m.json"])), 3);
    assert_eq!(code(&mctm(d, &["train", "--corpus", "train.txt", "--restarts", "0", "--out", "m.json"])), 2);
    assert_eq!(
        code(&mctm(d, &["train", "--corpus", "train.txt", "--algo", "gs", "--restarts", "3", "--out", "m.json"])),
        2
    );

    fs::write(d.join("words.txt"), "1 2 three\n").unwrap();
    assert_eq!(code(&mctm(d, &["train", "--corpus", "words.txt", "--out", "m.json"])), 3);

    ok(d, &["train", "--corpus", "train.txt", "--topics", "2", "--behaviours", "2", "--iters", "5", "--out", "m.json"]);
    fs::write(d.join("wide.txt"), "1 2 99\n").unwrap();
    assert_eq!(code(&mctm(d, &["score", "--model", "m.json", "--corpus", "wide.txt", "--out", "s.tsv"])), 3);
    fs::write(d.join("short.labels"), "1\n0\n").unwrap();
    ok(d, &["score", "--model", "m.json", "--corpus", "test.txt", "--out", "s.tsv"]);
    assert_eq!(code(&mctm(d, &["eval", "--scores", "s.tsv", "--labels", "short.labels"])), 3);

    let mut model = json_file(&d.join("m.json"));
    model["params"]["pi"] = serde_json::json!([f64::MAX, 1.0]);
    fs::write(d.join("broken.json"), model.to_string()).unwrap();
    let out = mctm(d, &["score", "--model", "broken.json", "--corpus", "test.txt", "--out", "s.tsv"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn featurize_builds_clip_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut csv = String::from("frame,cell_x,cell_y,dir\n");
    // 10 fps, 1 s clips: clip 0 has 25 events, clip 1 has 3, clip 2 has 30
    for i in 0..25 {
        csv.push_str(&format!("{},{},{},up\n", i * 10 / 25, i % 5, 1));
    }
    for i in 0..3 {
        csv.push_str(&format!("{},0,0,left\n", 10 + i));
    }
    for i in 0..30 {
        csv.push_str(&format!("{},{},2,{}\n", 20 + i / 3, i % 4, i % 4));
    }
    fs::write(d.join("events.csv"), csv).unwrap();
    ok(d, &["featurize", "--events", "events.csv", "--fps", "10", "--out", "clips.txt"]);
    let corpus = read_corpus(&d.join("clips.txt"), Some(6480)).unwrap();
    assert_eq!(corpus.num_docs(), 2);
    assert_eq!(corpus.docs()[0].len(), 25);
    assert_eq!(corpus.docs()[1].len(), 30);
    assert_eq!(fs::read_to_string(d.join("clips.index")).unwrap(), "0\n2\n");

    assert_eq!(code(&mctm(d, &["featurize", "--events", "events.csv", "--out", "x.txt"])), 2);
    let env = [("MCTM_EVENTS", "events.csv")];
    assert!(mctm_env(d, &["featurize", "--fps", "10", "--min-words", "1", "--out", "all.txt"], &env).status.success());
    assert_eq!(read_corpus(&d.join("all.txt"), None).unwrap().num_docs(), 3);

    fs::write(d.join("unordered.csv"), "5,0,0,up\n4,0,0,up\n").unwrap();
    assert_eq!(code(&mctm(d, &["featurize", "--events", "unordered.csv", "--fps", "10", "--out", "u.txt"])), 3);
}
