use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use treeqn_cli::dump::validate;

fn treeqn(runs: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeqn"))
        .args(args)
        .env("TREEQN_RUNS_DIR", runs)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn missing_required_key_exits_with_two() {
    let runs = tempfile::tempdir().unwrap();
    let o = treeqn(
        runs.path(),
        &["train", "--arch", "dqn", "--transitions", "80"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("missing config key `seed`"),
        "{}",
        stderr(&o)
    );

    let o = treeqn(
        runs.path(),
        &[
            "train",
            "--arch",
            "dqn",
            "--seed",
            "0",
            "--transitions",
            "80",
            "-o",
            "lamda=1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lamda"));
}

#[test]
fn train_resume_eval_inspect() {
    let runs = tempfile::tempdir().unwrap();
    let cfg = runs.path().join("d2.toml");
    fs::write(
        &cfg,
        "arch = \"treeqn-d2\"\nseed = 4\ntransitions = 400\nlambda = 0.5\nlog_every = 1\n",
    )
    .unwrap();
    let o = treeqn(
        runs.path(),
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "-o",
            "lambda=1.0",
            "--quiet",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let dir = runs.path().join("treeqn-d2-seed4");
    let snapshot = fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(snapshot.contains("lambda = 1.0"), "{snapshot}");
    assert_eq!(
        fs::read_to_string(dir.join("config.source.toml")).unwrap(),
        fs::read_to_string(&cfg).unwrap()
    );
    assert!(fs::read_to_string(dir.join("version.txt"))
        .unwrap()
        .starts_with("treeqn 0."));
    assert_eq!(rows(&dir.join("metrics.csv")), 5);

    // A second fresh run must not clobber the first.
    let again = ["train", "--config", cfg.to_str().unwrap(), "--quiet"];
    assert_eq!(treeqn(runs.path(), &again).status.code(), Some(2));
    let forced = treeqn(
        runs.path(),
        &[&again[..], &["-o", "lambda=1.0", "--force"]].concat(),
    );
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert_eq!(rows(&dir.join("metrics.csv")), 5);

    let ckpt = dir.join("final.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let o = treeqn(
        runs.path(),
        &["train", "--resume", ckpt, "--transitions", "800", "--quiet"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rows(&dir.join("metrics.csv")), 10);

    let o = treeqn(
        runs.path(),
        &["eval", ckpt, "--episodes", "3", "--seed", "9"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("eval-seed9.json")).unwrap()).unwrap();
    assert_eq!(report["returns"].as_array().unwrap().len(), 3);
    assert_eq!(report["arch"], "treeqn-d2");
    assert_eq!(
        treeqn(
            runs.path(),
            &["eval", ckpt, "--episodes", "1", "--arch", "a2c"]
        )
        .status
        .code(),
        Some(2)
    );

    let out = runs.path().join("tree.json");
    let o = treeqn(
        runs.path(),
        &[
            "inspect",
            ckpt,
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let d = validate(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((d.depth, d.node_count), (2, 20));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with(&d.board));

    let board = runs.path().join("board.txt");
    fs::write(&board, "# hand-made\n........\n.A.B....\n........\n...G....\n........\n........\n........\n........\n").unwrap();
    let o = treeqn(
        runs.path(),
        &[
            "inspect",
            ckpt,
            "--board",
            board.to_str().unwrap(),
            "--latents",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let json = &text[text.find('{').unwrap()..];
    assert!(validate(json).unwrap().root.z.is_some());
}

#[test]
fn inspect_refuses_non_tree_checkpoints() {
    let runs = tempfile::tempdir().unwrap();
    let o = treeqn(
        runs.path(),
        &[
            "train",
            "--arch",
            "dqn",
            "--seed",
            "1",
            "--transitions",
            "80",
            "--quiet",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = runs.path().join("dqn-seed1/final.ckpt");
    let o = treeqn(
        runs.path(),
        &["inspect", ckpt.to_str().unwrap(), "--seed", "0"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_gradcheck_scope_is_a_usage_error() {
    let runs = tempfile::tempdir().unwrap();
    assert_eq!(
        treeqn(runs.path(), &["gradcheck", "--scope", "everything"])
            .status
            .code(),
        Some(2)
    );
}
