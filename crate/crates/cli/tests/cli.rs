use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use drivernet_cli::Cli;

fn drivernet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivernet"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DRIVERNET_DATA")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Every file under `dir` except logs, keyed by relative path.
fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.file_name().unwrap() != "log" {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A tiny dataset the miniature preset accepts.
fn tiny_data(dir: &Path, name: &str) {
    let o = drivernet(
        &["gen", "--clips", "24", "--frames", "4", "--window", "4", "--frame-size", "8", "--out", name],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn every_flag_is_documented() {
    let mut cli = Cli::command();
    cli.build();
    let names: Vec<String> = cli.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for sub in ["gen", "train", "eval", "crossval", "params", "gradcheck", "bench"] {
        assert!(names.iter().any(|n| n == sub), "missing subcommand {sub}");
    }
    for sub in cli.get_subcommands_mut() {
        let help = sub.render_long_help().to_string();
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            if long == "help" {
                continue;
            }
            let doc = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            assert!(!doc.trim().is_empty(), "{} --{long} has no help text", sub.get_name());
            assert!(help.contains(&format!("--{long}")), "{} help does not list --{long}", sub.get_name());
        }
    }
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(drivernet(&["params", "--no-such-flag"], p).status.code(), Some(1));
    assert_eq!(drivernet(&["nonsense"], p).status.code(), Some(1));
    assert_eq!(drivernet(&["params", "--model", "context", "--fusion", "cf"], p).status.code(), Some(1));
    assert_eq!(drivernet(&["params", "--model", "feature", "--agg", "ws"], p).status.code(), Some(1));
    assert_eq!(drivernet(&["params", "--agg", "max"], p).status.code(), Some(1));
    assert_eq!(drivernet(&["train", "--data", "missing"], p).status.code(), Some(1));
    tiny_data(p, "d");
    let o = drivernet(&["train", "--data", "d", "--model", "context", "--regime", "fusion", "--preset", "miniature"], p);
    assert_eq!(o.status.code(), Some(1));
    // Written at 8x8 but the paper preset expects 32x32 frames.
    let o = drivernet(&["train", "--data", "d", "--preset", "paper"], p);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(drivernet(&["crossval", "--data", "d", "--preset", "miniature", "--k", "1"], p).status.code(), Some(1));
    assert!(!p.join("runs").exists(), "validation failures must not start a run");
    assert_eq!(drivernet(&["--help"], p).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiny_data(p, "d");
    let frames = p.join("d/clips/clip_00000/frames.ctb");
    let bytes = fs::read(&frames).unwrap();
    fs::write(&frames, &bytes[..bytes.len() / 2]).unwrap();
    let o = drivernet(&["train", "--data", "d", "--preset", "miniature", "--epochs", "1"], p);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn context_params_match_published_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = drivernet(&["params", "--model", "context", "--agg", "gap"], dir.path());
    assert!(o.status.success());
    let line = stdout(&o).lines().find(|l| l.starts_with("context block")).unwrap().to_string();
    assert!(line.contains("270,338") && line.ends_with("MATCH"), "{line}");
    assert!(dir.path().join("runs/params/resolved-config.json").is_file());
}

#[test]
fn generation_is_reproducible_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let a = drivernet(&["gen", "--clips", "20", "--seed", "42", "--frame-size", "8", "--out", "a"], p);
    let b = drivernet(&["gen", "--clips", "20", "--seed", "42", "--frame-size", "8", "--out", "b", "--jobs", "4"], p);
    assert!(a.status.success() && b.status.success());
    let (mut ca, mut cb) = (contents(&p.join("a")), contents(&p.join("b")));
    ca.remove("resolved-config.json");
    cb.remove("resolved-config.json");
    assert_eq!(ca, cb);
    assert!(ca.contains_key("manifest.json") && ca.contains_key("clips/clip_00019/features.jsonl"));
    assert_eq!(drivernet(&["gen", "--clips", "20", "--out", "a"], p).status.code(), Some(1));
    assert!(drivernet(&["gen", "--clips", "20", "--frame-size", "8", "--out", "a", "--force"], p).status.success());
}

#[test]
fn train_eval_crossval_and_bench_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiny_data(p, "d");
    let common = ["--data", "d", "--preset", "miniature", "--epochs", "2", "--seed", "3"];

    let train = |out: &str| {
        let mut args = vec!["train"];
        args.extend(common);
        args.extend(["--out", out]);
        drivernet(&args, p)
    };
    assert!(train("t1").status.success());
    assert!(train("t2").status.success());
    for f in ["checkpoint.ckpt", "metrics.json", "metrics.txt", "resolved-config.json", "log"] {
        assert!(p.join("t1").join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read(p.join("t1/checkpoint.ckpt")).unwrap(), fs::read(p.join("t2/checkpoint.ckpt")).unwrap());

    let o = drivernet(&["eval", "--checkpoint", "t1/checkpoint.ckpt", "--data", "d", "--out", "e"], p);
    assert!(o.status.success());
    let trained: serde_json::Value = serde_json::from_slice(&fs::read(p.join("t1/metrics.json")).unwrap()).unwrap();
    let evald: serde_json::Value = serde_json::from_slice(&fs::read(p.join("e/metrics.json")).unwrap()).unwrap();
    assert_eq!(trained["test"]["confusion"], evald["metrics"]["confusion"]);

    let mut args = vec!["crossval"];
    args.extend(common);
    args.extend(["--k", "3", "--out", "cv"]);
    let o = drivernet(&args, p);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("fold ")).count(), 3);
    assert!(text.lines().any(|l| l.starts_with("mean ± std")));

    let o = drivernet(&["bench", "--data", "d", "--checkpoint", "t1/checkpoint.ckpt", "--clips", "3", "--repeats", "1", "--out", "b"], p);
    assert!(o.status.success());
    let text = stdout(&o);
    for s in ["cf", "af", "caf"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("drivernet-gap-{s} "))), "{text}");
    }
}

#[test]
fn gradcheck_layers_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = drivernet(&["gradcheck", "--layers-only"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("gru") && text.contains("PASS") && !text.contains("FAIL"));
}
