#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_rb-e2e");

/// Runs the binary in `cwd` with `RB_E2E_SEED` cleared unless given in `env`.
pub fn run_env(cwd: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(cwd).args(args).env_remove("RB_E2E_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn run(cwd: &Path, args: &[&str]) -> Output {
    run_env(cwd, args, &[])
}

pub fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = run(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Relative path to contents for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// A small synthetic panel and a matching config in `dir`.
pub fn small_workspace(dir: &Path) {
    ok(
        dir,
        &[
            "synth", "--out", "data", "--assets", "4", "--days", "700", "--seed", "3",
        ],
    );
    std::fs::write(
        dir.join("config.json"),
        r#"{
  "split_fractions": [0.5, 0.2],
  "feature_lookback": 30,
  "cov_window": 60,
  "hidden_neurons": 4
}
"#,
    )
    .unwrap();
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
