#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qpoisson_core::{fixtures, Mrp};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qpoisson"));
    cmd.env_remove(qpoisson_cli::OUT_DIR_ENV);
    cmd
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_chain(dir: &Path, name: &str, mrp: &Mrp) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(&mrp.to_file()).unwrap()).unwrap();
    path
}

pub fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_chain(dir.path(), "abs4.json", &fixtures::abs4());
    write_chain(dir.path(), "swap2.json", &fixtures::swap2());
    write_chain(dir.path(), "ergodic3.json", &fixtures::ergodic3());
    dir
}

pub fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_slice(&read(dir, name)).unwrap()
}
