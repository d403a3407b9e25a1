#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bmlp::commands;
use bmlp::config::{Overrides, RunConfig};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/mini")
        .canonicalize()
        .expect("fixture directory")
}

/// The committed fixture config with its outputs redirected to `out`.
pub fn fixture_config(out: &Path) -> RunConfig {
    RunConfig::load(
        &fixture_dir().join("config.toml"),
        &Overrides {
            out: Some(out.to_path_buf()),
            ..Overrides::default()
        },
    )
    .expect("fixture config")
}

/// Preprocesses the fixture into `dir` and returns a config that reads the
/// splits from there and writes to `out`.
pub fn preprocessed(dir: &Path, out: &Path) -> RunConfig {
    let pre = fixture_config(dir);
    commands::preprocess(&pre).expect("preprocess fixture");
    let mut cfg = fixture_config(out);
    cfg.data.split_dir = Some(dir.to_path_buf());
    cfg
}

pub fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}
