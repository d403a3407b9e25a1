//! Report and plot-data files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bmlp_core::eval::{EvalReport, TimingCurve};
use serde::Serialize;

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn report_path(dir: &Path, report: &EvalReport) -> PathBuf {
    dir.join(format!("report_{}.json", report.group))
}

pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<Vec<PathBuf>> {
    reports
        .iter()
        .map(|r| {
            let p = report_path(dir, r);
            write_json(&p, r)?;
            Ok(p)
        })
        .collect()
}

/// Two whitespace-separated columns, `L mean_ms`, with a comment header.
pub fn timing_dat(curve: &TimingCurve) -> String {
    let mut s = String::from("# L mean_ms\n");
    for p in &curve.points {
        writeln!(s, "{} {}", p.len, p.mean_ms).expect("string write");
    }
    s
}

pub fn write_timing(dir: &Path, stem: &str, curve: &TimingCurve) -> Result<()> {
    write_json(&dir.join(format!("{stem}.json")), curve)?;
    let p = dir.join(format!("{stem}.dat"));
    std::fs::write(&p, timing_dat(curve)).with_context(|| format!("writing {}", p.display()))
}
