//! Reading raw interaction logs.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use bmlp_core::data::InteractionRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Tsv,
    Csv,
}

impl Format {
    fn delimiter(self) -> u8 {
        match self {
            Format::Tsv => b'\t',
            Format::Csv => b',',
        }
    }
}

/// Zero-based column of each field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Columns {
    pub user: usize,
    pub item: usize,
    pub behavior: usize,
    pub timestamp: usize,
}

impl Default for Columns {
    fn default() -> Self {
        Columns {
            user: 0,
            item: 1,
            behavior: 2,
            timestamp: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestOptions {
    pub format: Format,
    pub has_header: bool,
    pub columns: Columns,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Malformed {
    /// One-based line number in the file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested {
    pub records: Vec<InteractionRecord>,
    pub malformed: Vec<Malformed>,
}

/// Share of malformed lines above which ingestion fails.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

const SHOWN_OFFENDERS: usize = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} has {bad} malformed lines out of {total}; first offenders: {}", path.display(), list(shown))]
    TooManyMalformed {
        path: PathBuf,
        bad: usize,
        total: usize,
        shown: Vec<Malformed>,
    },
}

fn list(m: &[Malformed]) -> String {
    m.iter().map(|m| format!("line {} ({})", m.line, m.reason)).collect::<Vec<_>>().join("; ")
}

fn parse_row(row: &csv::StringRecord, cols: &Columns) -> Result<InteractionRecord, String> {
    let field = |k: usize, name: &str| -> Result<String, String> {
        match row.get(k).map(str::trim) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            Some(_) => Err(format!("empty {name}")),
            None => Err(format!("missing {name} column {k}")),
        }
    };
    let ts = field(cols.timestamp, "timestamp")?;
    let timestamp = ts.parse::<u64>().map_err(|_| format!("timestamp `{ts}` is not a non-negative integer"))?;
    Ok(InteractionRecord {
        user: field(cols.user, "user")?,
        item: field(cols.item, "item")?,
        behavior: field(cols.behavior, "behavior")?,
        timestamp,
    })
}

/// Parses records in file order. Blank lines are ignored; any other line
/// that does not parse is counted as malformed and skipped.
pub fn ingest_reader<R: Read>(src: R, path: &Path, opts: &IngestOptions) -> Result<Ingested, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.format.delimiter())
        .has_headers(opts.has_header)
        .flexible(true)
        .quoting(opts.format == Format::Csv)
        .from_reader(src);
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => match parse_row(&row, &opts.columns) {
                Ok(r) => records.push(r),
                Err(reason) => malformed.push(Malformed {
                    line: row.position().map_or(line, |p| p.line()),
                    reason,
                }),
            },
            Err(e) => match e.kind() {
                csv::ErrorKind::Io(_) => {
                    let csv::ErrorKind::Io(source) = e.into_kind() else { unreachable!() };
                    return Err(IngestError::Io {
                        path: path.to_path_buf(),
                        source,
                    });
                }
                _ => malformed.push(Malformed {
                    line: e.position().map_or(line, |p| p.line()),
                    reason: e.to_string(),
                }),
            },
        }
    }
    let total = records.len() + malformed.len();
    if malformed.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(IngestError::TooManyMalformed {
            path: path.to_path_buf(),
            bad: malformed.len(),
            total,
            shown: malformed.iter().take(SHOWN_OFFENDERS).cloned().collect(),
        });
    }
    Ok(Ingested { records, malformed })
}

pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Ingested, IngestError> {
    let f = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ingest_reader(std::io::BufReader::new(f), path, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str, opts: &IngestOptions) -> Result<Ingested, IngestError> {
        ingest_reader(text.as_bytes(), Path::new("mem"), opts)
    }

    #[test]
    fn three_lines() {
        let got = run("u1\ti1\tclick\t5\nu1\ti2\tbuy\t6\nu2\ti1\tbuy\t7\n", &IngestOptions::default()).unwrap();
        assert_eq!(got.records.len(), 3);
        assert!(got.malformed.is_empty());
        assert_eq!(got.records[1].item, "i2");
        assert_eq!(got.records[2].timestamp, 7);
    }

    #[test]
    fn bad_timestamp_is_skipped_and_counted() {
        let mut text = String::new();
        for k in 0..200 {
            text.push_str(&format!("u{k}\ti\tbuy\t{k}\n"));
        }
        text.push_str("ux\ti\tbuy\tnoon\n");
        let got = run(&text, &IngestOptions::default()).unwrap();
        assert_eq!(got.records.len(), 200);
        assert_eq!(got.malformed.len(), 1);
        assert_eq!(got.malformed[0].line, 201);
    }

    #[test]
    fn too_many_malformed_lists_offenders() {
        let text = (0..30).map(|k| format!("u\ti\tbuy\t{}\n", if k % 2 == 0 { "x" } else { "1" })).collect::<String>();
        let err = run(&text, &IngestOptions::default()).unwrap_err();
        match &err {
            IngestError::TooManyMalformed { bad, total, shown, .. } => {
                assert_eq!((*bad, *total, shown.len()), (15, 30, 10));
                assert_eq!(shown[0].line, 1);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(err.to_string().contains("line 19"));
    }

    #[test]
    fn csv_with_header_and_remapped_columns() {
        let opts = IngestOptions {
            format: Format::Csv,
            has_header: true,
            columns: Columns {
                timestamp: 0,
                user: 1,
                behavior: 2,
                item: 3,
            },
        };
        let got = run("ts,user,behavior,item\n9,\"u,1\",buy,i7\n", &opts).unwrap();
        assert_eq!(
            got.records,
            vec![InteractionRecord {
                user: "u,1".into(),
                item: "i7".into(),
                behavior: "buy".into(),
                timestamp: 9,
            }]
        );
    }

    #[test]
    fn missing_file_names_path() {
        let err = ingest(Path::new("/nonexistent/x.tsv"), &IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.tsv"));
    }
}
