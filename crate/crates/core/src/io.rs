//! Record ingestion (JSONL, CSV) and atomic output writing.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::Record;
use crate::error::{Error, Result};

/// Records loaded from a file, with the number of unrecognized fields that were skipped.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub records: Vec<Record>,
    pub unknown_fields: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Reads records, choosing the format by extension (`.csv` is CSV, anything else JSONL).
pub fn read_records(path: &Path) -> Result<Loaded> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let loaded = if is_csv {
        read_csv(path)?
    } else {
        read_jsonl(path)?
    };
    let mut seen = HashSet::with_capacity(loaded.records.len());
    for rec in &loaded.records {
        rec.validate()?;
        if !seen.insert(rec.id.as_str()) {
            return Err(Error::input(format!("duplicate record id {:?}", rec.id)));
        }
    }
    Ok(loaded)
}

pub fn read_jsonl(path: &Path) -> Result<Loaded> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Loaded::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| parse_err(path, idx + 1, e))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(path, idx + 1, "expected a JSON object"))?;
        out.unknown_fields += obj
            .keys()
            .filter(|k| !Record::FIELDS.contains(&k.as_str()))
            .count();
        let rec: Record = serde_json::from_value(value).map_err(|e| parse_err(path, idx + 1, e))?;
        out.records.push(rec);
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Loaded> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, 0, e))?;
    let headers = reader.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let known = [
        "id",
        "group_label",
        "uncertainty",
        "loss",
        "thinking_answer",
        "cheap_answer",
        "gold_answer",
        "tokens_thinking",
        "tokens_cheap",
    ];
    let unknown_cols = headers
        .iter()
        .filter(|h| !known.contains(&h.trim()))
        .count();
    let id_col = col("id").ok_or_else(|| parse_err(path, 1, "missing `id` column"))?;
    let u_col =
        col("uncertainty").ok_or_else(|| parse_err(path, 1, "missing `uncertainty` column"))?;
    let cols: Vec<Option<usize>> = known[3..].iter().map(|n| col(n)).collect();
    let group_col = col("group_label");

    let mut out = Loaded::default();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| parse_err(path, line, e))?;
        let text = |c: Option<usize>| {
            c.and_then(|c| row.get(c))
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
        };
        let num = |c: Option<usize>, name: &str| -> Result<Option<f64>> {
            text(c)
                .map(|s| s.parse::<f64>())
                .transpose()
                .map_err(|e| parse_err(path, line, format!("{name}: {e}")))
        };
        let count = |c: Option<usize>, name: &str| -> Result<Option<u64>> {
            text(c)
                .map(|s| s.parse::<u64>())
                .transpose()
                .map_err(|e| parse_err(path, line, format!("{name}: {e}")))
        };
        let uncertainty = num(Some(u_col), "uncertainty")?
            .ok_or_else(|| parse_err(path, line, "empty uncertainty"))?;
        out.records.push(Record {
            id: text(Some(id_col)).ok_or_else(|| parse_err(path, line, "empty id"))?,
            group_label: text(group_col),
            uncertainty,
            loss: num(cols[0], "loss")?,
            thinking_answer: text(cols[1]),
            cheap_answer: text(cols[2]),
            gold_answer: text(cols[3]),
            thinking_embedding: None,
            cheap_embedding: None,
            tokens_thinking: count(cols[4], "tokens_thinking")?,
            tokens_cheap: count(cols[5], "tokens_cheap")?,
        });
        out.unknown_fields += unknown_cols;
    }
    Ok(out)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so a failed run never leaves a partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir: PathBuf = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut bytes, row).expect("rows serialize");
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}
