//! Structured-line (JSONL) persistence with a schema-versioned header line.
//!
//! Every artifact file this crate reads or writes is UTF-8, one JSON object
//! per line, with a first line of the form `{"schema":"nla-<name>/<version>"}`
//! (plus format-specific header fields). Loading a file whose schema name
//! matches but whose version differs fails with a version error rather than
//! misreading newer data.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{NlaError, Result};

/// Writes `header` then one line per record to `path`, replacing any
/// existing file.
pub fn write_jsonl<H, T>(path: &Path, header: &H, records: &[T]) -> Result<()>
where
    H: Serialize,
    T: Serialize,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| NlaError::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| NlaError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| NlaError::io(path, e);
    let line = serde_json::to_string(header)
        .map_err(|e| NlaError::parse(path, format!("header serialization: {e}")))?;
    writeln!(w, "{line}").map_err(io_err)?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| NlaError::parse(path, format!("record serialization: {e}")))?;
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a JSONL file written by [`write_jsonl`], returning the parsed
/// header and records. `expected_schema` is the full `name/version` tag
/// this build understands.
pub fn read_jsonl<H, T>(path: &Path, expected_schema: &str) -> Result<(H, Vec<T>)>
where
    H: DeserializeOwned,
    T: DeserializeOwned,
{
    let file = File::open(path).map_err(|e| NlaError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| NlaError::io(path, e))?,
        None => {
            return Err(NlaError::parse(
                path,
                "empty file, expected a schema header line",
            ))
        }
    };
    if header_line.trim().is_empty() {
        return Err(NlaError::parse(
            path,
            "empty file, expected a schema header line",
        ));
    }
    check_schema(path, &header_line, expected_schema)?;
    let header: H = serde_json::from_str(&header_line)
        .map_err(|e| NlaError::parse(path, format!("header line: {e}")))?;

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| NlaError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| NlaError::parse(path, format!("line {}: {e}", idx + 1)))?;
        records.push(record);
    }
    Ok((header, records))
}

fn check_schema(path: &Path, header_line: &str, expected: &str) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct SchemaOnly {
        schema: String,
    }
    let found: SchemaOnly = serde_json::from_str(header_line)
        .map_err(|e| NlaError::parse(path, format!("header line: {e}")))?;
    if found.schema == expected {
        return Ok(());
    }
    let expected_name = expected.split('/').next().unwrap_or(expected);
    let found_name = found.schema.split('/').next().unwrap_or(&found.schema);
    if found_name == expected_name {
        Err(NlaError::parse(
            path,
            format!(
                "unsupported schema version {:?}; this build reads {:?}",
                found.schema, expected
            ),
        ))
    } else {
        Err(NlaError::parse(
            path,
            format!(
                "wrong file type: found schema {:?}, expected {:?}",
                found.schema, expected
            ),
        ))
    }
}
