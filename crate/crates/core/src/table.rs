//! Versioned CSV tables.
//!
//! Every table starts with a `# <schema> v<version>` line followed by a fixed
//! header row. Readers skip the first line as a comment.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub fn write_table<T: Serialize, W: Write>(mut out: W, schema: &str, header: &[&str], rows: &[T]) -> Result<()> {
    writeln!(out, "# {schema} v{CSV_SCHEMA_VERSION}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table`]; returns the schema line and rows.
pub fn read_table<T: DeserializeOwned, R: Read>(input: R) -> Result<(String, Vec<T>)> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let schema = first.trim_start_matches('#').trim().to_string();
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((schema, rows))
}
