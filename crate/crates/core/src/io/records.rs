//! Tab-separated per-pair result records with a header line.

use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::PairRecord;

use super::{read_bytes, write_bytes, Lines};

pub fn format_records<'a>(records: impl IntoIterator<Item = &'a PairRecord>) -> String {
    let mut s = PairRecord::tsv_header();
    s.push('\n');
    for r in records {
        s.push_str(&r.to_tsv());
        s.push('\n');
    }
    s
}

pub fn write_records<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a PairRecord>,
) -> Result<()> {
    write_bytes(path, format_records(records).as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<PairRecord>> {
    parse_records(&read_bytes(path)?, path)
}

/// Parses a records file; blank lines are skipped and the header must match.
pub fn parse_records(bytes: &[u8], path: &Path) -> Result<Vec<PairRecord>> {
    let err = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    };
    let mut lines = Lines::new(bytes, path)?;
    match lines.next_line() {
        Some((_, h)) if h == PairRecord::tsv_header() => {}
        Some((off, _)) => return Err(err(off, "header does not match the records format".into())),
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    while let Some((off, line)) = lines.next_line() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(PairRecord::from_tsv(line).map_err(|m| err(off, m))?);
    }
    Ok(out)
}
