//! NDJSON transition streams: one JSON record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::TransitionRecord;

pub fn write_ndjson<W: Write>(mut w: W, records: &[TransitionRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a full stream, reporting the 1-based line number of any malformed record.
pub fn read_ndjson<R: BufRead>(r: R) -> Result<Vec<TransitionRecord>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|source| Error::MalformedLine {
                line: idx + 1,
                source,
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_ndjson_file(path: impl AsRef<Path>, records: &[TransitionRecord]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_ndjson(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn read_ndjson_file(path: impl AsRef<Path>) -> Result<Vec<TransitionRecord>> {
    let file = File::open(path)?;
    read_ndjson(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ActionId, Observation};

    fn rec(x: f64, q: f64) -> TransitionRecord {
        let obs = Observation::new(vec![x]).unwrap();
        TransitionRecord::new(obs.clone(), ActionId(0), 1.0, obs, q, false).unwrap()
    }

    #[test]
    fn round_trip() {
        let records = vec![rec(0.25, -3.0), rec(1.5, 2.0)];
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &records).unwrap();
        let back = read_ndjson(&buf[..]).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = b"{\"obs\":[0.0],\"action\":0,\"reward\":1.0,\"next_obs\":[0.0],\"q_hat\":0.0,\"done\":false}\nnot json\n";
        let err = read_ndjson(&text[..]).unwrap_err();
        match err {
            Error::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
