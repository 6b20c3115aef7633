use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NeshError, Result};

use super::{EventDataset, NodeMapping, TimeFrame};

/// One event row as it appears on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub ids: Vec<u64>,
    pub t: f64,
}

/// Reads an event CSV (`mode_0,...,mode_{K-1},t`). Returns K and the rows in
/// file order.
pub fn read_raw_rows(path: impl AsRef<Path>) -> Result<(usize, Vec<RawRow>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| NeshError::io(path, e))?;
    parse_rows(file)
}

pub(crate) fn parse_rows<R: Read>(input: R) -> Result<(usize, Vec<RawRow>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| NeshError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(NeshError::NoEvents);
    }
    let k = header
        .len()
        .checked_sub(1)
        .filter(|&k| k >= 1)
        .ok_or(NeshError::Parse {
            line: 1,
            msg: "header needs at least one mode column and a time column".into(),
        })?;
    for (m, name) in header.iter().take(k).enumerate() {
        if name != format!("mode_{m}") {
            return Err(NeshError::Parse {
                line: 1,
                msg: format!("expected column `mode_{m}`, found `{name}`"),
            });
        }
    }
    if &header[k] != "t" {
        return Err(NeshError::Parse {
            line: 1,
            msg: format!("expected last column `t`, found `{}`", &header[k]),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| NeshError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != k + 1 {
            return Err(NeshError::Parse {
                line,
                msg: format!("expected {} columns, found {}", k + 1, record.len()),
            });
        }
        let ids = record
            .iter()
            .take(k)
            .map(|f| {
                f.parse::<u64>().map_err(|_| NeshError::Parse {
                    line,
                    msg: format!("node id `{f}` is not a nonnegative integer"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let t: f64 = record[k].parse().map_err(|_| NeshError::Parse {
            line,
            msg: format!("timestamp `{}` is not a number", &record[k]),
        })?;
        if !t.is_finite() {
            return Err(NeshError::Parse {
                line,
                msg: format!("timestamp `{}` is not finite", &record[k]),
            });
        }
        if t < 0.0 {
            return Err(NeshError::Parse {
                line,
                msg: format!("negative timestamp {t}"),
            });
        }
        rows.push(RawRow { ids, t });
    }
    if rows.is_empty() {
        return Err(NeshError::NoEvents);
    }
    Ok((k, rows))
}

/// Loads an event file, shifting time so the first event is at 0 and
/// re-indexing nodes by descending event count.
pub fn load_events(path: impl AsRef<Path>) -> Result<EventDataset> {
    let (k, rows) = read_raw_rows(path)?;
    EventDataset::from_raw_rows(&rows, k, TimeFrame::FromData)
}

/// Writes events with raw node IDs and raw timestamps, sequence by sequence.
pub fn write_events(path: impl AsRef<Path>, ds: &EventDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| NeshError::io(path, e))?;
    write_events_to(BufWriter::new(file), ds).map_err(|e| NeshError::io(path, e))
}

pub(crate) fn write_events_to<W: Write>(mut w: W, ds: &EventDataset) -> std::io::Result<()> {
    let mut header: Vec<String> = (0..ds.k).map(|m| format!("mode_{m}")).collect();
    header.push("t".into());
    writeln!(w, "{}", header.join(","))?;
    for seq in &ds.sequences {
        let ids: Vec<String> = seq
            .key
            .0
            .iter()
            .enumerate()
            .map(|(m, &i)| ds.mapping.raw_id(m, i).to_string())
            .collect();
        let ids = ids.join(",");
        for &t in &seq.timestamps {
            writeln!(w, "{ids},{}", ds.raw_time(t))?;
        }
    }
    w.flush()
}

/// Writes the `mode,raw_id,internal_id` sidecar.
pub fn write_mapping(path: impl AsRef<Path>, mapping: &NodeMapping) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| NeshError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "mode,raw_id,internal_id")?;
        for (m, ids) in mapping.raw_ids.iter().enumerate() {
            for (i, raw) in ids.iter().enumerate() {
                writeln!(w, "{m},{raw},{i}")?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| NeshError::io(path, e))
}
