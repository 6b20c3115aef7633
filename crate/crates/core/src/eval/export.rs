use std::path::Path;

use crate::embeddings::EmbeddingRow;
use crate::error::{NeshError, Result};
use crate::inference::Checkpoint;

/// One row per node that occurs in training, with its raw id.
pub fn export_embeddings(ck: &Checkpoint) -> Vec<EmbeddingRow> {
    let table = ck.model.table();
    let mut rows = Vec::new();
    for (k, active) in ck.active.iter().enumerate() {
        for &j in active {
            rows.push(EmbeddingRow {
                mode: k,
                internal_id: j,
                raw_id: ck.mapping.raw_id(k, j),
                values: table.embedding(k, j),
            });
        }
    }
    rows
}

/// Reads a file written by `write_embedding_csv`.
pub fn read_embedding_csv(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| NeshError::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| NeshError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() < 4 {
            return Err(NeshError::Parse {
                line,
                msg: format!("expected at least 4 fields, got {}", rec.len()),
            });
        }
        let field = |j: usize| rec[j].trim().to_string();
        let parse_err = |what: &str, v: String| NeshError::Parse {
            line,
            msg: format!("bad {what} `{v}`"),
        };
        rows.push(EmbeddingRow {
            mode: field(0).parse().map_err(|_| parse_err("mode", field(0)))?,
            internal_id: field(1)
                .parse()
                .map_err(|_| parse_err("internal id", field(1)))?,
            raw_id: field(2)
                .parse()
                .map_err(|_| parse_err("raw id", field(2)))?,
            values: (3..rec.len())
                .map(|j| {
                    field(j)
                        .parse::<f64>()
                        .map_err(|_| parse_err("value", field(j)))
                })
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}
