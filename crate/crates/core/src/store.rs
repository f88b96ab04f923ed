//! Two-file embedding store.
//!
//! * `<name>.meta.jsonl`: UTF-8, first line is the header
//!   `{"magic":"REIDSTORE","version":1,"dim":D,"count":N}`, followed by one
//!   object per record:
//!   `{"record_id":..,"fish_id":..,"species":..,"arrangement":..,"viewpoint":..,"split":..,"row":..}`.
//! * `<name>.f32`: row-major little-endian `f32` matrix, `N x D`; row `i`
//!   belongs to the metadata line with `"row": i`.
//!
//! Records are returned in metadata-line order.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ReidError, Result};
use crate::model::{Arrangement, Condition, EmbeddingRecord, EmbeddingSet, Split, Viewpoint};

pub const STORE_MAGIC: &str = "REIDSTORE";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    dim: usize,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    record_id: u64,
    fish_id: String,
    species: String,
    arrangement: Arrangement,
    viewpoint: Viewpoint,
    split: Split,
    row: usize,
}

/// `(<name>.meta.jsonl, <name>.f32)`.
pub fn store_paths(name: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let base = name.as_ref().as_os_str().to_owned();
    let mut meta = base.clone();
    meta.push(".meta.jsonl");
    let mut blob = base;
    blob.push(".f32");
    (PathBuf::from(meta), PathBuf::from(blob))
}

pub fn write_store(set: &EmbeddingSet, meta_path: &Path, blob_path: &Path) -> Result<()> {
    if set.dim() == 0 {
        return Err(ReidError::ZeroDim);
    }
    let file = fs::File::create(meta_path).map_err(|e| ReidError::io(meta_path, e))?;
    let mut meta = BufWriter::new(file);
    let header = Header {
        magic: STORE_MAGIC.to_owned(),
        version: STORE_VERSION,
        dim: set.dim(),
        count: set.len(),
    };
    let mut lines = vec![serde_json::to_string(&header).expect("header serializes")];
    for (row, r) in set.records().iter().enumerate() {
        let line = MetaLine {
            record_id: r.record_id,
            fish_id: r.fish_id.clone(),
            species: r.species.clone(),
            arrangement: r.condition.arrangement,
            viewpoint: r.condition.viewpoint,
            split: r.split,
            row,
        };
        lines.push(serde_json::to_string(&line).expect("metadata serializes"));
    }
    for line in lines {
        writeln!(meta, "{line}").map_err(|e| ReidError::io(meta_path, e))?;
    }
    meta.flush().map_err(|e| ReidError::io(meta_path, e))?;

    let mut blob = Vec::with_capacity(set.len() * set.dim() * 4);
    for r in set.records() {
        for v in &r.vector {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(blob_path, blob).map_err(|e| ReidError::io(blob_path, e))
}

pub fn read_store(meta_path: &Path, blob_path: &Path) -> Result<EmbeddingSet> {
    let text = fs::read_to_string(meta_path).map_err(|e| ReidError::io(meta_path, e))?;
    let malformed = |line: usize, message: String| ReidError::Metadata {
        path: meta_path.to_owned(),
        line,
        message,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
    let header_value: serde_json::Value =
        serde_json::from_str(header_line).map_err(|e| malformed(1, e.to_string()))?;
    let found_magic = header_value
        .get("magic")
        .and_then(|m| m.as_str())
        .unwrap_or_default();
    if found_magic != STORE_MAGIC {
        return Err(ReidError::MagicMismatch {
            expected: STORE_MAGIC.into(),
            found: found_magic.into(),
        });
    }
    let header: Header =
        serde_json::from_value(header_value).map_err(|e| malformed(1, e.to_string()))?;
    if header.version != STORE_VERSION {
        return Err(ReidError::UnsupportedVersion(header.version));
    }
    if header.dim == 0 {
        return Err(ReidError::ZeroDim);
    }

    let mut metas = Vec::with_capacity(header.count);
    for (idx, line) in lines {
        let m: MetaLine = serde_json::from_str(line).map_err(|e| malformed(idx + 1, e.to_string()))?;
        metas.push(m);
    }
    if metas.len() != header.count {
        return Err(ReidError::CountMismatch {
            header: header.count,
            found: metas.len(),
        });
    }

    let blob = fs::read(blob_path).map_err(|e| ReidError::io(blob_path, e))?;
    let expected = (header.count as u64) * (header.dim as u64) * 4;
    if blob.len() as u64 != expected {
        return Err(ReidError::BlobLengthMismatch {
            expected,
            found: blob.len() as u64,
        });
    }

    let mut rows_seen = HashSet::with_capacity(metas.len());
    let mut ids_seen = HashSet::with_capacity(metas.len());
    let mut records = Vec::with_capacity(metas.len());
    let dim = header.dim;
    for m in metas {
        if m.row >= header.count {
            return Err(ReidError::RowOutOfRange {
                row: m.row,
                count: header.count,
            });
        }
        if !rows_seen.insert(m.row) {
            return Err(ReidError::DuplicateRow(m.row));
        }
        if !ids_seen.insert(m.record_id) {
            return Err(ReidError::DuplicateRecordId(m.record_id));
        }
        let bytes = &blob[m.row * dim * 4..(m.row + 1) * dim * 4];
        let vector: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(col) = vector.iter().position(|v| !v.is_finite()) {
            return Err(ReidError::NonFinite { row: m.row, col });
        }
        records.push(EmbeddingRecord {
            record_id: m.record_id,
            fish_id: m.fish_id,
            species: m.species,
            condition: Condition::new(m.arrangement, m.viewpoint),
            split: m.split,
            vector,
        });
    }
    EmbeddingSet::new(dim, records)
}

/// Writes `<name>.meta.jsonl` and `<name>.f32`.
pub fn save(set: &EmbeddingSet, name: impl AsRef<Path>) -> Result<()> {
    let (meta, blob) = store_paths(name);
    write_store(set, &meta, &blob)
}

/// Reads `<name>.meta.jsonl` and `<name>.f32`.
pub fn load(name: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let (meta, blob) = store_paths(name);
    read_store(&meta, &blob)
}
