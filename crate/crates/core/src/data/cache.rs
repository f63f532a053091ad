//! Dataset cache: one JSON object per line, one [`Sample`] per object.
//!
//! Field order: `source`, `target_id`, `anchor_frame`, `history`,
//! `neighbors` (`vehicle_id`, `history`), `future`, then `intention` when
//! labeled. Points are `[lateral, longitudinal]` pairs. Floats are written
//! with shortest round-trip formatting, so a read-write cycle is lossless.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::data::{DataError, Sample};

pub fn write_dataset_to<W: Write>(mut out: W, samples: &[Sample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io)?;
    write_dataset_to(std::io::BufWriter::new(file), samples).map_err(io)
}

/// Reads samples; blank lines are skipped.
pub fn read_dataset_from<R: Read>(input: R) -> Result<Vec<Sample>, DataError> {
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| DataError::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset_from(file)
}
