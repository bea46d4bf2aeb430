//! Durable storage for checkpoints, run records, and ensemble manifests.
//!
//! Parameters go into one binary file per checkpoint (version byte first,
//! little-endian payload, CRC-32 of the parameter bytes at the end) so they
//! round-trip bit-exactly. Run metadata goes into a human-readable JSON
//! `manifest` that references the checkpoint files; wall-clock timings live
//! in a separate `timings.csv` so manifests stay deterministic.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{CheckpointRecord, EnsembleModel};
use crate::engine::RunRecord;
use crate::learner::MlpParams;

pub const FORMAT_VERSION: u8 = 1;

const MANIFEST_FILE: &str = "manifest";
const TIMINGS_FILE: &str = "timings.csv";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("integrity check failed for {path}: {detail}")]
    Integrity { path: PathBuf, detail: String },
    #[error("unsupported checkpoint version {found} in {path}")]
    UnsupportedVersion { path: PathBuf, found: u8 },
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("manifest references missing checkpoint {path}")]
    DanglingReference { path: PathBuf },
    #[error(transparent)]
    Model(#[from] crate::boost::BoostError),
}

fn storage(path: &Path, source: std::io::Error) -> PersistError {
    PersistError::Storage {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one checkpoint: params, boosting metadata, and the run seed.
pub fn save_checkpoint(
    record: &CheckpointRecord,
    seed: u64,
    path: &Path,
) -> Result<(), PersistError> {
    let file = fs::File::create(path).map_err(|e| storage(path, e))?;
    let mut w = BufWriter::new(file);
    let err = |e| storage(path, e);

    w.write_u8(FORMAT_VERSION).map_err(err)?;
    let sizes = record.params.layer_sizes();
    w.write_u32::<LittleEndian>(sizes.len() as u32).map_err(err)?;
    for s in &sizes {
        w.write_u32::<LittleEndian>(*s as u32).map_err(err)?;
    }
    w.write_f64::<LittleEndian>(record.params.l2()).map_err(err)?;
    w.write_f64::<LittleEndian>(record.lambda).map_err(err)?;
    w.write_f64::<LittleEndian>(record.error).map_err(err)?;
    w.write_f64::<LittleEndian>(record.z).map_err(err)?;
    w.write_u64::<LittleEndian>(record.step).map_err(err)?;
    w.write_u64::<LittleEndian>(seed).map_err(err)?;

    let flat = record.params.to_flat();
    w.write_u64::<LittleEndian>(flat.len() as u64).map_err(err)?;
    let mut payload = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload).map_err(err)?;
    w.write_u32::<LittleEndian>(crc32fast::hash(&payload))
        .map_err(err)?;
    w.flush().map_err(err)
}

/// Reads a checkpoint back, validating version, architecture-implied
/// parameter count, and the payload checksum. Returns the record and the
/// seed stored alongside it.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointRecord, u64), PersistError> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PersistError::DanglingReference {
            path: path.to_path_buf(),
        },
        _ => storage(path, e),
    })?;
    let mut r = BufReader::new(file);
    let truncated = |_: std::io::Error| PersistError::Integrity {
        path: path.to_path_buf(),
        detail: "file shorter than its declared contents".into(),
    };

    let version = r.read_u8().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(PersistError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let n_sizes = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(PersistError::Corrupt {
            path: path.to_path_buf(),
            detail: format!("implausible layer count {n_sizes}"),
        });
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
    }
    let l2 = r.read_f64::<LittleEndian>().map_err(truncated)?;
    let lambda = r.read_f64::<LittleEndian>().map_err(truncated)?;
    let error = r.read_f64::<LittleEndian>().map_err(truncated)?;
    let z = r.read_f64::<LittleEndian>().map_err(truncated)?;
    let step = r.read_u64::<LittleEndian>().map_err(truncated)?;
    let seed = r.read_u64::<LittleEndian>().map_err(truncated)?;

    let count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let implied: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if count != implied {
        return Err(PersistError::Corrupt {
            path: path.to_path_buf(),
            detail: format!(
                "payload declares {count} parameters but the architecture implies {implied}"
            ),
        });
    }
    let mut payload = vec![0u8; count * 8];
    r.read_exact(&mut payload).map_err(truncated)?;
    let stored_crc = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let actual_crc = crc32fast::hash(&payload);
    if stored_crc != actual_crc {
        return Err(PersistError::Integrity {
            path: path.to_path_buf(),
            detail: format!("crc {actual_crc:#010x} != stored {stored_crc:#010x}"),
        });
    }

    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let params = MlpParams::from_flat(&sizes, l2, &flat).map_err(|e| PersistError::Corrupt {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let record =
        CheckpointRecord::new(params, lambda, error, z, step).map_err(|e| PersistError::Corrupt {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    Ok((record, seed))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u8,
    run: RunRecord,
}

/// Writes a whole run: the manifest, one checkpoint file per member, and
/// the segment timings (when any were recorded).
pub fn save_run(
    record: &RunRecord,
    ensemble: &EnsembleModel,
    dir: &Path,
) -> Result<(), PersistError> {
    if record.checkpoints.len() != ensemble.len() {
        return Err(PersistError::Corrupt {
            path: dir.to_path_buf(),
            detail: format!(
                "{} checkpoint entries but {} ensemble members",
                record.checkpoints.len(),
                ensemble.len()
            ),
        });
    }
    fs::create_dir_all(dir).map_err(|e| storage(dir, e))?;
    for (meta, member) in record.checkpoints.iter().zip(ensemble.members()) {
        save_checkpoint(member, record.seed, &dir.join(&meta.file))?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        run: record.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| PersistError::Corrupt {
        path: manifest_path.clone(),
        detail: e.to_string(),
    })?;
    fs::write(&manifest_path, json).map_err(|e| storage(&manifest_path, e))?;

    if !record.segment_seconds.is_empty() {
        let timings_path = dir.join(TIMINGS_FILE);
        let mut out = String::from("segment,seconds\n");
        for (i, s) in record.segment_seconds.iter().enumerate() {
            out.push_str(&format!("{i},{s}\n"));
        }
        fs::write(&timings_path, out).map_err(|e| storage(&timings_path, e))?;
    }
    Ok(())
}

/// Loads a run directory back into a record and its ensemble. Fails with a
/// dangling-reference error if a checkpoint file named by the manifest is
/// missing; never mutates the directory.
pub fn load_run(dir: &Path) -> Result<(RunRecord, EnsembleModel), PersistError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = fs::read_to_string(&manifest_path).map_err(|e| storage(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| PersistError::Corrupt {
            path: manifest_path.clone(),
            detail: e.to_string(),
        })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(PersistError::UnsupportedVersion {
            path: manifest_path,
            found: manifest.format_version,
        });
    }
    let mut record = manifest.run;

    let mut members = Vec::with_capacity(record.checkpoints.len());
    for meta in &record.checkpoints {
        let path = dir.join(&meta.file);
        if !path.exists() {
            return Err(PersistError::DanglingReference { path });
        }
        let (member, _) = load_checkpoint(&path)?;
        if member.lambda != meta.lambda || member.step != meta.step {
            return Err(PersistError::Corrupt {
                path,
                detail: "checkpoint metadata disagrees with the manifest".into(),
            });
        }
        members.push(member);
    }

    let timings_path = dir.join(TIMINGS_FILE);
    if timings_path.exists() {
        let text = fs::read_to_string(&timings_path).map_err(|e| storage(&timings_path, e))?;
        record.segment_seconds = text
            .lines()
            .skip(1)
            .filter_map(|l| l.split(',').nth(1))
            .filter_map(|v| v.parse().ok())
            .collect();
    }

    let ensemble = EnsembleModel::new(members)?;
    Ok((record, ensemble))
}
