//! On-disk store format.
//!
//! Vectors file: magic `PASEMB1\0`, little-endian u32 dim, u64 count,
//! then `count` rows of `dim` 32-bit little-endian IEEE-754 reals.
//! Sidecar ids file at `<path>.ids`: UTF-8, one id per line, same order.
//! Round-trips are bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use super::{EmbeddingStore, IndexError, NORM_TOLERANCE};
use crate::util::atomic_write;

const MAGIC: &[u8; 8] = b"PASEMB1\0";
const HEADER_LEN: u64 = 8 + 4 + 8;

/// Path of the sidecar ids file for a vectors file.
pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".ids");
    PathBuf::from(s)
}

/// Write the store to `path` plus the `<path>.ids` sidecar.
pub fn save_store(store: &EmbeddingStore, path: &Path) -> Result<(), IndexError> {
    let mut bytes = Vec::with_capacity(HEADER_LEN as usize + store.len() * store.dim() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for i in 0..store.len() {
        for &x in store.row(i) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)?;

    let mut ids = String::new();
    for id in store.ids() {
        ids.push_str(id);
        ids.push('\n');
    }
    atomic_write(&ids_path(path), ids.as_bytes())?;
    Ok(())
}

/// Load a store written by [`save_store`], validating the header, row
/// norms, and id uniqueness. `model_tag` is not part of the format and
/// is supplied by the caller.
pub fn load_store(path: &Path, model_tag: &str) -> Result<EmbeddingStore, IndexError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN as usize {
        return Err(IndexError::Format {
            offset: bytes.len() as u64,
            message: "file shorter than header".into(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(IndexError::Format {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if dim == 0 && count > 0 {
        return Err(IndexError::Format {
            offset: 8,
            message: "zero dimension with nonzero count".into(),
        });
    }
    let expected = HEADER_LEN as usize + count * dim * 4;
    if bytes.len() != expected {
        let have = bytes.len().saturating_sub(HEADER_LEN as usize);
        let row = have / (dim.max(1) * 4);
        return Err(IndexError::Format {
            offset: bytes.len() as u64,
            message: format!(
                "truncated at row {row}: expected {expected} bytes, found {}",
                bytes.len()
            ),
        });
    }

    let ids_file = ids_path(path);
    let ids_text = fs::read_to_string(&ids_file)?;
    let ids: Vec<String> = ids_text.lines().map(str::to_string).collect();
    if ids.len() != count {
        return Err(IndexError::Format {
            offset: HEADER_LEN,
            message: format!(
                "ids sidecar has {} entries, header says {count}",
                ids.len()
            ),
        });
    }

    let mut vectors = Vec::with_capacity(count * dim);
    let mut offset = HEADER_LEN as usize;
    for _ in 0..count * dim {
        vectors.push(f32::from_le_bytes(
            bytes[offset..offset + 4].try_into().unwrap(),
        ));
        offset += 4;
    }

    let mut by_id = std::collections::HashMap::with_capacity(count);
    for (i, id) in ids.iter().enumerate() {
        if by_id.insert(id.clone(), i).is_some() {
            return Err(IndexError::DuplicateId(id.clone()));
        }
    }

    for (i, id) in ids.iter().enumerate() {
        let row = &vectors[i * dim..(i + 1) * dim];
        let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(IndexError::Format {
                offset: HEADER_LEN + (i * dim * 4) as u64,
                message: format!("row '{id}' has norm {norm}, expected 1"),
            });
        }
    }

    Ok(EmbeddingStore {
        dim,
        ids,
        vectors,
        model_tag: model_tag.to_string(),
        by_id,
    })
}
