use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes covered by each chunk checksum, so a corruption can be located.
pub const CHUNK_BYTES: usize = 1 << 16;

/// Checksums of one binary blob as recorded in a manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub file: String,
    pub bytes: u64,
    pub crc32: u32,
    pub chunk_crc32: Vec<u32>,
}

impl BlobEntry {
    pub fn describe(file: &str, data: &[u8]) -> Self {
        Self {
            file: file.to_string(),
            bytes: data.len() as u64,
            crc32: crc32fast::hash(data),
            chunk_crc32: data.chunks(CHUNK_BYTES).map(crc32fast::hash).collect(),
        }
    }

    /// Checks `data` against the recorded sums; a mismatch names the first bad chunk.
    pub fn verify(&self, data: &[u8]) -> Result<()> {
        let corrupt = |offset: u64| Error::Corruption {
            blob: self.file.clone(),
            offset,
        };
        if data.len() as u64 != self.bytes {
            return Err(corrupt(data.len().min(self.bytes as usize) as u64));
        }
        if crc32fast::hash(data) == self.crc32 {
            return Ok(());
        }
        for (c, chunk) in data.chunks(CHUNK_BYTES).enumerate() {
            if self.chunk_crc32.get(c) != Some(&crc32fast::hash(chunk)) {
                return Err(corrupt((c * CHUNK_BYTES) as u64));
            }
        }
        // Whole-blob sum disagrees while every chunk matches: the manifest itself is off.
        Err(corrupt(0))
    }
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact yields 8 bytes")))
        .collect()
}

/// Writes `data` to a sibling temp file, syncs it and renames it over `path`.
pub fn atomic_write(path: &Path, data: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("path has no file name")))?;
    let tmp: PathBuf = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(data).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Creates `dir`, refusing to reuse an existing path unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force {
        return Err(Error::validation(
            "output",
            format!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            ),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Reads the `format_version` key of a manifest and rejects other versions before
/// the rest of the document is interpreted.
pub fn check_version(path: &Path, doc: &toml::Table, supported: u32) -> Result<()> {
    let found = doc
        .get("format_version")
        .and_then(toml::Value::as_integer)
        .ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            reason: "missing integer key `format_version`".into(),
        })?;
    if found != supported as i64 {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            supported,
        });
    }
    Ok(())
}

pub fn parse_manifest<T: serde::de::DeserializeOwned>(path: &Path, supported: u32) -> Result<T> {
    let text = read_text(path)?;
    let malformed = |reason: String| Error::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| malformed(e.to_string()))?;
    check_version(path, &doc, supported)?;
    T::deserialize(doc).map_err(|e| malformed(e.to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string_pretty(value).expect("manifest types always serialize to TOML")
}
