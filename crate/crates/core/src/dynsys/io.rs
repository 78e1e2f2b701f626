//! Binary series files and the data manifest.
//!
//! Series file layout (little-endian):
//!
//! ```text
//! magic "ASRS" | u16 version | u32 length | f64 sample_dt | f64 mean | f64 std | length x f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Series, SystemKind, SystemSpec};
use crate::hashing::{self, Hash};
use crate::{Error, Result};

pub const SERIES_MAGIC: &[u8; 4] = b"ASRS";
pub const SERIES_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8 * 3;

pub fn encode_series(series: &Series) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * series.len());
    buf.extend_from_slice(SERIES_MAGIC);
    buf.extend_from_slice(&SERIES_VERSION.to_le_bytes());
    buf.extend_from_slice(&(series.len() as u32).to_le_bytes());
    buf.extend_from_slice(&series.sample_dt.to_le_bytes());
    buf.extend_from_slice(&series.mean.to_le_bytes());
    buf.extend_from_slice(&series.std.to_le_bytes());
    for v in &series.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Raw contents of a series file; the system spec lives in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFile {
    pub sample_dt: f64,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

pub fn decode_series(bytes: &[u8], path: &Path) -> Result<SeriesFile> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != SERIES_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SERIES_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + 8 * len {
        return Err(Error::format(
            path,
            format!("expected {} payload values, file is {} bytes", len, bytes.len()),
        ));
    }
    Ok(SeriesFile {
        sample_dt: f64_at(10),
        mean: f64_at(18),
        std: f64_at(26),
        values: (0..len).map(|i| f64_at(HEADER_LEN + 8 * i)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub system: SystemKind,
    /// Relative to the manifest's directory.
    pub file: PathBuf,
    pub spec: SystemSpec,
    pub values_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format_version: u16,
    pub seed: u64,
    pub test_fraction: f64,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl DataManifest {
    pub fn config_hash(&self) -> Result<Hash> {
        hashing::from_hex(&self.config_hash)
            .ok_or_else(|| Error::config("manifest carries a malformed config hash"))
    }
}

/// Writes one series file per system plus `manifest.json` into `dir`.
pub fn write_data(
    dir: &Path,
    series: &[Series],
    seed: u64,
    test_fraction: f64,
    config_hash: &Hash,
) -> Result<DataManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(series.len());
    for s in series {
        let file = PathBuf::from(format!("{}.series", s.system.kind.name()));
        let mut out = fs::File::create(dir.join(&file))?;
        out.write_all(&encode_series(s))?;
        entries.push(ManifestEntry {
            system: s.system.kind,
            file,
            spec: s.system.clone(),
            values_sha256: hashing::to_hex(&hashing::hash_f64s(&s.values)),
        });
    }
    let manifest = DataManifest {
        format_version: SERIES_VERSION,
        seed,
        test_fraction,
        config_hash: hashing::to_hex(config_hash),
        entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Loads every series named in a manifest, verifying payload hashes.
pub fn read_data(manifest_path: &Path) -> Result<(DataManifest, Vec<Series>)> {
    let manifest: DataManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut series = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let path = dir.join(&entry.file);
        let mut bytes = Vec::new();
        fs::File::open(&path)?.read_to_end(&mut bytes)?;
        let file = decode_series(&bytes, &path)?;
        let found = hashing::to_hex(&hashing::hash_f64s(&file.values));
        if found != entry.values_sha256 {
            return Err(Error::HashMismatch {
                path,
                expected: entry.values_sha256.clone(),
                found,
            });
        }
        series.push(Series {
            values: file.values,
            mean: file.mean,
            std: file.std,
            system: entry.spec.clone(),
            sample_dt: file.sample_dt,
        });
    }
    Ok((manifest, series))
}
