//! Snapshot storage and the on-disk snapshot format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "ASRC" | u16 version | u32 nx | u32 ny | u32 n_frames
//!        | f64 lx | f64 ly | f64 nu | f64 dt | u32 K | u32 T | [u8; 32] config hash
//!        | n_frames x nx x ny f32, row-major
//! ```
//!
//! With a nonzero `t_offset`, the fixed-measurement frames go to a sibling
//! file with the same header and a `.lead` suffix.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Grid, GridField, GridValues, ReservoirConfig};
use crate::hashing::{self, Hash};
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"ASRC";
pub const SNAPSHOT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 3 * 4 + 4 * 8 + 2 * 4 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub nu: f64,
    pub dt: f64,
    pub substeps_per_sample: usize,
    pub t_offset: usize,
}

impl StoreMeta {
    pub fn from_config(config: &ReservoirConfig) -> Self {
        StoreMeta {
            nu: config.nu,
            dt: config.dt,
            substeps_per_sample: config.substeps_per_sample,
            t_offset: config.t_offset,
        }
    }
}

/// Immutable per-sample field snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStore {
    grid: Grid,
    meta: StoreMeta,
    hash: Hash,
    frames: Vec<f32>,
    lead_frames: Option<Vec<f32>>,
}

/// Borrowed view of one stored frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    grid: Grid,
    data: &'a [f32],
}

impl<'a> FrameView<'a> {
    pub fn data(&self) -> &'a [f32] {
        self.data
    }

    pub fn to_field(&self) -> GridField {
        GridField {
            grid: self.grid,
            values: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl GridValues for FrameView<'_> {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.grid.ny + j] as f64
    }
}

impl SnapshotStore {
    pub(crate) fn from_parts(
        grid: Grid,
        meta: StoreMeta,
        hash: Hash,
        frames: Vec<f32>,
        lead_frames: Option<Vec<f32>>,
    ) -> Self {
        debug_assert_eq!(frames.len() % grid.len(), 0);
        SnapshotStore {
            grid,
            meta,
            hash,
            frames,
            lead_frames,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn hash(&self) -> &Hash {
        &self.hash
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_lead_frames(&self) -> bool {
        self.lead_frames.is_some()
    }

    /// End-of-sample snapshot: the field the adaptive measurements see.
    pub fn frame(&self, n: usize) -> FrameView<'_> {
        let len = self.grid.len();
        FrameView {
            grid: self.grid,
            data: &self.frames[n * len..(n + 1) * len],
        }
    }

    /// Snapshot feeding the fixed measurements, `t_offset` substeps earlier.
    pub fn fixed_frame(&self, n: usize) -> FrameView<'_> {
        match &self.lead_frames {
            Some(lead) => {
                let len = self.grid.len();
                FrameView {
                    grid: self.grid,
                    data: &lead[n * len..(n + 1) * len],
                }
            }
            None => self.frame(n),
        }
    }

    pub fn lead_path(path: &Path) -> PathBuf {
        let mut name = path.as_os_str().to_owned();
        name.push(".lead");
        PathBuf::from(name)
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        write_frames(path, &self.grid, &self.meta, &self.hash, &self.frames)?;
        let lead = Self::lead_path(path);
        match &self.lead_frames {
            Some(frames) => write_frames(&lead, &self.grid, &self.meta, &self.hash, frames)?,
            None => {
                if lead.exists() {
                    fs::remove_file(lead)?;
                }
            }
        }
        Ok(())
    }

    /// The config hash in a store's header, without reading the frames.
    pub fn peek_hash(path: &Path) -> Result<Hash> {
        let mut header = [0u8; HEADER_LEN];
        fs::File::open(path)?
            .read_exact(&mut header)
            .map_err(|_| Error::format(path, "truncated header"))?;
        if &header[..4] != SNAPSHOT_MAGIC {
            return Err(Error::format(path, "bad magic"));
        }
        Ok(header[58..90].try_into().unwrap())
    }

    /// Loads a store, rejecting it when `expected` is given and differs from
    /// the stored config hash.
    pub fn load(path: &Path, expected: Option<&Hash>) -> Result<Self> {
        let (grid, meta, hash, frames) = read_frames(path)?;
        if let Some(expected) = expected {
            if *expected != hash {
                return Err(Error::HashMismatch {
                    path: path.to_path_buf(),
                    expected: hashing::to_hex(expected),
                    found: hashing::to_hex(&hash),
                });
            }
        }
        let lead = Self::lead_path(path);
        let lead_frames = if lead.exists() {
            let (lgrid, _, lhash, lframes) = read_frames(&lead)?;
            if lgrid != grid || lhash != hash || lframes.len() != frames.len() {
                return Err(Error::format(lead, "lead frames do not match the main store"));
            }
            Some(lframes)
        } else {
            None
        };
        if lead_frames.is_some() != (meta.t_offset > 0) {
            return Err(Error::format(path, "lead frames missing or unexpected"));
        }
        Ok(SnapshotStore {
            grid,
            meta,
            hash,
            frames,
            lead_frames,
        })
    }
}

fn write_frames(path: &Path, grid: &Grid, meta: &StoreMeta, hash: &Hash, frames: &[f32]) -> Result<()> {
    let n_frames = frames.len() / grid.len();
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    for v in [grid.nx, grid.ny, n_frames] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in [grid.lx, grid.ly, meta.nu, meta.dt] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&(meta.substeps_per_sample as u32).to_le_bytes())?;
    out.write_all(&(meta.t_offset as u32).to_le_bytes())?;
    out.write_all(hash)?;
    let mut chunk = Vec::with_capacity(4 * grid.len());
    for frame in frames.chunks(grid.len()) {
        chunk.clear();
        for v in frame {
            chunk.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&chunk)?;
    }
    out.flush()?;
    Ok(())
}

fn read_frames(path: &Path) -> Result<(Grid, StoreMeta, Hash, Vec<f32>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SNAPSHOT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (nx, ny, n_frames) = (u32_at(6), u32_at(10), u32_at(14));
    let grid = Grid::new(nx, ny, f64_at(18), f64_at(26))
        .map_err(|e| Error::format(path, format!("invalid grid: {e}")))?;
    let meta = StoreMeta {
        nu: f64_at(34),
        dt: f64_at(42),
        substeps_per_sample: u32_at(50),
        t_offset: u32_at(54),
    };
    let hash: Hash = bytes[58..90].try_into().unwrap();
    let expected = HEADER_LEN + 4 * n_frames * grid.len();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let frames = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((grid, meta, hash, frames))
}
