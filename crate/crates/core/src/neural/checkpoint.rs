//! Binary parameter checkpoints.
//!
//! ```text
//! "ASNN" | u16 version | u64 seed | u32 epoch | u32 n_networks
//!        | per network: u32 n_layers, per layer: u32 in, u32 out, u8 activation
//!        | f64 payload, networks in order, canonical parameter order
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, DenseLayer, Mlp, Parameters};
use crate::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 4] = b"ASNN";
pub const NETWORK_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCheckpoint {
    pub seed: u64,
    pub epoch: u32,
    pub networks: Vec<Mlp>,
}

pub fn encode_networks(checkpoint: &NetworkCheckpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(NETWORK_MAGIC);
    out.extend_from_slice(&NETWORK_VERSION.to_le_bytes());
    out.extend_from_slice(&checkpoint.seed.to_le_bytes());
    out.extend_from_slice(&checkpoint.epoch.to_le_bytes());
    out.extend_from_slice(&(checkpoint.networks.len() as u32).to_le_bytes());
    for net in &checkpoint.networks {
        out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for layer in net.layers() {
            out.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
            out.push(layer.activation().tag());
        }
    }
    for net in &checkpoint.networks {
        net.visit(&mut |block| {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
    }
    out
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn error(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }
}

/// Decodes a checkpoint at the start of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode_networks(bytes: &[u8], path: &Path) -> Result<(NetworkCheckpoint, usize)> {
    let mut r = Reader::new(bytes, path);
    let checkpoint = read_networks(&mut r)?;
    Ok((checkpoint, r.position()))
}

pub(crate) fn read_networks(r: &mut Reader<'_>) -> Result<NetworkCheckpoint> {
    if r.take(4)? != NETWORK_MAGIC {
        return Err(r.error("bad network magic"));
    }
    let version = r.u16()?;
    if version != NETWORK_VERSION {
        return Err(r.error(format!("unsupported network version {version}")));
    }
    let seed = r.u64()?;
    let epoch = r.u32()?;
    let n_networks = r.u32()? as usize;
    let mut shapes = Vec::new();
    for _ in 0..n_networks {
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            let act = Activation::from_tag(r.u8()?).ok_or_else(|| r.error("unknown activation tag"))?;
            layers.push((inputs, outputs, act));
        }
        shapes.push(layers);
    }
    let mut networks = Vec::with_capacity(n_networks);
    for layers in shapes {
        let mut built = Vec::with_capacity(layers.len());
        for (inputs, outputs, act) in layers {
            let mut w = Vec::with_capacity(inputs * outputs);
            for _ in 0..inputs * outputs {
                w.push(r.f64()?);
            }
            let mut b = Vec::with_capacity(outputs);
            for _ in 0..outputs {
                b.push(r.f64()?);
            }
            let weights = Array2::from_shape_vec((outputs, inputs), w).expect("sized");
            built.push(DenseLayer::new(weights, Array1::from(b), act).map_err(|e| r.error(e.to_string()))?);
        }
        networks.push(Mlp::from_layers(built).map_err(|e| r.error(e.to_string()))?);
    }
    Ok(NetworkCheckpoint { seed, epoch, networks })
}

impl NetworkCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode_networks(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (checkpoint, used) = decode_networks(&bytes, path)?;
        if used != bytes.len() {
            return Err(Error::format(path, "trailing bytes after checkpoint"));
        }
        Ok(checkpoint)
    }
}
