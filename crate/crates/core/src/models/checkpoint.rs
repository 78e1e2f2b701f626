//! Model checkpoints: a kind tag and a JSON layout block in front of a
//! network checkpoint.
//!
//! ```text
//! "ASMD" | u16 version | u8 kind | u32 layout length | layout JSON | network checkpoint
//!
//! The layout JSON also carries the producing config hash and the hash of the
//! training inputs, when known.
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AercModel, AsaercModel, DelayMlp, Kernel, LinearModel, LinearReadout, Model, ModelKind};
use crate::neural::checkpoint::{read_networks, Reader};
use crate::neural::{encode_networks, Activation, DenseLayer, Mlp, NetworkCheckpoint, Parameters};
use crate::hashing::{self, Hash};
use crate::reservoir::{Grid, Point};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"ASMD";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Layout {
    psi: Vec<Point>,
    readout_points: Vec<Point>,
    grid: Option<Grid>,
    margin_cells: Option<f64>,
    kernel: Option<Kernel>,
    pinned: bool,
    delay: Option<usize>,
    config_hash: Option<String>,
    input_hash: Option<String>,
}

/// A model with the seed it was initialized from and the epochs it has seen.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub seed: u64,
    pub epoch: u32,
    /// Hash of the configuration and inputs that produced the parameters.
    pub config_hash: Option<Hash>,
    /// Hash of the snapshot store (or dataset) the model was trained on.
    pub input_hash: Option<Hash>,
}

impl ModelCheckpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let (layout, networks) = match &self.model {
            Model::Linear(m) => {
                let w = Array2::from_shape_vec((1, m.readout.len()), m.readout.weights().to_vec()).expect("sized");
                let layer = DenseLayer::new(w, Array1::zeros(1), Activation::Identity)?;
                (
                    Layout {
                        psi: m.points.clone(),
                        readout_points: Vec::new(),
                        grid: None,
                        margin_cells: None,
                        kernel: None,
                        pinned: false,
                        delay: None,
                        config_hash: None,
                        input_hash: None,
                    },
                    vec![Mlp::from_layers(vec![layer])?],
                )
            }
            Model::Aerc(m) => (
                Layout {
                    psi: m.psi().to_vec(),
                    readout_points: m.readout_points().to_vec(),
                    grid: None,
                    margin_cells: None,
                    kernel: None,
                    pinned: false,
                    delay: None,
                    config_hash: None,
                        input_hash: None,
                },
                vec![m.backbone().clone(), m.weight_head().clone()],
            ),
            Model::Asaerc(m) => (
                Layout {
                    psi: m.psi().to_vec(),
                    readout_points: m.readout_points().to_vec(),
                    grid: Some(*m.grid()),
                    margin_cells: Some(m.margin_cells()),
                    kernel: Some(m.kernel()),
                    pinned: m.is_pinned(),
                    delay: None,
                    config_hash: None,
                        input_hash: None,
                },
                vec![m.backbone().clone(), m.weight_head().clone(), m.position_head().clone()],
            ),
            Model::DelayMlp(m) => (
                Layout {
                    psi: Vec::new(),
                    readout_points: Vec::new(),
                    grid: None,
                    margin_cells: None,
                    kernel: None,
                    pinned: false,
                    delay: Some(m.delay()),
                    config_hash: None,
                        input_hash: None,
                },
                vec![m.network().clone()],
            ),
        };
        let layout = Layout {
            config_hash: self.config_hash.as_ref().map(hashing::to_hex),
            input_hash: self.input_hash.as_ref().map(hashing::to_hex),
            ..layout
        };
        let json = serde_json::to_vec(&layout)?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.push(self.model.kind().tag());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&encode_networks(&NetworkCheckpoint {
            seed: self.seed,
            epoch: self.epoch,
            networks,
        }));
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != MODEL_MAGIC {
            return Err(r.error("bad model magic"));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(r.error(format!("unsupported model version {version}")));
        }
        let kind = ModelKind::from_tag(r.u8()?).ok_or_else(|| r.error("unknown model kind"))?;
        let len = r.u32()? as usize;
        let layout: Layout = serde_json::from_slice(r.take(len)?).map_err(|e| r.error(e.to_string()))?;
        let ck = read_networks(&mut r)?;
        if r.position() != bytes.len() {
            return Err(r.error("trailing bytes after model checkpoint"));
        }
        let parse = |h: &Option<String>| match h {
            Some(h) => hashing::from_hex(h).map(Some).ok_or_else(|| r.error("malformed hash")),
            None => Ok(None),
        };
        let config_hash = parse(&layout.config_hash)?;
        let input_hash = parse(&layout.input_hash)?;
        let bad = |what: &str| Error::format(path, format!("inconsistent {what} checkpoint"));
        let mut nets = ck.networks.into_iter();
        let model = match kind {
            ModelKind::Linear => {
                let net = nets.next().ok_or_else(|| bad("linear"))?;
                let layer = &net.layers()[0];
                if net.layers().len() != 1 || layer.outputs() != 1 || layer.inputs() != layout.psi.len() {
                    return Err(bad("linear"));
                }
                Model::Linear(LinearModel {
                    points: layout.psi,
                    readout: LinearReadout::from_weights(layer.weights().row(0).to_vec()),
                })
            }
            ModelKind::Aerc => {
                let (Some(b), Some(h)) = (nets.next(), nets.next()) else {
                    return Err(bad("AERC"));
                };
                Model::Aerc(AercModel::from_parts(layout.psi, layout.readout_points, b, h).map_err(|_| bad("AERC"))?)
            }
            ModelKind::Asaerc => {
                let (Some(b), Some(w), Some(p)) = (nets.next(), nets.next(), nets.next()) else {
                    return Err(bad("ASAERC"));
                };
                let (Some(grid), Some(margin), Some(kernel)) = (layout.grid, layout.margin_cells, layout.kernel) else {
                    return Err(bad("ASAERC"));
                };
                let mut m = AsaercModel::from_parts(&grid, layout.psi, layout.readout_points, b, w, p, margin, kernel)
                    .map_err(|_| bad("ASAERC"))?;
                m.set_pinned(layout.pinned);
                Model::Asaerc(m)
            }
            ModelKind::DelayMlp => {
                let net = nets.next().ok_or_else(|| bad("delay"))?;
                let delay = layout.delay.ok_or_else(|| bad("delay"))?;
                Model::DelayMlp(DelayMlp::from_network(delay, net).map_err(|_| bad("delay"))?)
            }
        };
        if nets.next().is_some() {
            return Err(bad("network count in"));
        }
        debug_assert!(model.n_params() > 0);
        Ok(ModelCheckpoint {
            model,
            seed: ck.seed,
            epoch: ck.epoch,
            config_hash,
            input_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?, path)
    }
}
