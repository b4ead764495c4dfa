//! Portable JSON weight format, read by browser clients.
//!
//! ```json
//! {
//!   "format": "neurocube-portable", "version": 1,
//!   "schema_fingerprint": "0123456789abcdef",
//!   "attributes": [{"name": "hour", "input_width": 24,
//!                   "layers": [{"rows": 12, "cols": 24, "activation": "relu",
//!                               "w": [...], "b": [...]}, ...],
//!                   "embedding_index": 1, "projection_index": 2}],
//!   "regressor": [{"rows": 1, "cols": 60, "activation": "identity", "w": [...], "b": [...]}],
//!   "target_scale": 123.4
//! }
//! ```
//!
//! `w` is row-major with `rows` outputs and `cols` inputs. A tower's layers run
//! front to back: the output of layer `embedding_index` is the embedding fed
//! to the regressor, the output of `projection_index` is the 2D projection.
//! [`PortableModel`] is a dependency-free evaluator for the format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Activation, Dense};
use super::model::Model;
use crate::error::{Error, Result};

pub const PORTABLE_FORMAT: &str = "neurocube-portable";
pub const PORTABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortableLayer {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortableTower {
    pub name: String,
    pub input_width: usize,
    pub layers: Vec<PortableLayer>,
    pub embedding_index: usize,
    pub projection_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortableModel {
    pub format: String,
    pub version: u32,
    pub schema_fingerprint: String,
    pub attributes: Vec<PortableTower>,
    pub regressor: Vec<PortableLayer>,
    pub target_scale: f64,
}

fn portable_layer(l: &Dense) -> PortableLayer {
    PortableLayer {
        rows: l.outputs(),
        cols: l.inputs(),
        activation: l.activation,
        w: l.w.iter().copied().collect(),
        b: l.b.to_vec(),
    }
}

impl PortableModel {
    pub fn from_model(model: &Model) -> Self {
        let attributes = model
            .towers
            .iter()
            .zip(model.schema().attributes())
            .map(|(t, spec)| {
                let (layers, emb, proj) = t.flat();
                PortableTower {
                    name: spec.name.clone(),
                    input_width: spec.encoding_width(),
                    layers: layers.into_iter().map(portable_layer).collect(),
                    embedding_index: emb,
                    projection_index: proj,
                }
            })
            .collect();
        PortableModel {
            format: PORTABLE_FORMAT.to_string(),
            version: PORTABLE_VERSION,
            schema_fingerprint: format!("{:016x}", model.fingerprint()),
            attributes,
            regressor: model.regressor.iter().map(portable_layer).collect(),
            target_scale: model.target_scale,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: PortableModel = serde_json::from_str(text)?;
        if m.format != PORTABLE_FORMAT {
            return Err(Error::Format(format!("unexpected format tag `{}`", m.format)));
        }
        if m.version != PORTABLE_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: PORTABLE_VERSION,
            });
        }
        for l in m.attributes.iter().flat_map(|a| &a.layers).chain(&m.regressor) {
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(Error::Format("layer weight count does not match shape".into()));
            }
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn input_width(&self) -> usize {
        self.attributes.iter().map(|a| a.input_width).sum()
    }

    /// Prediction for one many-hot query given as 0.0/1.0 values, in raw units.
    pub fn predict(&self, query: &[f64]) -> Result<f64> {
        if query.len() != self.input_width() {
            return Err(Error::Shape(format!(
                "query width {} != {}",
                query.len(),
                self.input_width()
            )));
        }
        let mut concat = Vec::new();
        let mut off = 0;
        for t in &self.attributes {
            let mut h = query[off..off + t.input_width].to_vec();
            off += t.input_width;
            for l in &t.layers[..=t.embedding_index] {
                h = apply(l, &h);
            }
            concat.extend(h);
        }
        let mut h = concat;
        for l in &self.regressor {
            h = apply(l, &h);
        }
        Ok(h[0] * self.target_scale)
    }

    /// 2D projection of one attribute segment.
    pub fn project(&self, attr: usize, segment: &[f64]) -> [f64; 2] {
        let t = &self.attributes[attr];
        let mut h = segment.to_vec();
        for l in &t.layers[..=t.projection_index] {
            h = apply(l, &h);
        }
        [h[0], h[1]]
    }
}

fn apply(l: &PortableLayer, x: &[f64]) -> Vec<f64> {
    (0..l.rows)
        .map(|r| {
            let row = &l.w[r * l.cols..(r + 1) * l.cols];
            let z = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + l.b[r];
            match l.activation {
                Activation::Relu => z.max(0.0),
                Activation::Identity => z,
                Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            }
        })
        .collect()
}

impl Model {
    /// The portable document as bytes; identical to what [`Model::export_portable`] writes.
    pub fn portable_json(&self) -> Vec<u8> {
        serde_json::to_vec(&PortableModel::from_model(self)).expect("portable model serializes")
    }

    pub fn export_portable(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.portable_json()).map_err(|e| Error::io(path, e))
    }
}
