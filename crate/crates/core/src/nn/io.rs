//! Native checkpoint format.
//!
//! `NCMD`, version u32, schema fingerprint u64, schema JSON and model config
//! JSON (each u32 length + UTF-8), target scale f64, epochs u32, seed u64,
//! layer count u32, then per layer in [`Model::layers`] order: rows u32,
//! cols u32, activation u8, row-major f64 weights, f64 biases. Little-endian.

use std::io::Write;
use std::path::Path;

use super::layer::Activation;
use super::model::{Model, ModelConfig, TrainingMeta};
use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::schema::Schema;

const MODEL_MAGIC: &[u8; 4] = b"NCMD";
const MODEL_VERSION: u32 = 1;

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64 + 8 * self.param_count());
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.fingerprint().to_le_bytes());
        for text in [
            serde_json::to_string(self.schema()).expect("schema serializes"),
            serde_json::to_string(self.config()).expect("config serializes"),
        ] {
            buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
            buf.extend_from_slice(text.as_bytes());
        }
        buf.extend_from_slice(&self.target_scale.to_le_bytes());
        buf.extend_from_slice(&self.meta.epochs.to_le_bytes());
        buf.extend_from_slice(&self.meta.seed.to_le_bytes());
        let layers: Vec<_> = self.layers().collect();
        buf.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        for l in layers {
            buf.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
            buf.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
            buf.push(l.activation.tag());
            for v in l.w.iter().chain(l.b.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let fingerprint = r.u64()?;
        let mut text = || -> Result<&str> {
            let n = r.u32()? as usize;
            std::str::from_utf8(r.take(n)?).map_err(|e| Error::Format(e.to_string()))
        };
        let schema = Schema::from_json(text()?)?;
        let config = ModelConfig::from_json(text()?)?;
        if schema.fingerprint() != fingerprint {
            return Err(Error::Fingerprint {
                expected: fingerprint,
                found: schema.fingerprint(),
            });
        }
        let mut model = Model::build(&config, &schema, 0)?;
        model.target_scale = r.f64()?;
        model.meta = TrainingMeta {
            epochs: r.u32()?,
            seed: r.u64()?,
        };
        let n_layers = r.u32()? as usize;
        if n_layers != model.layers().count() {
            return Err(Error::Format(format!(
                "{n_layers} layers stored, architecture has {}",
                model.layers().count()
            )));
        }
        for (i, l) in model.layers_mut().enumerate() {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let act =
                Activation::from_tag(r.u8()?).ok_or_else(|| Error::Format(format!("layer {i}: bad activation tag")))?;
            if (rows, cols) != (l.outputs(), l.inputs()) || act != l.activation {
                return Err(Error::Format(format!("layer {i}: shape does not match config")));
            }
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = r.f64()?;
            }
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and checks it was trained against `schema`.
    pub fn load_for(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let model = Self::load(path)?;
        if model.fingerprint() != schema.fingerprint() {
            return Err(Error::Fingerprint {
                expected: schema.fingerprint(),
                found: model.fingerprint(),
            });
        }
        Ok(model)
    }
}
