//! Binary checkpoint: header, embedded run description, both weight tables.
//!
//! ```text
//! "STEMCKPT"  u32 version
//! u32 n + n bytes of JSON {run, model, panel}
//! u64 step  u64 seed
//! params table, then EMA table; each is
//!   u32 entries, then per entry:
//!   u16 n + path, u8 dtype, u8 ndim, ndim × u32 dims, values (little-endian)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::model::{GenePanel, ModelConfig, ModelParameters};
use crate::numerics::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STEMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub run: RunConfig,
    pub panel: GenePanel,
    pub step: u64,
    pub seed: u64,
    pub params: ModelParameters<T>,
    pub ema_params: ModelParameters<T>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    run: RunConfig,
    model: ModelConfig,
    panel: GenePanel,
}

fn write_table<T: Scalar>(out: &mut Vec<u8>, params: &ModelParameters<T>) {
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(out);
        }
    }
}

fn read_table<T: Scalar>(path: &Path, r: &mut Reader<'_>, config: &ModelConfig) -> Result<ModelParameters<T>> {
    let n = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = r.string(len)?;
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::format(path, format!("{name}: unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(Error::format(
                path,
                format!("{name}: stored as {dtype:?}, requested {:?}", T::DTYPE),
            ));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = r
            .take(numel * dtype.size())?
            .chunks_exact(dtype.size())
            .map(T::read_le)
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::format(path, format!("parameter {name} appears twice")));
        }
    }
    ModelParameters::new(config.clone(), tensors).map_err(|e| Error::format(path, e.to_string()))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn model(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            run: self.run.clone(),
            model: self.model().clone(),
            panel: self.panel.clone(),
        })?;
        let mut out = Vec::with_capacity(64 + header.len() + 2 * 4 * self.params.num_scalars());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        write_table(&mut out, &self.params);
        write_table(&mut out, &self.ema_params);
        Ok(out)
    }

    /// `path` only labels errors.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::format(path, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::format(path, format!("header: {e}")))?;
        if header.panel.len() != header.model.genes {
            return Err(Error::format(path, "panel length differs from the model gene count"));
        }
        let step = r.u64()?;
        let seed = r.u64()?;
        let params = read_table(path, &mut r, &header.model)?;
        let ema_params = read_table(path, &mut r, &header.model)?;
        r.finish()?;
        Ok(Checkpoint {
            run: header.run,
            panel: header.panel,
            step,
            seed,
            params,
            ema_params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(path, &fsutil::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, PanelKind};
    use crate::numerics::RngStream;

    fn sample() -> Checkpoint<f32> {
        let model = ModelConfig {
            genes: 3,
            hidden_dim: 8,
            depth: 1,
            heads: 2,
            cond_dim: 2,
            time_dim: 8,
            mlp_ratio: 2,
        };
        let params = init_parameters(&model, &RngStream::new(4, 0)).unwrap();
        let mut ema = params.clone();
        for (_, t) in ema.iter_mut() {
            for v in t.data_mut() {
                *v = *v * 0.5 + 1e-7;
            }
        }
        Checkpoint {
            run: RunConfig::desk(),
            panel: GenePanel::new(vec!["a".into(), "b".into(), "c".into()], PanelKind::Hvg).unwrap(),
            step: 42,
            seed: 7,
            params,
            ema_params: ema,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(Path::new("x"), &bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_header() {
        let mut bytes = sample().to_bytes().unwrap();
        let p = Path::new("x");
        assert!(Checkpoint::<f64>::from_bytes(p, &bytes).is_err());
        bytes[8] = 9;
        let err = Checkpoint::<f32>::from_bytes(p, &bytes).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        bytes[0] = b'X';
        let err = Checkpoint::<f32>::from_bytes(p, &bytes).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
        assert!(Checkpoint::<f32>::from_bytes(p, &[]).is_err());
    }

    #[test]
    fn rejects_truncation() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(Path::new("x"), &bytes[..bytes.len() - 3]).is_err());
    }
}
