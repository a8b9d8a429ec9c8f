//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic         4 bytes  "MVCK"
//! version       u32      1
//! rng_seed      u64
//! input shape   3 × u32  C, H, W
//! layer count   u32
//! per layer     u8 kind, u32 ndims, ndims × u32
//!                 1 conv     [filters, in_channels, kernel_h, kernel_w, stride, pad]
//!                 2 relu     []
//!                 3 maxpool2 []
//!                 4 flatten  []
//!                 5 dense    [outputs, inputs]
//! parameters    per conv/dense layer in order: weights f32..., then bias f32...
//! class count   u32
//! per class     u32 byte length, UTF-8 bytes
//! ```
//!
//! Nothing may follow the last class name.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::tensor::Tensor;

use super::layers::LayerParams;
use super::model::{Layer, LayerSpec, Model};

pub const MAGIC: &[u8; 4] = b"MVCK";
pub const VERSION: u32 = 1;

/// A trained (or freshly initialized) classifier plus the metadata needed to
/// reproduce and interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub model: Model,
    pub rng_seed: u64,
    pub class_names: Vec<String>,
}

impl ModelCheckpoint {
    pub fn new(model: Model, rng_seed: u64, class_names: Vec<String>) -> Result<Self> {
        if class_names.len() != model.num_classes() {
            return Err(Error::Data(format!(
                "{} class names for a model with {} outputs",
                class_names.len(),
                model.num_classes()
            )));
        }
        Ok(Self {
            version: VERSION,
            model,
            rng_seed,
            class_names,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        for d in self.model.input_shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let specs = self.model.specs();
        out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
        for spec in &specs {
            let (kind, dims): (u8, Vec<usize>) = match *spec {
                LayerSpec::Conv {
                    filters,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                } => (1, vec![filters, in_channels, kernel_h, kernel_w, stride, pad]),
                LayerSpec::Relu => (2, vec![]),
                LayerSpec::MaxPool2 => (3, vec![]),
                LayerSpec::Flatten => (4, vec![]),
                LayerSpec::Dense { outputs, inputs } => (5, vec![outputs, inputs]),
            };
            out.push(kind);
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        for p in self.model.param_layers() {
            for v in p.weights().data().iter().chain(p.bias().data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.class_names.len() as u32).to_le_bytes());
        for name in &self.class_names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Data("checkpoint: bad magic at byte 0, expected \"MVCK\"".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Data(format!(
                "checkpoint: unsupported version {version} at byte 4"
            )));
        }
        let rng_seed = r.u64("rng_seed")?;
        let input_shape = [r.dim("input channels")?, r.dim("input height")?, r.dim("input width")?];
        let layer_count = r.u32("layer count")? as usize;
        let mut specs = Vec::new();
        for i in 0..layer_count {
            let at = r.pos;
            let kind = r.take(1, "layer kind")?[0];
            let ndims = r.u32("layer dimension count")? as usize;
            if ndims > 16 {
                return Err(Error::Data(format!(
                    "checkpoint: layer {i} claims {ndims} dimensions at byte {at}"
                )));
            }
            let dims = (0..ndims).map(|_| r.dim("layer dimension")).collect::<Result<Vec<_>>>()?;
            let spec = match (kind, &dims[..]) {
                (1, &[filters, in_channels, kernel_h, kernel_w, stride, pad]) => LayerSpec::Conv {
                    filters,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                },
                (2, []) => LayerSpec::Relu,
                (3, []) => LayerSpec::MaxPool2,
                (4, []) => LayerSpec::Flatten,
                (5, &[outputs, inputs]) => LayerSpec::Dense { outputs, inputs },
                _ => {
                    return Err(Error::Data(format!(
                        "checkpoint: invalid layer descriptor {i} (kind {kind}, dims {dims:?}) at byte {at}"
                    )))
                }
            };
            specs.push(spec);
        }
        let mut layers = Vec::with_capacity(specs.len());
        for spec in &specs {
            let layer = match *spec {
                LayerSpec::Conv {
                    filters,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                } => Layer::Conv {
                    params: LayerParams::conv(
                        r.tensor(&[filters, in_channels, kernel_h, kernel_w])?,
                        r.tensor(&[filters])?,
                    )?,
                    stride,
                    pad,
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2 => Layer::MaxPool2,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { outputs, inputs } => Layer::Dense {
                    params: LayerParams::dense(r.tensor(&[outputs, inputs])?, r.tensor(&[outputs])?)?,
                },
            };
            layers.push(layer);
        }
        let model = Model::new(input_shape, layers)
            .map_err(|e| Error::Data(format!("checkpoint: inconsistent architecture: {e}")))?;
        let class_count = r.u32("class count")? as usize;
        let mut class_names = Vec::new();
        for _ in 0..class_count {
            let len = r.u32("class name length")? as usize;
            let at = r.pos;
            let raw = r.take(len, "class name")?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::Data(format!("checkpoint: class name at byte {at} is not UTF-8")))?;
            class_names.push(name.to_string());
        }
        if r.pos != bytes.len() {
            return Err(Error::Data(format!(
                "checkpoint: {} trailing bytes after byte {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Self::new(model, rng_seed, class_names)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Data(format!(
                "checkpoint: truncated while reading {what} at byte {}",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn dim(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        match self.u32(what)? {
            0 => Err(Error::Data(format!("checkpoint: zero {what} at byte {at}"))),
            d => Ok(d as usize),
        }
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4, "parameters")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::default_architecture;

    fn sample() -> ModelCheckpoint {
        let model = Model::initialize([1, 16, 16], &default_architecture(16, 16, 3), 42).unwrap();
        ModelCheckpoint::new(model, 42, vec!["a".into(), "bé".into(), "c".into()]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"MVCK");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelCheckpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(ModelCheckpoint::from_bytes(&bad).unwrap_err().to_string().contains("version"));
        assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(ModelCheckpoint::from_bytes(&long).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn class_count_must_match_outputs() {
        let model = Model::initialize([1, 16, 16], &default_architecture(16, 16, 3), 1).unwrap();
        assert!(ModelCheckpoint::new(model, 1, vec!["a".into()]).is_err());
    }
}
