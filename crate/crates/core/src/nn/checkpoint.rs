//! Binary checkpoint format.
//!
//! ```text
//! "DDVS"            magic
//! u32               format version (1)
//! u32               layer count
//! per layer:
//!   u8              kind tag
//!   u32 rank, rank x u32 extents
//!   f32 payload     weights then biases
//! trailer:
//!   u32 rank, rank x u32 extents      model input shape
//!   u32 count, count x (u32 len, utf-8 bytes)   class labels
//! ```
//!
//! All integers and floats are little-endian. Per-kind dims and payloads:
//!
//! | tag | kind      | dims                  | payload                     |
//! |-----|-----------|-----------------------|-----------------------------|
//! | 0   | Conv2D    | `[out, in, k, k]`     | weights, then `out` biases  |
//! | 1   | MaxPool2D | `[pool]`              | none                        |
//! | 2   | ReLU      | `[]`                  | none                        |
//! | 3   | Dropout   | `[1]`                 | the rate                    |
//! | 4   | Flatten   | `[]`                  | none                        |
//! | 5   | Dense     | `[out, in]`           | weights, then `out` biases  |
//! | 6   | Softmax   | `[]`                  | none                        |

use thiserror::Error;

use super::{Layer, LayerSpec, Model, NnError, Tensor};

pub const MAGIC: &[u8; 4] = b"DDVS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint is inconsistent: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] NnError),
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    put_u32(out, dims.len() as u32);
    for &d in dims {
        put_u32(out, d as u32);
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, model.layers().len() as u32);
    for layer in model.layers() {
        match layer.spec {
            LayerSpec::Conv2D { .. } | LayerSpec::Dense { .. } => {
                let tag = if matches!(layer.spec, LayerSpec::Conv2D { .. }) { 0 } else { 5 };
                let w = layer.weights.as_ref().expect("validated model");
                let b = layer.bias.as_ref().expect("validated model");
                out.push(tag);
                put_dims(&mut out, w.shape());
                put_f32s(&mut out, w.data());
                put_f32s(&mut out, b.data());
            }
            LayerSpec::MaxPool2D { pool } => {
                out.push(1);
                put_dims(&mut out, &[pool]);
            }
            LayerSpec::ReLU => {
                out.push(2);
                put_dims(&mut out, &[]);
            }
            LayerSpec::Dropout { rate } => {
                out.push(3);
                put_dims(&mut out, &[1]);
                put_f32s(&mut out, &[rate]);
            }
            LayerSpec::Flatten => {
                out.push(4);
                put_dims(&mut out, &[]);
            }
            LayerSpec::Softmax => {
                out.push(6);
                put_dims(&mut out, &[]);
            }
        }
    }
    put_dims(&mut out, model.input_shape());
    put_u32(&mut out, model.class_labels().len() as u32);
    for label in model.class_labels() {
        put_u32(&mut out, label.len() as u32);
        out.extend_from_slice(label.as_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dims(&mut self) -> Result<Vec<usize>, CheckpointError> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Invalid(format!("rank {rank} too large")));
        }
        (0..rank).map(|_| Ok(self.u32()? as usize)).collect()
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, CheckpointError> {
        let len = n.checked_mul(4).ok_or(CheckpointError::Truncated)?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }
}

fn expect_rank(tag: u8, dims: &[usize], rank: usize) -> Result<(), CheckpointError> {
    if dims.len() == rank {
        Ok(())
    } else {
        Err(CheckpointError::Invalid(format!(
            "layer tag {tag} has rank {} dims, expected {rank}",
            dims.len()
        )))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut c = Cursor { bytes, pos: 0 };
    match c.take(4) {
        Ok(m) if m == MAGIC => {}
        _ => return Err(CheckpointError::BadMagic),
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = c.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = c.u8()?;
        let dims = c.dims()?;
        let layer = match tag {
            0 | 5 => {
                let rank = if tag == 0 { 4 } else { 2 };
                expect_rank(tag, &dims, rank)?;
                let spec = if tag == 0 {
                    if dims[2] != dims[3] {
                        return Err(CheckpointError::Invalid("non-square conv kernel".into()));
                    }
                    LayerSpec::Conv2D {
                        out_ch: dims[0],
                        in_ch: dims[1],
                        kernel: dims[2],
                    }
                } else {
                    LayerSpec::Dense {
                        out_dim: dims[0],
                        in_dim: dims[1],
                    }
                };
                let n: usize = dims.iter().product();
                let weights = Tensor::new(dims.clone(), c.f32s(n)?)?;
                let bias = Tensor::new(vec![dims[0]], c.f32s(dims[0])?)?;
                Layer {
                    spec,
                    weights: Some(weights),
                    bias: Some(bias),
                }
            }
            1 => {
                expect_rank(tag, &dims, 1)?;
                Layer {
                    spec: LayerSpec::MaxPool2D { pool: dims[0] },
                    weights: None,
                    bias: None,
                }
            }
            3 => {
                expect_rank(tag, &dims, 1)?;
                let rate = c.f32s(1)?[0];
                Layer {
                    spec: LayerSpec::Dropout { rate },
                    weights: None,
                    bias: None,
                }
            }
            2 | 4 | 6 => {
                expect_rank(tag, &dims, 0)?;
                let spec = match tag {
                    2 => LayerSpec::ReLU,
                    4 => LayerSpec::Flatten,
                    _ => LayerSpec::Softmax,
                };
                Layer {
                    spec,
                    weights: None,
                    bias: None,
                }
            }
            other => {
                return Err(CheckpointError::Invalid(format!("unknown layer tag {other}")));
            }
        };
        layers.push(layer);
    }
    let input_shape = c.dims()?;
    let label_count = c.u32()? as usize;
    let mut labels = Vec::with_capacity(label_count.min(1024));
    for _ in 0..label_count {
        let len = c.u32()? as usize;
        let raw = c.take(len)?;
        labels.push(
            String::from_utf8(raw.to_vec())
                .map_err(|_| CheckpointError::Invalid("class label is not UTF-8".into()))?,
        );
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Invalid(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(Model::from_layers(layers, labels, input_shape)?)
}
