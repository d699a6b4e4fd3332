//! Binary tensor files.
//!
//! Plain tensors (`.f32t`):
//!
//! ```text
//! "UMAD" | u32 version = 1 | u32 rank | rank x u32 dims (H, W[, C]) | f32 payload
//! ```
//!
//! Feature stacks (`.umfs`):
//!
//! ```text
//! "UMFS" | u32 version = 1 | u32 N | N x (u32 h, u32 w, u32 c) | layer payloads
//! ```
//!
//! All integers and floats are little-endian; payloads are row-major with
//! channels innermost. Rank 2 files hold anomaly maps, rank 3 files hold
//! images. The normalized flag of an anomaly map is not persisted.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{AnomalyMap, FeatureLayer, FeatureStack, ImageTensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"UMAD";
pub const FEATURE_MAGIC: &[u8; 4] = b"UMFS";
pub const FORMAT_VERSION: u32 = 1;

/// Anything that can be written as a tensor file.
pub trait TensorFile {
    fn encode(&self) -> Vec<u8>;
}

/// A decoded tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Image(ImageTensor),
    Map(AnomalyMap),
    Features(FeatureStack),
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_payload(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn tensor_header(dims: &[usize], payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * payload_len);
    out.extend_from_slice(TENSOR_MAGIC);
    push_u32(&mut out, FORMAT_VERSION as usize);
    push_u32(&mut out, dims.len());
    for &d in dims {
        push_u32(&mut out, d);
    }
    out
}

impl TensorFile for ImageTensor {
    fn encode(&self) -> Vec<u8> {
        let mut out = tensor_header(&[self.height(), self.width(), self.channels()], self.data().len());
        push_payload(&mut out, self.data());
        out
    }
}

impl TensorFile for AnomalyMap {
    fn encode(&self) -> Vec<u8> {
        let mut out = tensor_header(&[self.height(), self.width()], self.data().len());
        push_payload(&mut out, self.data());
        out
    }
}

impl TensorFile for FeatureStack {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FEATURE_MAGIC);
        push_u32(&mut out, FORMAT_VERSION as usize);
        push_u32(&mut out, self.len());
        for layer in self.layers() {
            push_u32(&mut out, layer.height());
            push_u32(&mut out, layer.width());
            push_u32(&mut out, layer.channels());
        }
        for layer in self.layers() {
            push_payload(&mut out, layer.data());
        }
        out
    }
}

impl TensorFile for Tensor {
    fn encode(&self) -> Vec<u8> {
        match self {
            Tensor::Image(t) => t.encode(),
            Tensor::Map(t) => t.encode(),
            Tensor::Features(t) => t.encode(),
        }
    }
}

pub fn write_tensor<T: TensorFile + ?Sized>(path: impl AsRef<Path>, tensor: &T) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    match read_tensor(path)? {
        Tensor::Image(t) => Ok(t),
        _ => Err(Error::format(path, "rank", "expected a rank-3 image tensor")),
    }
}

pub fn read_map(path: impl AsRef<Path>) -> Result<AnomalyMap> {
    let path = path.as_ref();
    match read_tensor(path)? {
        Tensor::Map(t) => Ok(t),
        _ => Err(Error::format(path, "rank", "expected a rank-2 anomaly map")),
    }
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureStack> {
    let path = path.as_ref();
    match read_tensor(path)? {
        Tensor::Features(t) => Ok(t),
        _ => Err(Error::format(path, "magic", "expected a UMFS feature stack")),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                field,
                format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn payload(&mut self, len: usize) -> Result<Vec<f32>> {
        let bytes = len
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.path, "dims", "dimension product overflows"))?;
        let raw = self.take(bytes, "payload")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                self.path,
                "payload",
                format!("non-finite value at element {i}"),
            ));
        }
        Ok(data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                "payload",
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Decodes a tensor file held in memory; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let magic = cur.take(4, "magic")?;
    let is_features = match magic {
        m if m == TENSOR_MAGIC => false,
        m if m == FEATURE_MAGIC => true,
        m => {
            return Err(Error::format(
                path,
                "magic",
                format!("unrecognised magic {m:?}"),
            ))
        }
    };
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::format(
            path,
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let tensor = if is_features {
        decode_features(&mut cur)?
    } else {
        decode_plain(&mut cur)?
    };
    cur.finish()?;
    Ok(tensor)
}

fn decode_plain(cur: &mut Cursor<'_>) -> Result<Tensor> {
    let path = cur.path;
    let rank = cur.u32("rank")?;
    if rank != 2 && rank != 3 {
        return Err(Error::format(path, "rank", format!("unsupported rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| cur.u32("dims"))
        .collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return Err(Error::format(path, "dims", format!("zero dimension in {dims:?}")));
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, "dims", "dimension product overflows"))?;
    let data = cur.payload(len)?;
    let invalid = |e: Error| Error::format(path, "payload", e.to_string());
    if rank == 2 {
        AnomalyMap::new(dims[0], dims[1], data)
            .map(Tensor::Map)
            .map_err(invalid)
    } else {
        if dims[2] != 1 && dims[2] != 3 {
            return Err(Error::format(
                path,
                "dims",
                format!("image channels must be 1 or 3, got {}", dims[2]),
            ));
        }
        ImageTensor::new(dims[0], dims[1], dims[2], data)
            .map(Tensor::Image)
            .map_err(invalid)
    }
}

fn decode_features(cur: &mut Cursor<'_>) -> Result<Tensor> {
    let path = cur.path;
    let n = cur.u32("layer count")?;
    if n == 0 {
        return Err(Error::format(path, "layer count", "feature stack has no layers"));
    }
    let mut shapes = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let h = cur.u32("layer dims")?;
        let w = cur.u32("layer dims")?;
        let c = cur.u32("layer dims")?;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::format(
                path,
                "layer dims",
                format!("empty layer {h}x{w}x{c}"),
            ));
        }
        shapes.push((h, w, c));
    }
    let mut layers = Vec::with_capacity(n);
    for (h, w, c) in shapes {
        let len = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::format(path, "layer dims", "dimension product overflows"))?;
        let data = cur.payload(len)?;
        layers.push(
            FeatureLayer::new(h, w, c, data)
                .map_err(|e| Error::format(path, "layer dims", e.to_string()))?,
        );
    }
    FeatureStack::new(layers)
        .map(Tensor::Features)
        .map_err(|e| Error::format(path, "layer dims", e.to_string()))
}
