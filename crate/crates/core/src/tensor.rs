//! Layer weight tensors and their on-disk format.
//!
//! A [`LayerTensor`] has shape `(n_filters, in_channels, k, k)` and stores its
//! values row-major: the flat index of `(f, c, x, y)` is
//! `((f * in_channels + c) * k + x) * k + y`, where `x` is the kernel row and
//! `y` the kernel column.
//!
//! # File format
//!
//! One JSON object, UTF-8, pretty-printed:
//!
//! ```json
//! {
//!   "format": "corrinit-layer-tensor",
//!   "version": 1,
//!   "shape": [4, 2, 3, 3],
//!   "dtype": "f64",
//!   "order": "row-major",
//!   "seed": 7,
//!   "spec": { ... },
//!   "encoding": "base64-f64le",
//!   "data": "AAAAAAAA8D8..."
//! }
//! ```
//!
//! `data` is the standard base64 (padded) encoding of the values as
//! consecutive little-endian IEEE-754 doubles, in the order above. `seed`
//! and `spec` record provenance and may be `null`. Keys appear in exactly
//! this order, so writing the same tensor twice gives identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "corrinit-layer-tensor";
pub const FORMAT_VERSION: u32 = 1;

/// Weights of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensor {
    shape: [usize; 4],
    data: Vec<f64>,
    seed: Option<u64>,
    spec: Option<serde_json::Value>,
}

impl LayerTensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if shape[2] != shape[3] {
            return Err(Error::ShapeMismatch(format!(
                "kernels must be square, got {}x{}",
                shape[2], shape[3]
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!(
                "value at index {i} is not finite"
            )));
        }
        Ok(Self {
            shape,
            data,
            seed: None,
            spec: None,
        })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
            seed: None,
            spec: None,
        }
    }

    /// Attaches provenance recorded in the file header.
    pub fn with_provenance(mut self, seed: Option<u64>, spec: Option<serde_json::Value>) -> Self {
        self.seed = seed;
        self.spec = spec;
        self
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n_filters(&self) -> usize {
        self.shape[0]
    }

    pub fn in_channels(&self) -> usize {
        self.shape[1]
    }

    pub fn k(&self) -> usize {
        self.shape[2]
    }

    /// Number of `k x k` kernels, `n_filters * in_channels`.
    pub fn n_kernels(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn spec(&self) -> Option<&serde_json::Value> {
        self.spec.as_ref()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The `k*k` values of kernel `(filter, channel)`.
    pub fn kernel(&self, filter: usize, channel: usize) -> &[f64] {
        let kk = self.shape[2] * self.shape[3];
        let start = (filter * self.shape[1] + channel) * kk;
        &self.data[start..start + kk]
    }

    /// Iterates over all kernels in slot order `filter * in_channels + channel`.
    pub fn kernels(&self) -> impl Iterator<Item = &[f64]> {
        let kk = (self.shape[2] * self.shape[3]).max(1);
        self.data.chunks(kk)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let file = TensorFile {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            shape: self.shape.to_vec(),
            dtype: "f64".to_string(),
            order: "row-major".to_string(),
            seed: self.seed,
            spec: self.spec.clone(),
            encoding: "base64-f64le".to_string(),
            data: STANDARD.encode(&bytes),
        };
        serde_json::to_writer_pretty(&mut writer, &file)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_json(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
    }

    pub fn read_json<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TensorFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let at = |key: &str| text.find(&format!("\"{key}\"")).unwrap_or(0);
        let fail = |key: &str, message: String| Error::Parse {
            offset: at(key),
            message,
        };
        if file.format != FORMAT_NAME {
            return Err(fail("format", format!("unknown format `{}`", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(fail("version", format!("unsupported version {}", file.version)));
        }
        if file.dtype != "f64" || file.order != "row-major" || file.encoding != "base64-f64le" {
            return Err(fail(
                "dtype",
                "expected dtype f64, order row-major, encoding base64-f64le".to_string(),
            ));
        }
        let shape: [usize; 4] = file
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| fail("shape", format!("shape must have 4 entries, got {}", file.shape.len())))?;
        let bytes = STANDARD
            .decode(file.data.as_bytes())
            .map_err(|e| fail("data", format!("bad base64 payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(fail("data", format!("payload length {} is not a multiple of 8", bytes.len())));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let tensor = LayerTensor::new(shape, data).map_err(|e| fail("data", e.to_string()))?;
        Ok(tensor.with_provenance(file.seed, file.spec))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = std::io::BufWriter::new(file);
        self.write_json(&mut writer)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    format: String,
    version: u32,
    shape: Vec<usize>,
    dtype: String,
    order: String,
    seed: Option<u64>,
    spec: Option<serde_json::Value>,
    encoding: String,
    data: String,
}

/// Converts serde_json's 1-based line and byte column into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
