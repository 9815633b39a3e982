//! Binary checkpoint format for models and datasets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "RANKGAN\0"
//! version  u32      currently 1
//! kind     string   "model" or "dataset"
//! ...      kind-specific header
//! records  u32 count, then per record:
//!   name   string
//!   ndim   u32, extents u32 each
//!   data   numel f64 payload
//! ```
//!
//! Strings are a u32 length followed by UTF-8 bytes. A model header is the
//! `MlpSpec` (widths, hidden activation + slope, output activation) and the
//! frozen flag; a dataset header is the dataset kind string. Serialization is
//! canonical, so save -> load -> save reproduces files byte for byte.

use super::{HiddenActivation, MlpSpec, ModelParams, OutputActivation};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"RANKGAN\0";
pub const VERSION: u32 = 1;

pub const KIND_MODEL: &str = "model";
pub const KIND_DATASET: &str = "dataset";

/// What `verify` found inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointSummary {
    pub kind: String,
    pub records: usize,
    pub bytes: usize,
}

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn new() -> Self {
        ByteWriter(Vec::new())
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn tensor_record(&mut self, name: &str, t: &Tensor) {
        self.string(name);
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8], path: &str) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            path: path.to_string(),
        }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.fail("invalid UTF-8 string"))
    }

    fn tensor_record(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Ok((name, Tensor::new(&shape, data)?))
    }

    fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn write_header(w: &mut ByteWriter, kind: &str) {
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.string(kind);
}

fn read_header(r: &mut ByteReader) -> Result<String> {
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(r.fail("bad magic bytes (not a checkpoint file)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            path: r.path.clone(),
            found: version,
            supported: VERSION,
        });
    }
    r.string()
}

fn spec_to_bytes(w: &mut ByteWriter, spec: &MlpSpec) {
    w.u32(spec.widths.len() as u32);
    for &width in &spec.widths {
        w.u32(width as u32);
    }
    match spec.hidden {
        HiddenActivation::LeakyRelu(slope) => {
            w.u8(0);
            w.f64(slope);
        }
        HiddenActivation::Tanh => {
            w.u8(1);
            w.f64(0.0);
        }
    }
    w.u8(match spec.output {
        OutputActivation::Identity => 0,
        OutputActivation::Tanh => 1,
        OutputActivation::Sigmoid => 2,
    });
}

fn spec_from_bytes(r: &mut ByteReader) -> Result<MlpSpec> {
    let n = r.u32()? as usize;
    let mut widths = Vec::with_capacity(n);
    for _ in 0..n {
        widths.push(r.u32()? as usize);
    }
    let hidden = match r.u8()? {
        0 => HiddenActivation::LeakyRelu(r.f64()?),
        1 => {
            r.f64()?;
            HiddenActivation::Tanh
        }
        other => return Err(r.fail(format!("unknown hidden activation tag {other}"))),
    };
    let output = match r.u8()? {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Tanh,
        2 => OutputActivation::Sigmoid,
        other => return Err(r.fail(format!("unknown output activation tag {other}"))),
    };
    Ok(MlpSpec {
        widths,
        hidden,
        output,
    })
}

fn model_to_bytes(spec: &MlpSpec, params: &ModelParams) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_header(&mut w, KIND_MODEL);
    spec_to_bytes(&mut w, spec);
    w.u8(params.frozen() as u8);
    w.u32(params.len() as u32);
    for (name, t) in params.iter() {
        w.tensor_record(name, t);
    }
    w.0
}

pub fn save_model(path: impl AsRef<Path>, spec: &MlpSpec, params: &ModelParams) -> Result<()> {
    let bytes = model_to_bytes(spec, params);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MlpSpec, ModelParams)> {
    let path_str = path.as_ref().display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes, &path_str);
    let kind = read_header(&mut r)?;
    if kind != KIND_MODEL {
        return Err(r.fail(format!("expected a `{KIND_MODEL}` checkpoint, found `{kind}`")));
    }
    let spec = spec_from_bytes(&mut r)?;
    let frozen = r.u8()? != 0;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        entries.push(r.tensor_record()?);
    }
    if !r.finished() {
        return Err(r.fail("trailing bytes after the last record"));
    }
    let mut params = ModelParams::new(entries)?;
    if frozen {
        params.freeze();
    }
    Ok((spec, params))
}

fn records_to_bytes(kind_tag: &str, records: &[(String, Tensor)]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    write_header(&mut w, KIND_DATASET);
    w.string(kind_tag);
    w.u32(records.len() as u32);
    for (name, t) in records {
        w.tensor_record(name, t);
    }
    w.0
}

/// Saves arbitrary named-tensor records under the `dataset` kind, tagged with
/// a payload kind string (the dataset kind).
pub fn save_dataset_records(
    path: impl AsRef<Path>,
    kind_tag: &str,
    records: &[(String, Tensor)],
) -> Result<()> {
    let bytes = records_to_bytes(kind_tag, records);
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_dataset_records(path: impl AsRef<Path>) -> Result<(String, Vec<(String, Tensor)>)> {
    let path_str = path.as_ref().display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes, &path_str);
    let kind = read_header(&mut r)?;
    if kind != KIND_DATASET {
        return Err(r.fail(format!(
            "expected a `{KIND_DATASET}` checkpoint, found `{kind}`"
        )));
    }
    let tag = r.string()?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        records.push(r.tensor_record()?);
    }
    if !r.finished() {
        return Err(r.fail("trailing bytes after the last record"));
    }
    Ok((tag, records))
}

/// Loads a checkpoint of either kind, re-serializes it, and confirms the
/// bytes match the file exactly.
pub fn verify_roundtrip(path: impl AsRef<Path>) -> Result<CheckpointSummary> {
    let path_str = path.as_ref().display().to_string();
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes, &path_str);
    let kind = read_header(&mut r)?;
    let (reencoded, records) = match kind.as_str() {
        KIND_MODEL => {
            let (spec, params) = load_model(&path)?;
            (model_to_bytes(&spec, &params), params.len())
        }
        KIND_DATASET => {
            let (tag, records) = load_dataset_records(&path)?;
            (records_to_bytes(&tag, &records), records.len())
        }
        other => {
            return Err(Error::Checkpoint {
                path: path_str,
                reason: format!("unknown checkpoint kind `{other}`"),
            })
        }
    };
    if reencoded != bytes {
        return Err(Error::Checkpoint {
            path: path_str,
            reason: "re-serialization does not reproduce the file".to_string(),
        });
    }
    Ok(CheckpointSummary {
        kind,
        records,
        bytes: bytes.len(),
    })
}
