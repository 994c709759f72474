//! Little-endian checkpoint format: magic, version, config block, then arrays in parameter order.

use std::fs;
use std::path::Path;

use super::model::{ModelConfig, ModelParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EXBEHRT\0";
const VERSION: u32 = 1;

fn put_u64(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u64).to_le_bytes());
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let c = &params.config;
    let mut buf = Vec::with_capacity(64 + params.count() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.d_model, c.n_layers, c.n_heads, c.ff, c.m, c.n_proc, c.n_lab] {
        put_u64(&mut buf, v);
    }
    buf.extend_from_slice(&c.dropout.to_le_bytes());
    for &v in &c.vocab_sizes {
        put_u64(&mut buf, v);
    }
    put_u64(&mut buf, params.tensors.len());
    for t in &params.tensors {
        put_u64(&mut buf, t.shape().len());
        for &s in t.shape() {
            put_u64(&mut buf, s);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::CorruptFile("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CorruptFile(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u64()?;
    }
    let dropout = r.f64()?;
    let mut vocab_sizes = [0usize; 9];
    for v in &mut vocab_sizes {
        *v = r.u64()?;
    }
    let [d_model, n_layers, n_heads, ff, m, n_proc, n_lab] = dims;
    let config = ModelConfig {
        d_model,
        n_layers,
        n_heads,
        ff,
        dropout,
        vocab_sizes,
        m,
        n_proc,
        n_lab,
    };
    config.validate().map_err(|e| Error::CorruptFile(e.to_string()))?;
    let expected = ModelParams::init(&config, 0)?;
    let count = r.u64()?;
    if count != expected.tensors.len() {
        return Err(Error::CorruptFile(format!("{count} tensors, expected {}", expected.tensors.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for want in &expected.tensors {
        let ndim = r.u64()?;
        let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if shape != want.shape() {
            return Err(Error::CorruptFile(format!("tensor shape {shape:?}, expected {:?}", want.shape())));
        }
        let data = (0..want.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile("trailing bytes".into()));
    }
    Ok(ModelParams { config, tensors })
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and checks that it was written for `expected`.
pub fn load_params_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load_params(path)?;
    if &params.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {:?}, expected {:?}",
            params.config, expected
        )));
    }
    Ok(params)
}
