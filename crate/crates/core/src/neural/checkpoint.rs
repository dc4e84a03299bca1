//! The `AIP1` checkpoint file.
//!
//! Layout, all integers little-endian u32:
//! magic `AIP1`; architecture code, input dim, recurrent layers, hidden,
//! dense hidden, dense activation (0 linear, 1 tanh), output dim; dropout
//! as f64; metadata count then `key`/`value` strings (u32 length + UTF-8);
//! parameter block count then extra block count, then blocks of
//! `name`, rows, cols and rows×cols f32 values in row-major order.
//! Parameter blocks come in [`ParamTensors`] order.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::{Activation, Architecture, ModelParams, ModelSpec, ParamTensors};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AIP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Free-form string metadata, e.g. the feature kind.
    pub meta: BTreeMap<String, String>,
    /// Additional named matrices, e.g. target normalization statistics.
    pub extras: BTreeMap<String, Array2<f64>>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            meta: BTreeMap::new(),
            extras: BTreeMap::new(),
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_block(out: &mut Vec<u8>, name: &str, m: &Array2<f64>) {
    put_str(out, name);
    put_u32(out, m.nrows());
    put_u32(out, m.ncols());
    for &v in m.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let spec = &ckpt.params.spec;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, spec.architecture.code() as usize);
    for n in [spec.input_dim, spec.n_recurrent_layers, spec.hidden, spec.dense_hidden] {
        put_u32(&mut out, n);
    }
    put_u32(&mut out, usize::from(spec.dense_activation == Activation::Tanh));
    put_u32(&mut out, spec.output_dim);
    out.extend_from_slice(&spec.dropout.to_le_bytes());
    put_u32(&mut out, ckpt.meta.len());
    for (k, v) in &ckpt.meta {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    let tensors = ckpt.params.tensors();
    put_u32(&mut out, tensors.len());
    put_u32(&mut out, ckpt.extras.len());
    for (name, t) in tensors {
        put_block(&mut out, &name, t);
    }
    for (name, t) in &ckpt.extras {
        put_block(&mut out, name, t);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from(f32::from_le_bytes(self.take(4)?.try_into().unwrap())))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid UTF-8 string".to_string())
    }

    fn block(&mut self) -> std::result::Result<(String, Array2<f64>), String> {
        let name = self.string()?;
        let (rows, cols) = (self.u32()?, self.u32()?);
        let len = rows.checked_mul(cols).ok_or("block size overflow")?;
        if len.saturating_mul(4) > self.bytes.len() - self.pos {
            return Err(format!("block {name} is truncated"));
        }
        let data = (0..len)
            .map(|_| self.f32())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok((name, Array2::from_shape_vec((rows, cols), data).unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err("missing AIP1 header".into());
    }
    let code = r.u32()? as u32;
    let architecture = Architecture::from_code(code).ok_or_else(|| format!("unknown architecture code {code}"))?;
    let (input_dim, n_recurrent_layers, hidden, dense_hidden) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let dense_activation = match r.u32()? {
        0 => Activation::Linear,
        1 => Activation::Tanh,
        a => return Err(format!("unknown activation code {a}")),
    };
    let output_dim = r.u32()?;
    let dropout = r.f64()?;
    let spec = ModelSpec {
        architecture,
        input_dim,
        n_recurrent_layers,
        hidden,
        dense_hidden,
        dense_activation,
        output_dim,
        dropout,
    };
    spec.validate().map_err(|e| e.to_string())?;
    let mut meta = BTreeMap::new();
    for _ in 0..r.u32()? {
        let k = r.string()?;
        meta.insert(k, r.string()?);
    }
    let (n_params, n_extras) = (r.u32()?, r.u32()?);
    let mut params = ModelParams::zeros(&spec);
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    if n_params != names.len() {
        return Err(format!("expected {} parameter blocks, found {n_params}", names.len()));
    }
    for (want, slot) in names.iter().zip(params.tensors_mut()) {
        let (name, m) = r.block()?;
        if &name != want {
            return Err(format!("expected block {want}, found {name}"));
        }
        if m.dim() != slot.dim() {
            return Err(format!("block {name} is {:?}, expected {:?}", m.dim(), slot.dim()));
        }
        *slot = m;
    }
    let mut extras = BTreeMap::new();
    for _ in 0..n_extras {
        let (name, m) = r.block()?;
        extras.insert(name, m);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Checkpoint { params, meta, extras })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|m| Error::format("checkpoint", path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut spec = ModelSpec::new(Architecture::Bilstm, 5);
        spec.hidden = 3;
        spec.dense_hidden = 4;
        spec.n_recurrent_layers = 2;
        let mut params = ModelParams::init(&spec, 3).unwrap();
        for t in params.tensors_mut() {
            t.mapv_inplace(|v| f64::from(v as f32));
        }
        let mut c = Checkpoint::new(params);
        c.meta.insert("features".into(), "mfcc".into());
        c.extras.insert("norm.mean".into(), ndarray::array![[0.5, -0.25]]);
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = encode_checkpoint(&c);
        assert_eq!(&bytes[..4], b"AIP1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode_checkpoint(&sample());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }
}
