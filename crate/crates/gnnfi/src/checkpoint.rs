//! `GFI1` checkpoint files.
//!
//! Layout, all integers little-endian `u32` unless noted:
//!
//! ```text
//! "GFI1"  arch:u8  dataset_len dataset_bytes
//! in_features num_classes hidden heads cheb_order sgc_hops
//! tensor_count
//! per tensor: name_len name_bytes rank dims[rank] values[f32; product(dims)]
//! ```

use std::path::Path;

use gnnfi_core::model::{Arch, Hyper, ModelCheckpoint, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFI1";

/// A checkpoint together with the name of the dataset it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub dataset: String,
    pub ckpt: ModelCheckpoint,
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("checkpoint", format!("{what} {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes a checkpoint. Non-finite weights are refused: only clean
/// models are stored.
pub fn encode_checkpoint(model: &StoredModel) -> Result<Vec<u8>> {
    let ckpt = &model.ckpt;
    ckpt.validate()?;
    if !ckpt.all_finite() {
        return Err(Error::format("checkpoint", "refusing to store non-finite weights"));
    }
    let mut out = Vec::with_capacity(64 + 4 * ckpt.total_weights());
    out.extend_from_slice(MAGIC);
    out.push(ckpt.arch.tag());
    put_u32(&mut out, model.dataset.len(), "dataset name length")?;
    out.extend_from_slice(model.dataset.as_bytes());
    let h = &ckpt.hyper;
    for (v, what) in [
        (h.in_features, "in_features"),
        (h.num_classes, "num_classes"),
        (h.hidden, "hidden"),
        (h.heads, "heads"),
        (h.cheb_order, "cheb_order"),
        (h.sgc_hops, "sgc_hops"),
    ] {
        put_u32(&mut out, v, what)?;
    }
    put_u32(&mut out, ckpt.tensors.len(), "tensor count")?;
    for t in &ckpt.tensors {
        put_u32(&mut out, t.name.len(), "name length")?;
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len(), "rank")?;
        for &d in &t.shape {
            put_u32(&mut out, d, "dimension")?;
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.file, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32()?;
        let file = self.file;
        std::str::from_utf8(self.take(len)?)
            .map(str::to_string)
            .map_err(|_| Error::format(file, format!("{what} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8], file: &str) -> Result<StoredModel> {
    let mut r = Reader { bytes, pos: 0, file };
    if r.take(4)? != MAGIC {
        return Err(Error::format(file, "not a GFI1 checkpoint"));
    }
    let tag = r.take(1)?[0];
    let arch = Arch::from_tag(tag).ok_or_else(|| Error::format(file, format!("unknown architecture tag {tag}")))?;
    let dataset = r.string("dataset name")?;
    let hyper = Hyper {
        in_features: r.u32()?,
        num_classes: r.u32()?,
        hidden: r.u32()?,
        heads: r.u32()?,
        cheb_order: r.u32()?,
        sgc_hops: r.u32()?,
    };
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(file, format!("tensor {name} is too large")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(file, "tensor too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::new(name, shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format(file, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(StoredModel {
        dataset,
        ckpt: ModelCheckpoint::new(arch, hyper, tensors)?,
    })
}

pub fn write_checkpoint(model: &StoredModel, path: &Path) -> Result<()> {
    crate::error::write(path, encode_checkpoint(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<StoredModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
