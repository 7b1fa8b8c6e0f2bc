//! Versioned model checkpoints.
//!
//! Layout, all little-endian: magic `FLOWBNCH`, `u32` version, `u8` model
//! kind, `u32` height and width, `u32` hyperparameter count followed by
//! `(u16 name length, name, f64 value)` entries, then `u32` tensor count
//! followed by `(u16 name length, name, u8 ndim, u32 dims…, f64 values…)`
//! in parameter enumeration order.

use std::fs;
use std::path::Path;

use flowbench_core::models::{FlowModel, FrameGeometry, ModelConfig, ModelKind};
use flowbench_core::nn::Parameters;
use flowbench_core::rng::stream;

use crate::error::{io_at, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLOWBNCH";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

pub fn encode_checkpoint(model: &FlowModel) -> Vec<u8> {
    let config = model.config();
    let g = config.geometry();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(config.kind().code());
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
    let hp = config.hyperparameters();
    out.extend_from_slice(&(hp.len() as u32).to_le_bytes());
    for (name, value) in &hp {
        put_name(&mut out, name);
        out.extend_from_slice(&value.to_le_bytes());
    }
    let mut tensors = Vec::new();
    model.visit(&mut |name, t| tensors.push((name.to_owned(), t.shape().to_vec(), t.data().to_vec())));
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        put_name(&mut out, &name);
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated { what: "checkpoint", expected: end as u64, found: self.bytes.len() as u64 });
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint name is not UTF-8".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FlowModel> {
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(8).map_err(|_| Error::Version("file too short to be a FLOWBNCH checkpoint".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Version(format!(
            "not a FLOWBNCH checkpoint (magic {:?})",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version(format!(
            "checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let kind = ModelKind::from_code(r.u8()?)?;
    let geometry = FrameGeometry::new(r.u32()? as usize, r.u32()? as usize)?;
    let hp = (0..r.u32()?).map(|_| Ok((r.name()?, r.f64()?))).collect::<Result<Vec<_>>>()?;
    let config = ModelConfig::from_hyperparameters(kind, geometry, &hp)?;
    let mut model = FlowModel::new(config, &mut stream(0, "checkpoint"))?;

    let mut expected = Vec::new();
    model.visit(&mut |name, t| expected.push((name.to_owned(), t.shape().to_vec())));
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!("checkpoint holds {count} tensors, {kind} has {}", expected.len())));
    }
    let mut values = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name = r.name()?;
        let shape = (0..r.u8()?).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        if &name != want_name || &shape != want_shape {
            return Err(Error::Format(format!(
                "checkpoint tensor `{name}` {shape:?} does not match `{want_name}` {want_shape:?}"
            )));
        }
        let n = shape.iter().product::<usize>();
        values.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.at)));
    }
    let mut next = values.into_iter();
    model.visit_mut(&mut |_, t| t.data_mut().copy_from_slice(&next.next().unwrap()));
    Ok(model)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &FlowModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(io_at(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FlowModel> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(io_at(path))?)
}
