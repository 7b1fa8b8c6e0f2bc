//! `FLOWDAT1` raw frame files: an 8-byte magic, `u32` frame count, height
//! and width (little-endian), then every value as a little-endian `f64`,
//! frame-major and row-major within a frame.

use std::fs;
use std::path::Path;

use flowbench_core::data::FrameDataset;
use flowbench_core::models::FrameGeometry;

use crate::error::{io_at, Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"FLOWDAT1";
pub const HEADER_LEN: usize = 20;

/// Exact byte size of a file holding `n_frames` frames of `geometry`.
pub fn dataset_file_len(n_frames: usize, geometry: FrameGeometry) -> u64 {
    HEADER_LEN as u64 + (n_frames * geometry.flat_len() * 8) as u64
}

pub fn encode_dataset(ds: &FrameDataset) -> Vec<u8> {
    let g = ds.geometry();
    let mut out = Vec::with_capacity(dataset_file_len(ds.len(), g) as usize);
    out.extend_from_slice(DATASET_MAGIC);
    for v in [ds.len(), g.height, g.width] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for frame in ds.frames() {
        for v in frame.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<FrameDataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { what: "dataset header", expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    if &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "bad dataset magic {:?}, expected \"FLOWDAT1\"",
            String::from_utf8_lossy(&bytes[..8])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w) = (word(0), word(1), word(2));
    let geometry = FrameGeometry::new(h, w)?;
    let expected = dataset_file_len(n, geometry);
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated { what: "dataset", expected, found: bytes.len() as u64 });
    }
    let values: Vec<f64> =
        bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let frames = values.chunks(geometry.flat_len()).map(<[f64]>::to_vec).collect();
    Ok(FrameDataset::new(geometry, frames)?)
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &FrameDataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(ds)).map_err(io_at(path))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<FrameDataset> {
    let path = path.as_ref();
    decode_dataset(&fs::read(path).map_err(io_at(path))?)
}
