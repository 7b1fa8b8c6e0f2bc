//! Plain-text (P2) greyscale renders of `[-1, 1]` frames.

use std::fs;
use std::path::Path;

use flowbench_core::Tensor;

use crate::error::{io_at, Error, Result};

/// Grey level of `v`, mapping `[-1, 1]` affinely onto `0..=255`.
pub fn quantize(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Encodes an `[H×W]` frame, one image row per text line.
pub fn encode_pgm(frame: &Tensor) -> Result<String> {
    let [h, w] = frame.shape() else {
        return Err(Error::Format(format!("PGM needs an H×W frame, got {:?}", frame.shape())));
    };
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in frame.data().chunks(*w) {
        let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

/// Parses a P2 image back into `(width, height, grey levels)`.
pub fn parse_pgm(text: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut tokens = text.lines().filter(|l| !l.starts_with('#')).flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(Error::Format("PGM must start with P2".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format(format!("PGM {what} missing or invalid")))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if max != 255 {
        return Err(Error::Format(format!("PGM maxval {max}, expected 255")));
    }
    let pixels = (0..w * h)
        .map(|_| num("pixel").and_then(|v| u8::try_from(v).map_err(|_| Error::Format(format!("pixel {v} > 255")))))
        .collect::<Result<Vec<_>>>()?;
    Ok((w, h, pixels))
}

pub fn render_frame(frame: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(frame)?).map_err(io_at(path))
}
