//! Frame-quality metrics: MSE, PSNR and SSIM.

use crate::error::{dim_err, param_err, Result};
use crate::tensor::Tensor;
use alloc::vec;

/// Peak-to-peak range of `[-1, 1]`-normalised frames.
pub const DATA_RANGE: f64 = 2.0;

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(dim_err!("mse over {} and {} values", pred.len(), target.len()));
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / pred.len() as f64)
}

/// `10·log10(range² / mse)` in dB; `+∞` when `mse == 0`.
pub fn psnr_from_mse(mse: f64, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(param_err!("PSNR data range must be positive, got {}", data_range));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(data_range * data_range / mse))
}

pub fn psnr(pred: &[f64], target: &[f64], data_range: f64) -> Result<f64> {
    psnr_from_mse(mse(pred, target)?, data_range)
}

/// SSIM window and stabilising constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 7, k1: 0.01, k2: 0.03 }
    }
}

/// Mean SSIM of one `[H×W]` frame pair over every fully contained
/// uniform window, with population moments.
pub fn ssim(pred: &Tensor, target: &Tensor, data_range: f64) -> Result<f64> {
    match (pred.shape(), target.shape()) {
        ([h, w], [h2, w2]) if h == h2 && w == w2 => {
            ssim_plane(pred.data(), target.data(), *h, *w, data_range, SsimConfig::default())
        }
        (a, b) => Err(dim_err!("ssim needs two equal H×W frames, got {:?} and {:?}", a, b)),
    }
}

/// SSIM averaged over the frames of `[batch×H×W]` tensors.
pub fn ssim_frames(pred: &Tensor, target: &Tensor, data_range: f64) -> Result<f64> {
    match (pred.shape(), target.shape()) {
        ([b, h, w], s) if s == [*b, *h, *w] => {
            let n = h * w;
            let mut total = 0.0;
            for i in 0..*b {
                let range = i * n..(i + 1) * n;
                total += ssim_plane(
                    &pred.data()[range.clone()],
                    &target.data()[range],
                    *h,
                    *w,
                    data_range,
                    SsimConfig::default(),
                )?;
            }
            Ok(total / *b as f64)
        }
        (a, b) => Err(dim_err!("ssim_frames needs two equal B×H×W tensors, got {:?} and {:?}", a, b)),
    }
}

/// Window statistics are accumulated with separable box sums.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize, data_range: f64, cfg: SsimConfig) -> Result<f64> {
    let k = cfg.window;
    if k == 0 || h < k || w < k {
        return Err(dim_err!("frame {}×{} is smaller than the {}×{} SSIM window", h, w, k, k));
    }
    if x.len() != h * w || y.len() != h * w {
        return Err(dim_err!("ssim planes hold {} and {} values, expected {}", x.len(), y.len(), h * w));
    }
    if !(data_range > 0.0) {
        return Err(param_err!("SSIM data range must be positive, got {}", data_range));
    }
    let c1 = (cfg.k1 * data_range) * (cfg.k1 * data_range);
    let c2 = (cfg.k2 * data_range) * (cfg.k2 * data_range);
    let (oh, ow) = (h - k + 1, w - k + 1);

    // Horizontal window sums of x, y, x², y², xy for every row.
    let mut rows = vec![[0.0f64; 5]; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut s = [0.0; 5];
            for j in c..c + k {
                let (a, b) = (x[r * w + j], y[r * w + j]);
                s[0] += a;
                s[1] += b;
                s[2] += a * a;
                s[3] += b * b;
                s[4] += a * b;
            }
            rows[r * ow + c] = s;
        }
    }

    let n = (k * k) as f64;
    let mut total = 0.0;
    for r in 0..oh {
        for c in 0..ow {
            let mut s = [0.0; 5];
            for i in r..r + k {
                let row = &rows[i * ow + c];
                for q in 0..5 {
                    s[q] += row[q];
                }
            }
            let (mx, my) = (s[0] / n, s[1] / n);
            let vx = s[2] / n - mx * mx;
            let vy = s[3] / n - my * my;
            let cxy = s[4] / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}
