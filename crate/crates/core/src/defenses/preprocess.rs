//! Input-processing defenses: median blurring, bit-depth reduction and
//! randomized resize-pad-noise.

use crate::error::{ArwError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-channel k×k median filter with edge-replication padding.
pub fn median_blur(x: &Tensor, k: usize) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(ArwError::dimension("median_blur expects HxWxC"));
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    if k % 2 == 0 || k < 3 {
        return Err(ArwError::contract(format!("kernel {k} must be odd and >= 3")));
    }
    if k > h.min(w) {
        return Err(ArwError::contract(format!(
            "kernel {k} exceeds image side {}",
            h.min(w)
        )));
    }
    let r = k / 2;
    let mut out = vec![0.0f32; x.numel()];
    let mut window = Vec::with_capacity(k * k);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                window.clear();
                for dy in 0..k {
                    let sy = (y + dy).saturating_sub(r).min(h - 1);
                    for dx in 0..k {
                        let sx = (xx + dx).saturating_sub(r).min(w - 1);
                        window.push(x.data()[(sy * w + sx) * c + ch]);
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).expect("finite pixels"));
                out[(y * w + xx) * c + ch] = window[window.len() / 2];
            }
        }
    }
    Tensor::from_vec(shape, out)
}

/// Quantizes each channel to 2^bits levels: round(v*(2^b-1))/(2^b-1).
pub fn bit_depth_reduce(x: &Tensor, bits: u8) -> Result<Tensor> {
    if !(1..=8).contains(&bits) {
        return Err(ArwError::contract(format!("bits {bits} outside 1..=8")));
    }
    let levels = ((1u32 << bits) - 1) as f32;
    let data = x
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * levels).round() / levels)
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Random nearest-neighbor downscale to s in [54,64], zero-pad back at a
/// random offset, plus uniform noise U(-1/255, 1/255). Deterministic per
/// seed.
pub fn randomize(x: &Tensor, seed: u64) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(ArwError::dimension("randomize expects HxWxC"));
    }
    let side = shape[0];
    let mut rng = Rng::new(seed);
    let s = side - rng.below(11.min(side)); // [side-10, side]
    let max_off = side - s;
    let ox = if max_off > 0 { rng.below(max_off + 1) } else { 0 };
    let oy = if max_off > 0 { rng.below(max_off + 1) } else { 0 };
    randomize_parts(x, s, ox, oy, &mut |r| r.range(-1.0 / 255.0, 1.0 / 255.0), &mut rng)
}

fn randomize_parts(
    x: &Tensor,
    s: usize,
    ox: usize,
    oy: usize,
    noise: &mut dyn FnMut(&mut Rng) -> f32,
    rng: &mut Rng,
) -> Result<Tensor> {
    let shape = x.shape();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut out = vec![0.0f32; x.numel()];
    for y in 0..s {
        let sy = (y * h) / s;
        for xx in 0..s {
            let sx = (xx * w) / s;
            for ch in 0..c {
                out[((y + oy) * w + (xx + ox)) * c + ch] = x.data()[(sy * w + sx) * c + ch];
            }
        }
    }
    for v in out.iter_mut() {
        *v = (*v + noise(rng)).clamp(0.0, 1.0);
    }
    Tensor::from_vec(shape, out)
}
