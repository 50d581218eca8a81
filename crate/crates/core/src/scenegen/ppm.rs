//! Binary PPM (P6) encoding of image tensors.

use crate::error::{ArwError, Result};
use crate::tensor::Tensor;

/// Encodes an H×W×3 image with values in [0,1] as a binary P6 pixmap,
/// maxval 255.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(ArwError::dimension(format!(
            "encode_ppm expects HxWx3, got {shape:?}"
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for &v in image.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}

/// Decodes a binary P6 pixmap into an H×W×3 tensor with values in [0,1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;

    let next_token = |pos: &mut usize| -> Result<String> {
        // skip whitespace and '#' comment lines
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(ArwError::format("ppm: truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let magic = next_token(&mut pos)?;
    if magic != "P6" {
        return Err(ArwError::format(format!("ppm: bad magic {magic:?}")));
    }
    let w: usize = next_token(&mut pos)?
        .parse()
        .map_err(|_| ArwError::format("ppm: bad width"))?;
    let h: usize = next_token(&mut pos)?
        .parse()
        .map_err(|_| ArwError::format("ppm: bad height"))?;
    let maxval: usize = next_token(&mut pos)?
        .parse()
        .map_err(|_| ArwError::format("ppm: bad maxval"))?;
    if maxval != 255 {
        return Err(ArwError::format(format!("ppm: unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(ArwError::format("ppm: zero dimension"));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ArwError::format("ppm: missing header terminator"));
    }
    pos += 1;

    let need = w * h * 3;
    if bytes.len() - pos < need {
        return Err(ArwError::format(format!(
            "ppm: payload truncated, need {need} bytes, have {}",
            bytes.len() - pos
        )));
    }
    let data: Vec<f32> = bytes[pos..pos + need]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Tensor::from_vec(&[h, w, 3], data)
}
