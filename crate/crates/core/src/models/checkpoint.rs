//! Checkpoint serialization.
//!
//! Layout: magic `ARWB1`, one kind byte, a u32 tensor count, then one
//! record per tensor in name-sorted order: u32 name length, name bytes,
//! u32 rank, dims as u32, payload as f32. All integers and floats are
//! little-endian. Round-tripping reproduces parameters bit-exactly.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{ArwError, Result};
use crate::tensor::Tensor;

use super::{ModelBundle, ModelKind};

const MAGIC: &[u8; 5] = b"ARWB1";

pub fn save(model: &ModelBundle, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(model.kind.tag());
    let params: Vec<_> = model.named_params().collect();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(ArwError::format("checkpoint truncated"));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let take_u32 = |pos: &mut usize| -> Result<u32> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };

    let magic = take(&mut pos, 5)?;
    if magic != MAGIC {
        return Err(ArwError::format("bad checkpoint magic"));
    }
    let kind = ModelKind::from_tag(take(&mut pos, 1)?[0])?;
    let count = take_u32(&mut pos)? as usize;
    if count > 10_000 {
        return Err(ArwError::format("implausible tensor count"));
    }

    let mut params = BTreeMap::new();
    for _ in 0..count {
        let name_len = take_u32(&mut pos)? as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| ArwError::format("non-utf8 tensor name"))?;
        let rank = take_u32(&mut pos)? as usize;
        if rank > 8 {
            return Err(ArwError::format("implausible tensor rank"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut pos)? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = take(&mut pos, numel * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::from_vec(&shape, data)?.with_grad();
        params.insert(name, tensor);
    }
    if pos != bytes.len() {
        return Err(ArwError::format("trailing bytes after checkpoint payload"));
    }
    ModelBundle::from_parts(kind, params)
}

/// Loads a checkpoint and rejects it if the stored kind differs.
pub fn load_expecting(path: &Path, kind: ModelKind) -> Result<ModelBundle> {
    let model = load(path)?;
    if model.kind != kind {
        return Err(ArwError::format(format!(
            "checkpoint holds a {} but a {} was requested",
            model.kind.as_str(),
            kind.as_str()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("arw_ckpt_{tag}_{}.arwb", std::process::id()))
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let model = ModelBundle::new(ModelKind::SignDetector, 21);
        let path = temp_path("rt");
        save(&model, &path).unwrap();
        let back = load(&path).unwrap();
        assert!(model.params_equal(&back));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn corrupt_magic_is_format_error() {
        let model = ModelBundle::new(ModelKind::Denoiser, 2);
        let path = temp_path("magic");
        save(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load(&path), Err(ArwError::Format(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_checkpoint_is_format_error() {
        let model = ModelBundle::new(ModelKind::Denoiser, 2);
        let path = temp_path("trunc");
        save(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load(&path), Err(ArwError::Format(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let model = ModelBundle::new(ModelKind::SignDetector, 3);
        let path = temp_path("kind");
        save(&model, &path).unwrap();
        assert!(load_expecting(&path, ModelKind::SignDetector).is_ok());
        assert!(load_expecting(&path, ModelKind::DistanceRegressor).is_err());
        std::fs::remove_file(&path).ok();
    }
}
