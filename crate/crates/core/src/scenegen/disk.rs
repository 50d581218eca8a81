//! Dataset persistence: PPM images plus a UTF-8 CSV manifest.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ArwError, Result};
use crate::geometry::Box2;

use super::{
    encode_ppm, DatasetManifest, ImageSource, ManifestEntry, SceneLabel, Split,
};

/// Writes every image as `img_NNNNN.ppm` plus `manifest.csv` under `dir`.
/// `stamp` is embedded as the first comment line of the manifest.
pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, stamp: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let sign = manifest.is_sign_dataset();
    let mut csv = String::new();
    writeln!(csv, "# {stamp}").ok();
    writeln!(
        csv,
        "# kind={} seed={} split={}",
        if sign { "sign" } else { "road" },
        manifest.seed,
        manifest.split.as_str()
    )
    .ok();
    if sign {
        writeln!(csv, "path,has_sign,cx,cy,w,h").ok();
    } else {
        writeln!(csv, "path,distance_m,cx,cy,w,h,width_clamped").ok();
    }

    for (i, entry) in manifest.entries.iter().enumerate() {
        let name = format!("img_{i:05}.ppm");
        let image = manifest.load_image(i)?;
        std::fs::write(dir.join(&name), encode_ppm(&image)?)?;
        match &entry.label {
            SceneLabel::Sign { present, bbox } => {
                let b = bbox.unwrap_or(Box2::new(0.0, 0.0, 0.0, 0.0));
                writeln!(
                    csv,
                    "{name},{},{},{},{},{}",
                    u8::from(*present),
                    b.cx,
                    b.cy,
                    b.w,
                    b.h
                )
                .ok();
            }
            SceneLabel::Road {
                distance_m,
                bbox,
                width_clamped,
            } => {
                writeln!(
                    csv,
                    "{name},{distance_m},{},{},{},{},{}",
                    bbox.cx,
                    bbox.cy,
                    bbox.w,
                    bbox.h,
                    u8::from(*width_clamped)
                )
                .ok();
            }
        }
    }
    std::fs::write(dir.join("manifest.csv"), csv)?;
    Ok(())
}

/// Loads a manifest written by [`write_dataset`]; image paths resolve
/// relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));

    let mut kind: Option<&str> = None;
    let mut seed = 0u64;
    let mut split = Split::Train;
    let mut entries = Vec::new();
    let mut header_seen = false;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for token in meta.split_ascii_whitespace() {
                if let Some(v) = token.strip_prefix("kind=") {
                    kind = Some(if v == "sign" { "sign" } else { "road" });
                } else if let Some(v) = token.strip_prefix("seed=") {
                    seed = v.parse().unwrap_or(0);
                } else if let Some(v) = token.strip_prefix("split=") {
                    split = if v == "test" { Split::Test } else { Split::Train };
                }
            }
            continue;
        }
        if !header_seen {
            // column header line
            if kind.is_none() {
                kind = if line.starts_with("path,has_sign") {
                    Some("sign")
                } else {
                    Some("road")
                };
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: &str| -> Result<f32> {
            s.parse::<f32>()
                .map_err(|_| ArwError::format(format!("manifest line {}: bad number {s:?}", lineno + 1)))
        };
        let label = match kind {
            Some("sign") => {
                if fields.len() != 6 {
                    return Err(ArwError::format(format!(
                        "manifest line {}: expected 6 sign columns",
                        lineno + 1
                    )));
                }
                let present = fields[1] == "1";
                let b = Box2::new(
                    parse(fields[2])?,
                    parse(fields[3])?,
                    parse(fields[4])?,
                    parse(fields[5])?,
                );
                SceneLabel::Sign {
                    present,
                    bbox: present.then_some(b),
                }
            }
            _ => {
                if fields.len() != 7 {
                    return Err(ArwError::format(format!(
                        "manifest line {}: expected 7 road columns",
                        lineno + 1
                    )));
                }
                SceneLabel::Road {
                    distance_m: parse(fields[1])?,
                    bbox: Box2::new(
                        parse(fields[2])?,
                        parse(fields[3])?,
                        parse(fields[4])?,
                        parse(fields[5])?,
                    ),
                    width_clamped: fields[6] == "1",
                }
            }
        };
        entries.push(ManifestEntry {
            image: ImageSource::File(dir.join(fields[0])),
            label,
        });
    }

    Ok(DatasetManifest { entries, split, seed })
}
