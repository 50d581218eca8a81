//! `arw gen` — synthetic dataset generation.

use std::path::{Path, PathBuf};

use arw_core::error::{ArwError, Result};
use arw_core::scenegen::{
    generate_road_sequence, generate_sign_dataset, write_dataset, DatasetManifest, ImageSource,
    ManifestEntry, SceneLabel, Split,
};
use clap::Args;

use super::{args_hash, resolve, stamp};

#[derive(Args)]
pub struct GenArgs {
    /// Dataset kind: sign | road.
    #[arg(long)]
    kind: String,

    /// Number of scenes (sign) or frames (road).
    #[arg(long)]
    n: usize,

    #[arg(long, default_value_t = 7)]
    seed: u64,

    /// Output directory for images and manifest.csv.
    #[arg(long)]
    out: PathBuf,

    /// Road sequence start distance in meters.
    #[arg(long, default_value_t = 10.0)]
    d0: f32,

    /// Road sequence end distance in meters.
    #[arg(long, default_value_t = 70.0)]
    d1: f32,

    /// Mark the manifest as a test split.
    #[arg(long, default_value_t = false)]
    test: bool,
}

pub fn cmd_gen(workdir: &Path, args: GenArgs) -> Result<()> {
    if args.n == 0 {
        return Err(ArwError::config("gen: --n must be >= 1"));
    }
    let seed = match std::env::var("ARW_SEED") {
        Ok(s) => s
            .parse()
            .map_err(|_| ArwError::config(format!("ARW_SEED: cannot parse {s:?}")))?,
        Err(_) => args.seed,
    };
    let mut manifest: DatasetManifest = match args.kind.as_str() {
        "sign" => generate_sign_dataset(args.n, seed)?,
        "road" => {
            let frames = generate_road_sequence(args.n, args.d0, args.d1, seed)?;
            DatasetManifest {
                entries: frames
                    .into_iter()
                    .map(|f| ManifestEntry {
                        image: ImageSource::Inline(f.image),
                        label: SceneLabel::Road {
                            distance_m: f.distance_m,
                            bbox: f.lead_box,
                            width_clamped: f.width_clamped,
                        },
                    })
                    .collect(),
                split: Split::Train,
                seed,
            }
        }
        other => {
            return Err(ArwError::config(format!(
                "gen: unknown kind {other:?}; expected sign|road"
            )))
        }
    };
    if args.test {
        manifest.split = Split::Test;
    }
    let hash = args_hash(&[
        "gen".into(),
        args.kind.clone(),
        args.n.to_string(),
        seed.to_string(),
        args.d0.to_string(),
        args.d1.to_string(),
    ]);
    let out = resolve(workdir, &args.out);
    write_dataset(&out, &manifest, &stamp(hash, seed))?;
    println!("wrote {} scenes to {}", manifest.len(), out.display());
    Ok(())
}
