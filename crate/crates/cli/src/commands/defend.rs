//! `arw defend` / `arw restore` — input-processing defenses over a
//! dataset.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use arw_core::defenses::{
    bit_depth_reduce, default_denoiser, diffpir_restore, median_blur, psnr, randomize,
    train_denoiser, DiffusionSchedule,
};
use arw_core::error::{ArwError, Result};
use arw_core::models::{load_expecting, save, ModelKind};
use arw_core::rng::Rng;
use arw_core::scenegen::{
    load_dataset, write_dataset, DatasetManifest, ImageSource, ManifestEntry,
};
use clap::Args;

use super::{args_hash, resolve, stamp, write_text};

#[derive(Args)]
pub struct DefendArgs {
    /// Defense: medianblur | bitdepth | randomize.
    #[arg(long)]
    name: String,

    /// Dataset manifest to process.
    #[arg(long)]
    data: PathBuf,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    /// Median kernel size (odd).
    #[arg(short = 'k', long, default_value_t = 3)]
    kernel: usize,

    /// Bit depth.
    #[arg(long, default_value_t = 3)]
    bits: u8,

    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn cmd_defend(workdir: &Path, args: DefendArgs) -> Result<()> {
    let data = load_dataset(&resolve(workdir, &args.data))?;
    if data.is_empty() {
        return Err(ArwError::config("defend: dataset is empty or missing"));
    }
    let mut entries = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let img = data.load_image(i)?;
        let processed = match args.name.as_str() {
            "medianblur" => median_blur(&img, args.kernel)?,
            "bitdepth" => bit_depth_reduce(&img, args.bits)?,
            "randomize" => randomize(&img, Rng::new(args.seed).derive(i as u64).next_u64())?,
            other => {
                return Err(ArwError::config(format!(
                    "unknown defense {other:?}; expected medianblur|bitdepth|randomize (use `restore` for diffpir)"
                )))
            }
        };
        entries.push(ManifestEntry {
            image: ImageSource::Inline(processed),
            label: data.entries[i].label.clone(),
        });
    }
    let out = resolve(workdir, &args.out);
    let hash = args_hash(&[
        "defend".into(),
        args.name.clone(),
        args.kernel.to_string(),
        args.bits.to_string(),
        args.seed.to_string(),
    ]);
    let processed = DatasetManifest {
        entries,
        split: data.split,
        seed: args.seed,
    };
    write_dataset(&out, &processed, &stamp(hash, args.seed))?;
    println!(
        "applied {} to {} images -> {}",
        args.name,
        processed.len(),
        out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct RestoreArgs {
    /// Dataset manifest of (attacked) images to restore.
    #[arg(long)]
    data: PathBuf,

    /// Denoiser checkpoint; trained on --train-data when absent.
    #[arg(long)]
    denoiser: Option<PathBuf>,

    /// Clean dataset for ad-hoc denoiser training.
    #[arg(long)]
    train_data: Option<PathBuf>,

    /// Optional clean reference manifest: when given, metrics.csv
    /// reports per-image PSNR before and after restoration.
    #[arg(long)]
    reference: Option<PathBuf>,

    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 0.1)]
    sigma: f32,

    #[arg(long, default_value_t = 1)]
    seed: u64,
}

pub fn cmd_restore(workdir: &Path, args: RestoreArgs) -> Result<()> {
    let data = load_dataset(&resolve(workdir, &args.data))?;
    if data.is_empty() {
        return Err(ArwError::config("restore: dataset is empty or missing"));
    }
    let out = resolve(workdir, &args.out);
    let denoiser_model = match &args.denoiser {
        Some(p) => load_expecting(&resolve(workdir, p), ModelKind::Denoiser)?,
        None => {
            let train_path = args.train_data.as_ref().ok_or_else(|| {
                ArwError::config("restore: provide --denoiser or --train-data")
            })?;
            let train_set = load_dataset(&resolve(workdir, train_path))?;
            let (model, _) = train_denoiser(&train_set, args.sigma, 6, 0.05, args.seed)?;
            save(&model, &out.join("denoiser.arwb"))?;
            model
        }
    };
    let schedule = DiffusionSchedule::default_schedule();
    let denoiser = default_denoiser(&denoiser_model);

    let reference = match &args.reference {
        Some(p) => Some(load_dataset(&resolve(workdir, p))?),
        None => None,
    };

    let hash = args_hash(&[
        "restore".into(),
        args.sigma.to_string(),
        args.seed.to_string(),
    ]);
    let head = stamp(hash, args.seed);
    let mut entries = Vec::with_capacity(data.len());
    let mut csv = format!("# {head}\nindex,psnr_before,psnr_after\n");
    for i in 0..data.len() {
        let img = data.load_image(i)?;
        let restored = diffpir_restore(
            &img,
            &schedule,
            &denoiser,
            Rng::new(args.seed).derive(i as u64).next_u64(),
        )?;
        if let Some(reference) = &reference {
            let clean = reference.load_image(i)?;
            writeln!(
                csv,
                "{i},{},{}",
                psnr(&img, &clean)?,
                psnr(&restored, &clean)?
            )
            .ok();
        } else {
            writeln!(csv, "{i},,").ok();
        }
        entries.push(ManifestEntry {
            image: ImageSource::Inline(restored),
            label: data.entries[i].label.clone(),
        });
    }
    let restored = DatasetManifest {
        entries,
        split: data.split,
        seed: args.seed,
    };
    write_dataset(&out, &restored, &head)?;
    write_text(&out.join("metrics.csv"), &csv)?;
    println!("restored {} images -> {}", restored.len(), out.display());
    Ok(())
}
