//! `arw train` / `arw advtrain` / `arw contrastive`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use arw_core::attacks::{Budget, NormKind};
use arw_core::defenses::{
    adversarial_train, build_mixed_set, contrastive_train, craft_inner_example, InnerAttack,
};
use arw_core::error::{ArwError, Result};
use arw_core::models::{load_expecting, save, train, ModelBundle, ModelKind, TrainReport};
use arw_core::rng::Rng;
use arw_core::scenegen::{load_dataset, DatasetManifest, ImageSource, ManifestEntry};
use clap::Args;

use super::{args_hash, resolve, stamp, write_text};

fn parse_model_kind(name: &str) -> Result<ModelKind> {
    match name {
        "detector" => Ok(ModelKind::SignDetector),
        "regressor" => Ok(ModelKind::DistanceRegressor),
        other => Err(ArwError::config(format!(
            "unknown model {other:?}; expected detector|regressor"
        ))),
    }
}

fn effective_seed(seed: u64) -> Result<u64> {
    match std::env::var("ARW_SEED") {
        Ok(s) => s
            .parse()
            .map_err(|_| ArwError::config(format!("ARW_SEED: cannot parse {s:?}"))),
        Err(_) => Ok(seed),
    }
}

fn write_curve(path: &Path, header: &str, report: &TrainReport) -> Result<()> {
    let mut text = format!("# {header}\nepoch,loss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        writeln!(text, "{i},{loss}").ok();
    }
    write_text(path, &text)
}

#[derive(Args)]
pub struct TrainArgs {
    /// Model to train: detector | regressor.
    #[arg(long)]
    model: String,

    /// Path to a dataset manifest.csv (from `arw gen`).
    #[arg(long)]
    data: PathBuf,

    #[arg(long, default_value_t = 30)]
    epochs: usize,

    #[arg(long, default_value_t = 0.08)]
    lr: f32,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_train(workdir: &Path, args: TrainArgs) -> Result<()> {
    let kind = parse_model_kind(&args.model)?;
    let seed = effective_seed(args.seed)?;
    let data = load_dataset(&resolve(workdir, &args.data))?;
    if data.is_empty() {
        return Err(ArwError::config("train: dataset is empty or missing"));
    }
    let mut model = ModelBundle::new(kind, seed);
    let report = train(&mut model, &data, args.epochs, args.lr, seed)?;
    let out = resolve(workdir, &args.out);
    save(&model, &out)?;
    let hash = args_hash(&[
        "train".into(),
        args.model.clone(),
        args.epochs.to_string(),
        args.lr.to_string(),
        seed.to_string(),
    ]);
    write_curve(&out.with_extension("curve.csv"), &stamp(hash, seed), &report)?;
    println!(
        "trained {} for {} epochs; checkpoint {}",
        args.model,
        args.epochs,
        out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct AdvTrainArgs {
    /// Model to train: detector | regressor.
    #[arg(long)]
    model: String,

    /// Path to a dataset manifest.csv.
    #[arg(long)]
    data: PathBuf,

    /// Inner maximization: fgsm | autopgd | gaussian | patch | mixed.
    #[arg(long)]
    inner: String,

    /// Inner perturbation budget (Linf, or sigma for gaussian).
    #[arg(long, default_value_t = 8.0 / 255.0)]
    eps: f32,

    /// Inner step size.
    #[arg(long, default_value_t = 2.0 / 255.0)]
    alpha: f32,

    /// Inner iterations (autopgd).
    #[arg(long, default_value_t = 5)]
    iters: usize,

    /// Mixed protocol: fraction drawn from each attacked set.
    #[arg(long, default_value_t = 0.25)]
    fraction: f32,

    /// Base checkpoint to start from (fresh init when absent).
    #[arg(long)]
    ckpt: Option<PathBuf>,

    #[arg(long, default_value_t = 12)]
    epochs: usize,

    #[arg(long, default_value_t = 0.05)]
    lr: f32,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_advtrain(workdir: &Path, args: AdvTrainArgs) -> Result<()> {
    let kind = parse_model_kind(&args.model)?;
    let seed = effective_seed(args.seed)?;
    let data = load_dataset(&resolve(workdir, &args.data))?;
    if data.is_empty() {
        return Err(ArwError::config("advtrain: dataset is empty or missing"));
    }
    let mut model = match &args.ckpt {
        Some(p) => load_expecting(&resolve(workdir, p), kind)?,
        None => ModelBundle::new(kind, seed),
    };
    let budget = Budget {
        norm: NormKind::Linf,
        epsilon: args.eps,
        alpha: args.alpha,
        max_iters: args.iters,
        max_queries: 0,
        seed,
    };
    let out = resolve(workdir, &args.out);
    let hash = args_hash(&[
        "advtrain".into(),
        args.model.clone(),
        args.inner.clone(),
        args.eps.to_string(),
        args.epochs.to_string(),
        seed.to_string(),
    ]);

    let report = if args.inner == "mixed" {
        // the mixed-set protocol: attacked copies of the training set from
        // each inner family, a fraction of each drawn into one mixed
        // training manifest plus a disjoint test manifest
        let families = [
            InnerAttack::Gaussian,
            InnerAttack::Fgsm,
            InnerAttack::AutoPgd,
            InnerAttack::Patch,
        ];
        let mut per_attack = Vec::with_capacity(families.len());
        for (fi, fam) in families.iter().enumerate() {
            let mut entries = Vec::with_capacity(data.len());
            for i in 0..data.len() {
                let img = data.load_image(i)?;
                let label = &data.entries[i].label;
                let tag = Rng::new(seed).derive((fi as u64) << 32 | i as u64).next_u64();
                let adv = craft_inner_example(&model, &img, label, *fam, &budget, tag)?;
                entries.push(ManifestEntry {
                    image: ImageSource::Inline(adv),
                    label: label.clone(),
                });
            }
            per_attack.push(DatasetManifest {
                entries,
                split: data.split,
                seed,
            });
        }
        let (mixed_train, mixed_test) = build_mixed_set(&per_attack, args.fraction, seed)?;
        arw_core::scenegen::write_dataset(
            &out.with_extension("mixed_test"),
            &mixed_test,
            &stamp(hash, seed),
        )?;
        train(&mut model, &mixed_train, args.epochs, args.lr, seed)?
    } else {
        let inner = InnerAttack::parse(&args.inner)?;
        adversarial_train(&mut model, &data, inner, &budget, args.epochs, args.lr, seed)?
    };

    save(&model, &out)?;
    write_curve(&out.with_extension("curve.csv"), &stamp(hash, seed), &report)?;
    println!(
        "adversarially trained {} (inner {}) -> {}",
        args.model,
        args.inner,
        out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct ContrastiveArgs {
    /// Model to train: detector | regressor.
    #[arg(long)]
    model: String,

    #[arg(long)]
    data: PathBuf,

    #[arg(long, default_value_t = 0.5)]
    tau: f32,

    #[arg(long, default_value_t = 6)]
    epochs: usize,

    #[arg(long, default_value_t = 0.04)]
    lr: f32,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    #[arg(long)]
    ckpt: Option<PathBuf>,

    #[arg(long)]
    out: PathBuf,
}

pub fn cmd_contrastive(workdir: &Path, args: ContrastiveArgs) -> Result<()> {
    let kind = parse_model_kind(&args.model)?;
    let seed = effective_seed(args.seed)?;
    let data = load_dataset(&resolve(workdir, &args.data))?;
    if data.is_empty() {
        return Err(ArwError::config("contrastive: dataset is empty or missing"));
    }
    let mut model = match &args.ckpt {
        Some(p) => load_expecting(&resolve(workdir, p), kind)?,
        None => ModelBundle::new(kind, seed),
    };
    let report = contrastive_train(&mut model, &data, args.tau, args.epochs, args.lr, seed)?;
    let out = resolve(workdir, &args.out);
    save(&model, &out)?;
    let hash = args_hash(&[
        "contrastive".into(),
        args.model.clone(),
        args.tau.to_string(),
        args.epochs.to_string(),
        seed.to_string(),
    ]);
    write_curve(&out.with_extension("curve.csv"), &stamp(hash, seed), &report)?;
    println!("contrastively trained {} -> {}", args.model, out.display());
    Ok(())
}
