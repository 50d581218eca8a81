//! `arw attack` — run one attack over a dataset, with a per-image
//! norm-bound audit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use arw_core::attacks::{
    apply_patch, auto_pgd, cap_run, fgsm, gaussian_noise, rp2, sign_mask, simba, Budget,
    DetectorObjective, DetectorScore, NormKind, RegressorObjective, RegressorScore, SimbaBasis,
    TransformSampler,
};
use arw_core::error::{ArwError, Result};
use arw_core::models::{load, regressor_forward, ModelKind};
use arw_core::rng::Rng;
use arw_core::scenegen::{
    encode_ppm, load_dataset, write_dataset, DatasetManifest, ImageSource, ManifestEntry,
    RoadScene, SceneLabel,
};
use arw_core::tensor::Tensor;
use clap::Args;

use super::{args_hash, resolve, stamp, write_text};

pub const ATTACK_NAMES: &str = "gaussian|fgsm|autopgd|simba|rp2|cap";

#[derive(Args)]
pub struct AttackArgs {
    /// Attack name: gaussian | fgsm | autopgd | simba | rp2 | cap.
    #[arg(long)]
    name: String,

    /// Checkpoint of the model under attack.
    #[arg(long)]
    ckpt: PathBuf,

    /// Dataset manifest to attack.
    #[arg(long)]
    data: PathBuf,

    /// Output directory (attacked images + manifest + metrics.csv).
    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 8.0 / 255.0)]
    eps: f32,

    #[arg(long, default_value_t = 2.0 / 255.0)]
    alpha: f32,

    #[arg(long, default_value_t = 20)]
    iters: usize,

    #[arg(long, default_value_t = 400)]
    queries: usize,

    #[arg(long, default_value_t = 0.08)]
    sigma: f32,

    #[arg(long, default_value_t = 0.05)]
    lambda: f32,

    /// SimBA basis: pixel | dct.
    #[arg(long, default_value = "pixel")]
    basis: String,

    #[arg(long, default_value_t = 1)]
    seed: u64,
}

struct PerImage {
    x_adv: Tensor,
    linf: f32,
    l2_sq: f64,
    bound_desc: String,
    within: bool,
    queries: usize,
    success: bool,
}

pub fn cmd_attack(workdir: &Path, args: AttackArgs) -> Result<()> {
    let seed = match std::env::var("ARW_SEED") {
        Ok(s) => s
            .parse()
            .map_err(|_| ArwError::config(format!("ARW_SEED: cannot parse {s:?}")))?,
        Err(_) => args.seed,
    };
    let model = load(&resolve(workdir, &args.ckpt))?;
    let data = load_dataset(&resolve(workdir, &args.data))?;
    if data.is_empty() {
        return Err(ArwError::config("attack: dataset is empty or missing"));
    }
    let basis = match args.basis.as_str() {
        "pixel" => SimbaBasis::Pixel,
        "dct" => SimbaBasis::Dct,
        other => return Err(ArwError::config(format!("unknown basis {other:?}"))),
    };
    let budget = |max_iters: usize| Budget {
        norm: NormKind::Linf,
        epsilon: args.eps,
        alpha: args.alpha,
        max_iters,
        max_queries: args.queries,
        seed,
    };

    let mut results: Vec<PerImage> = Vec::with_capacity(data.len());
    match args.name.as_str() {
        "cap" => {
            if model.kind != ModelKind::DistanceRegressor {
                return Err(ArwError::config("cap needs a regressor checkpoint"));
            }
            let frames: Vec<RoadScene> = (0..data.len())
                .map(|i| {
                    let SceneLabel::Road {
                        distance_m,
                        bbox,
                        width_clamped,
                    } = data.entries[i].label
                    else {
                        return Err(ArwError::contract("cap expects road labels"));
                    };
                    Ok(RoadScene {
                        image: data.load_image(i)?,
                        distance_m,
                        lead_box: bbox,
                        width_clamped,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            for (_, r) in cap_run(&model, &frames, &budget(1), args.lambda)? {
                let linf = r.delta.max_abs();
                results.push(PerImage {
                    linf,
                    l2_sq: r.delta.l2_norm_sq(),
                    bound_desc: format!("linf<={}", args.eps),
                    within: linf <= args.eps,
                    queries: r.queries_used,
                    success: r.success,
                    x_adv: r.x_adv,
                });
            }
        }
        name => {
            for i in 0..data.len() {
                let img = data.load_image(i)?;
                let label = &data.entries[i].label;
                let tag = Rng::new(seed).derive(i as u64).next_u64();
                let per = match name {
                    "gaussian" => {
                        let r = gaussian_noise(&img, args.sigma, tag)?;
                        PerImage {
                            linf: r.delta.max_abs(),
                            l2_sq: r.delta.l2_norm_sq(),
                            bound_desc: format!("sigma={}", args.sigma),
                            within: true,
                            queries: 0,
                            success: r.success,
                            x_adv: r.x_adv,
                        }
                    }
                    "fgsm" | "autopgd" => {
                        let b = budget(if name == "fgsm" { 1 } else { args.iters });
                        let r = match (model.kind, label) {
                            (ModelKind::SignDetector, SceneLabel::Sign { present, bbox }) => {
                                let obj = DetectorObjective {
                                    model: &model,
                                    present: *present,
                                    gt_box: *bbox,
                                };
                                if name == "fgsm" {
                                    fgsm(&obj, &img, &b)?
                                } else {
                                    auto_pgd(&obj, &img, &b)?
                                }
                            }
                            (ModelKind::DistanceRegressor, SceneLabel::Road { .. }) => {
                                let clean = regressor_forward(&model, &img)?;
                                let obj = RegressorObjective {
                                    model: &model,
                                    clean_pred: clean,
                                };
                                if name == "fgsm" {
                                    fgsm(&obj, &img, &b)?
                                } else {
                                    auto_pgd(&obj, &img, &b)?
                                }
                            }
                            _ => {
                                return Err(ArwError::contract(
                                    "checkpoint kind does not match dataset labels",
                                ))
                            }
                        };
                        let linf = r.delta.max_abs();
                        PerImage {
                            linf,
                            l2_sq: r.delta.l2_norm_sq(),
                            bound_desc: format!("linf<={}", args.eps),
                            within: linf <= args.eps,
                            queries: 0,
                            success: r.success,
                            x_adv: r.x_adv,
                        }
                    }
                    "simba" => {
                        let mut b = budget(1);
                        b.seed = tag;
                        let r = match (model.kind, label) {
                            (ModelKind::SignDetector, SceneLabel::Sign { .. }) => {
                                simba(&DetectorScore { model: &model }, &img, &b, basis)?
                            }
                            (ModelKind::DistanceRegressor, SceneLabel::Road { .. }) => {
                                let clean = regressor_forward(&model, &img)?;
                                simba(
                                    &RegressorScore {
                                        model: &model,
                                        clean_pred: clean,
                                    },
                                    &img,
                                    &b,
                                    basis,
                                )?
                            }
                            _ => {
                                return Err(ArwError::contract(
                                    "checkpoint kind does not match dataset labels",
                                ))
                            }
                        };
                        let accepted = r.loss_trace.len().saturating_sub(1);
                        let bound = accepted as f64 * (args.eps as f64).powi(2);
                        PerImage {
                            linf: r.delta.max_abs(),
                            l2_sq: r.delta.l2_norm_sq(),
                            bound_desc: format!("l2sq<={bound:.6}"),
                            within: r.delta.l2_norm_sq() <= bound * (1.0 + 1e-5),
                            queries: r.queries_used,
                            success: r.success,
                            x_adv: r.x_adv,
                        }
                    }
                    "rp2" => {
                        let SceneLabel::Sign { present, bbox } = label else {
                            return Err(ArwError::contract("rp2 expects sign labels"));
                        };
                        match (present, bbox) {
                            (true, Some(gt)) => {
                                let mask = sign_mask(gt);
                                let sampler = TransformSampler {
                                    seed: tag,
                                    ..Default::default()
                                };
                                let patch = rp2(
                                    &model,
                                    &img,
                                    &mask,
                                    None,
                                    &sampler,
                                    args.lambda,
                                    args.iters,
                                )?;
                                let off_mask_zero = patch
                                    .delta
                                    .data()
                                    .iter()
                                    .zip(mask.data())
                                    .all(|(&d, &m)| m != 0.0 || d == 0.0);
                                PerImage {
                                    linf: patch.delta.max_abs(),
                                    l2_sq: patch.delta.l2_norm_sq(),
                                    bound_desc: "support<=mask".to_string(),
                                    within: off_mask_zero,
                                    queries: 0,
                                    success: true,
                                    x_adv: apply_patch(&img, &patch)?,
                                }
                            }
                            _ => PerImage {
                                linf: 0.0,
                                l2_sq: 0.0,
                                bound_desc: "support<=mask".to_string(),
                                within: true,
                                queries: 0,
                                success: false,
                                x_adv: img.clone(),
                            },
                        }
                    }
                    other => {
                        return Err(ArwError::config(format!(
                            "unknown attack {other:?}; expected {ATTACK_NAMES}"
                        )))
                    }
                };
                results.push(per);
            }
        }
    }

    // write attacked images as a chained dataset plus the audit CSV
    let out = resolve(workdir, &args.out);
    let hash = args_hash(&[
        "attack".into(),
        args.name.clone(),
        args.eps.to_string(),
        args.iters.to_string(),
        args.queries.to_string(),
        seed.to_string(),
    ]);
    let head = stamp(hash, seed);
    let attacked = DatasetManifest {
        entries: results
            .iter()
            .zip(&data.entries)
            .map(|(r, e)| ManifestEntry {
                image: ImageSource::Inline(r.x_adv.clone()),
                label: e.label.clone(),
            })
            .collect(),
        split: data.split,
        seed,
    };
    write_dataset(&out, &attacked, &head)?;

    let mut csv = format!("# {head}\nindex,path,linf,l2_sq,bound,within_bound,queries_used,success\n");
    for (i, r) in results.iter().enumerate() {
        writeln!(
            csv,
            "{i},img_{i:05}.ppm,{},{},{},{},{},{}",
            r.linf,
            r.l2_sq,
            r.bound_desc,
            u8::from(r.within),
            r.queries,
            u8::from(r.success)
        )
        .ok();
    }
    write_text(&out.join("metrics.csv"), &csv)?;

    // sanity: encode one image to confirm the directory is usable
    let _ = encode_ppm(&results[0].x_adv)?;
    let violations = results.iter().filter(|r| !r.within).count();
    println!(
        "attacked {} images with {}; {} bound violations; outputs in {}",
        results.len(),
        args.name,
        violations,
        out.display()
    );
    if violations > 0 {
        return Err(ArwError::contract(format!(
            "{violations} images violated the declared bound"
        )));
    }
    Ok(())
}
