//! The attack-by-defense benchmark matrix.
//!
//! Protocol per cell: adversarial inputs are crafted once per attack
//! against the *standard* models (the transfer setting), then each cell
//! applies its defense — input defenses transform the attacked image,
//! training defenses swap in a retrained checkpoint — and evaluates
//! detection metrics on the sign set and range-binned signed errors on
//! the road sequence. The clean baseline for regression is always the
//! cell model's own prediction on the raw clean frame.

use rayon::prelude::*;

use crate::attacks::{
    auto_pgd, auto_pgd_in_region, cap_run, fgsm, fgsm_in_region, gaussian_noise,
    gaussian_noise_in_region, rp2, sign_mask, simba, simba_in_region, Budget,
    DetectorObjective, DetectorScore, RegressorObjective, RegressorScore, SimbaBasis,
    TransformSampler,
};
use crate::defenses::{
    adversarial_train, bit_depth_reduce, contrastive_train, default_denoiser, diffpir_restore,
    median_blur, randomize, train_denoiser, DefenseConfig,
};
use crate::error::{ArwError, Result};
use crate::geometry::Box2;
use crate::models::{
    decode_detections, detector_forward, regressor_forward, ModelBundle, ModelKind,
};
use crate::rng::Rng;
use crate::scenegen::{DatasetManifest, RoadScene, SceneLabel};
use crate::tensor::Tensor;

use super::{binned_signed_error, detection_metrics, DetectionMetrics, RangeBinnedError};

/// Attack selection for one matrix row.
#[derive(Debug, Clone)]
pub enum AttackSpec {
    None,
    Gaussian { sigma: f32 },
    Fgsm { budget: Budget },
    AutoPgd { budget: Budget },
    Simba { budget: Budget, basis: SimbaBasis },
    /// Sign-patch attack (detection side only).
    Rp2 { lambda: f32, iters: usize, seed: u64 },
    /// Runtime regressor patch (regression side only).
    Cap { budget: Budget, lambda: f32 },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Gaussian { .. } => "gaussian",
            AttackSpec::Fgsm { .. } => "fgsm",
            AttackSpec::AutoPgd { .. } => "autopgd",
            AttackSpec::Simba { .. } => "simba",
            AttackSpec::Rp2 { .. } => "rp2",
            AttackSpec::Cap { .. } => "cap",
        }
    }

    pub fn attacks_detector(&self) -> bool {
        !matches!(self, AttackSpec::Cap { .. })
    }

    pub fn attacks_regressor(&self) -> bool {
        !matches!(self, AttackSpec::Rp2 { .. })
    }
}

/// Standard checkpoints the matrix evaluates.
pub struct BenchModels {
    pub detector: ModelBundle,
    pub regressor: ModelBundle,
}

/// Evaluation and defense-training data.
pub struct BenchData {
    pub sign_test: DatasetManifest,
    pub road_frames: Vec<RoadScene>,
    pub sign_train: DatasetManifest,
    pub road_train: DatasetManifest,
}

/// Knobs that do not change results, only resource usage.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Confidence floor when decoding detections for AP.
    pub decode_conf: f32,
    /// NMS overlap threshold.
    pub nms_iou: f32,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            decode_conf: 0.05,
            nms_iou: 0.45,
        }
    }
}

/// One (attack, defense) evaluation outcome.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub attack: String,
    pub defense: String,
    pub detection: Option<DetectionMetrics>,
    pub regression: Option<RangeBinnedError>,
}

/// The full matrix plus reproducibility metadata.
#[derive(Debug, Clone)]
pub struct ReportTable {
    pub cells: Vec<CellOutcome>,
    pub seed: u64,
    pub config_hash: u64,
    pub detector_checksum: u64,
    pub regressor_checksum: u64,
}

fn gt_boxes(manifest: &DatasetManifest) -> Vec<Vec<Box2>> {
    manifest
        .entries
        .iter()
        .map(|e| match &e.label {
            SceneLabel::Sign {
                present: true,
                bbox: Some(b),
            } => vec![*b],
            _ => vec![],
        })
        .collect()
}

/// Crafts the attacked sign-test images for one attack against the
/// standard detector. Parallel over images, seeded per index.
pub fn attacked_sign_images(
    spec: &AttackSpec,
    detector: &ModelBundle,
    sign_test: &DatasetManifest,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let images: Vec<(Tensor, &SceneLabel)> = (0..sign_test.len())
        .map(|i| Ok((sign_test.load_image(i)?, &sign_test.entries[i].label)))
        .collect::<Result<Vec<_>>>()?;

    images
        .into_par_iter()
        .enumerate()
        .map(|(i, (img, label))| {
            let tag = Rng::new(seed).derive(0x5160 ^ i as u64).next_u64();
            let (present, bbox) = match label {
                SceneLabel::Sign { present, bbox } => (*present, *bbox),
                _ => return Err(ArwError::contract("sign dataset expected")),
            };
            let adv: Tensor = match spec {
                AttackSpec::None => img.clone(),
                AttackSpec::Gaussian { sigma } => gaussian_noise(&img, *sigma, tag)?.x_adv,
                AttackSpec::Fgsm { budget } => {
                    let obj = DetectorObjective {
                        model: detector,
                        present,
                        gt_box: bbox,
                    };
                    fgsm(&obj, &img, budget)?.x_adv
                }
                AttackSpec::AutoPgd { budget } => {
                    let obj = DetectorObjective {
                        model: detector,
                        present,
                        gt_box: bbox,
                    };
                    auto_pgd(&obj, &img, budget)?.x_adv
                }
                AttackSpec::Simba { budget, basis } => {
                    let mut b = budget.clone();
                    b.seed = tag;
                    let score = DetectorScore { model: detector };
                    simba(&score, &img, &b, *basis)?.x_adv
                }
                AttackSpec::Rp2 { lambda, iters, seed } => match bbox {
                    Some(gt) if present => {
                        let mask = sign_mask(&gt);
                        let sampler = TransformSampler {
                            seed: Rng::new(*seed).derive(i as u64).next_u64(),
                            ..Default::default()
                        };
                        let patch =
                            rp2(detector, &img, &mask, None, &sampler, *lambda, *iters)?;
                        crate::attacks::apply_patch(&img, &patch)?
                    }
                    _ => img.clone(),
                },
                AttackSpec::Cap { .. } => img.clone(),
            };
            Ok(adv)
        })
        .collect()
}

/// Crafts the attacked road frames for one attack against the standard
/// regressor. Per the evaluation protocol, every perturbation is
/// confined to the lead vehicle's image region, so the attack surface
/// shrinks with distance. CAP is inherently sequential; the rest
/// parallelize.
pub fn attacked_road_images(
    spec: &AttackSpec,
    regressor: &ModelBundle,
    frames: &[RoadScene],
    seed: u64,
) -> Result<Vec<Tensor>> {
    match spec {
        AttackSpec::Cap { budget, lambda } => {
            let runs = cap_run(regressor, frames, budget, *lambda)?;
            Ok(runs.into_iter().map(|(_, r)| r.x_adv).collect())
        }
        _ => frames
            .par_iter()
            .enumerate()
            .map(|(i, frame)| {
                let img = &frame.image;
                let bbox = &frame.lead_box;
                let tag = Rng::new(seed).derive(0x0AD0 ^ i as u64).next_u64();
                let adv = match spec {
                    AttackSpec::None | AttackSpec::Rp2 { .. } => img.clone(),
                    AttackSpec::Gaussian { sigma } => {
                        gaussian_noise_in_region(img, *sigma, tag, bbox)?.x_adv
                    }
                    AttackSpec::Fgsm { budget } => {
                        let clean = regressor_forward(regressor, img)?;
                        let obj = RegressorObjective {
                            model: regressor,
                            clean_pred: clean,
                        };
                        fgsm_in_region(&obj, img, budget, bbox)?.x_adv
                    }
                    AttackSpec::AutoPgd { budget } => {
                        let clean = regressor_forward(regressor, img)?;
                        let obj = RegressorObjective {
                            model: regressor,
                            clean_pred: clean,
                        };
                        auto_pgd_in_region(&obj, img, budget, bbox)?.x_adv
                    }
                    AttackSpec::Simba { budget, .. } => {
                        let clean = regressor_forward(regressor, img)?;
                        let mut b = budget.clone();
                        b.seed = tag;
                        let score = RegressorScore {
                            model: regressor,
                            clean_pred: clean,
                        };
                        simba_in_region(&score, img, &b, bbox)?.x_adv
                    }
                    AttackSpec::Cap { .. } => unreachable!("handled above"),
                };
                Ok(adv)
            })
            .collect(),
    }
}

/// Models in effect for one defense column.
struct CellModels {
    detector: ModelBundle,
    regressor: ModelBundle,
}

fn defended_models(
    defense: &DefenseConfig,
    models: &BenchModels,
    data: &BenchData,
) -> Result<CellModels> {
    match defense {
        DefenseConfig::AdvTrain {
            inner,
            budget,
            epochs,
            lr,
            seed,
        } => {
            let mut det = models.detector.clone();
            adversarial_train(&mut det, &data.sign_train, *inner, budget, *epochs, *lr, *seed)?;
            let mut reg = models.regressor.clone();
            adversarial_train(&mut reg, &data.road_train, *inner, budget, *epochs, *lr, *seed)?;
            Ok(CellModels {
                detector: det,
                regressor: reg,
            })
        }
        DefenseConfig::Contrastive {
            tau,
            epochs,
            lr,
            seed,
        } => {
            let mut det = models.detector.clone();
            contrastive_train(&mut det, &data.sign_train, *tau, *epochs, *lr, *seed)?;
            let mut reg = models.regressor.clone();
            contrastive_train(&mut reg, &data.road_train, *tau, *epochs, *lr, *seed)?;
            Ok(CellModels {
                detector: det,
                regressor: reg,
            })
        }
        _ => Ok(CellModels {
            detector: models.detector.clone(),
            regressor: models.regressor.clone(),
        }),
    }
}

enum InputDefense<'d> {
    Identity,
    Median(usize),
    BitDepth(u8),
    Randomize(u64),
    DiffPir {
        denoiser: &'d ModelBundle,
        schedule: &'d crate::defenses::DiffusionSchedule,
        seed: u64,
    },
}

impl InputDefense<'_> {
    fn apply(&self, img: &Tensor, index: usize) -> Result<Tensor> {
        match self {
            InputDefense::Identity => Ok(img.clone()),
            InputDefense::Median(k) => median_blur(img, *k),
            InputDefense::BitDepth(b) => bit_depth_reduce(img, *b),
            InputDefense::Randomize(seed) => {
                randomize(img, Rng::new(*seed).derive(index as u64).next_u64())
            }
            InputDefense::DiffPir {
                denoiser,
                schedule,
                seed,
            } => {
                let d = default_denoiser(denoiser);
                diffpir_restore(
                    img,
                    schedule,
                    &d,
                    Rng::new(*seed).derive(index as u64).next_u64(),
                )
            }
        }
    }
}

/// Runs every (attack, defense) cell and assembles the report, ordered
/// by the given attack then defense order. Deterministic per seed.
pub fn run_benchmark_matrix(
    models: &BenchModels,
    attacks: &[AttackSpec],
    defenses: &[DefenseConfig],
    data: &BenchData,
    seed: u64,
    opts: &BenchOptions,
) -> Result<ReportTable> {
    if models.detector.kind != ModelKind::SignDetector
        || models.regressor.kind != ModelKind::DistanceRegressor
    {
        return Err(ArwError::config("bench models have mismatched kinds"));
    }
    for d in defenses {
        d.validate()?;
    }

    let gts = gt_boxes(&data.sign_test);

    // attacked inputs, crafted once per attack against the standard models
    let mut sign_adv: Vec<Vec<Tensor>> = Vec::with_capacity(attacks.len());
    let mut road_adv: Vec<Vec<Tensor>> = Vec::with_capacity(attacks.len());
    for (ai, spec) in attacks.iter().enumerate() {
        let aseed = Rng::new(seed).derive(ai as u64).next_u64();
        sign_adv.push(if spec.attacks_detector() {
            attacked_sign_images(spec, &models.detector, &data.sign_test, aseed)?
        } else {
            Vec::new()
        });
        road_adv.push(if spec.attacks_regressor() {
            attacked_road_images(spec, &models.regressor, &data.road_frames, aseed)?
        } else {
            Vec::new()
        });
    }

    // defense-side resources, computed once per defense column
    let mut cell_models: Vec<CellModels> = Vec::with_capacity(defenses.len());
    let mut denoisers: Vec<Option<ModelBundle>> = Vec::with_capacity(defenses.len());
    for d in defenses {
        cell_models.push(defended_models(d, models, data)?);
        denoisers.push(match d {
            DefenseConfig::DiffPir {
                denoiser_sigma,
                seed: dseed,
                ..
            } => {
                let (m, _) = train_denoiser(&data.sign_train, *denoiser_sigma, 6, 0.05, *dseed)?;
                Some(m)
            }
            _ => None,
        });
    }

    // per-defense clean regression baselines
    let clean_baselines: Vec<Vec<f32>> = cell_models
        .iter()
        .map(|cm| {
            data.road_frames
                .par_iter()
                .map(|f| regressor_forward(&cm.regressor, &f.image))
                .collect::<Result<Vec<f32>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::with_capacity(attacks.len() * defenses.len());
    for (ai, attack) in attacks.iter().enumerate() {
        for (di, defense) in defenses.iter().enumerate() {
            let cm = &cell_models[di];
            let input_defense = match defense {
                DefenseConfig::MedianBlur { k } => InputDefense::Median(*k),
                DefenseConfig::BitDepth { bits } => InputDefense::BitDepth(*bits),
                DefenseConfig::Randomize { seed } => InputDefense::Randomize(*seed),
                DefenseConfig::DiffPir { schedule, seed, .. } => InputDefense::DiffPir {
                    denoiser: denoisers[di].as_ref().expect("denoiser trained"),
                    schedule,
                    seed: *seed,
                },
                _ => InputDefense::Identity,
            };

            let detection = if attack.attacks_detector() {
                let dets: Vec<Vec<crate::models::Detection>> = sign_adv[ai]
                    .par_iter()
                    .enumerate()
                    .map(|(i, img)| {
                        let defended = input_defense.apply(img, i)?;
                        let pred = detector_forward(&cm.detector, &defended)?;
                        Ok(decode_detections(&pred, opts.decode_conf, opts.nms_iou))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(detection_metrics(&dets, &gts))
            } else {
                None
            };

            let regression = if attack.attacks_regressor() {
                let cond: Vec<f32> = road_adv[ai]
                    .par_iter()
                    .enumerate()
                    .map(|(i, img)| {
                        let defended = input_defense.apply(img, i)?;
                        regressor_forward(&cm.regressor, &defended)
                    })
                    .collect::<Result<Vec<_>>>()?;
                // clean predictions can stray slightly outside the track's
                // range; clamp for binning
                let clean: Vec<f32> = clean_baselines[di]
                    .iter()
                    .map(|c| c.clamp(0.0, 80.0))
                    .collect();
                Some(binned_signed_error(&clean, &cond)?)
            } else {
                None
            };

            cells.push(CellOutcome {
                attack: attack.name().to_string(),
                defense: defense.name().to_string(),
                detection,
                regression,
            });
        }
    }

    Ok(ReportTable {
        cells,
        seed,
        config_hash: 0,
        detector_checksum: models.detector.checksum(),
        regressor_checksum: models.regressor.checksum(),
    })
}

fn stamp(table: &ReportTable) -> String {
    format!(
        "arw v{} seed={} config={:016x} detector={:016x} regressor={:016x}",
        crate::ARTIFACT_VERSION,
        table.seed,
        table.config_hash,
        table.detector_checksum,
        table.regressor_checksum
    )
}

const COLUMNS: [&str; 7] = [
    "map50",
    "precision",
    "recall",
    "err_0_20",
    "err_20_40",
    "err_40_60",
    "err_60_80",
];

fn cell_values(cell: &CellOutcome) -> [Option<f32>; 7] {
    let mut out = [None; 7];
    if let Some(d) = &cell.detection {
        out[0] = Some(d.map50);
        out[1] = Some(d.precision);
        out[2] = Some(d.recall);
    }
    if let Some(r) = &cell.regression {
        for b in 0..4 {
            out[3 + b] = Some(r.mean(b));
        }
    }
    out
}

/// Display CSV: two decimals, stable column order, stamped header.
pub fn emit_report_csv(table: &ReportTable) -> String {
    let mut out = format!("# {}\n", stamp(table));
    out.push_str("attack,defense,");
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for cell in &table.cells {
        out.push_str(&cell.attack);
        out.push(',');
        out.push_str(&cell.defense);
        for v in cell_values(cell) {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format!("{v:.2}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Full-precision sidecar; values round-trip exactly through parse.
pub fn emit_report_raw(table: &ReportTable) -> String {
    let mut out = format!("# {}\n", stamp(table));
    out.push_str("attack,defense,");
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for cell in &table.cells {
        out.push_str(&cell.attack);
        out.push(',');
        out.push_str(&cell.defense);
        for v in cell_values(cell) {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Markdown rendering of the matrix, one row per cell.
pub fn emit_report_markdown(table: &ReportTable) -> String {
    let mut out = format!("<!-- {} -->\n", stamp(table));
    out.push_str("| attack | defense |");
    for c in COLUMNS {
        out.push_str(&format!(" {c} |"));
    }
    out.push('\n');
    out.push_str("|---|---|");
    out.push_str(&"---|".repeat(COLUMNS.len()));
    out.push('\n');
    for cell in &table.cells {
        out.push_str(&format!("| {} | {} |", cell.attack, cell.defense));
        for v in cell_values(cell) {
            match v {
                Some(v) => out.push_str(&format!(" {v:.2} |")),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Per-cell run manifest (structured text) for `runs/<cell-id>/`.
pub fn cell_manifest(table: &ReportTable, cell: &CellOutcome) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {}\n", stamp(table)));
    out.push_str(&format!("attack = {}\n", cell.attack));
    out.push_str(&format!("defense = {}\n", cell.defense));
    for (name, v) in COLUMNS.iter().zip(cell_values(cell)) {
        match v {
            Some(v) => out.push_str(&format!("{name} = {v}\n")),
            None => out.push_str(&format!("{name} = none\n")),
        }
    }
    if let Some(r) = &cell.regression {
        for b in 0..4 {
            out.push_str(&format!("count_bin{b} = {}\n", r.counts[b]));
        }
    }
    out
}

/// Parses a raw sidecar back into a [`ReportTable`]; the inverse of
/// [`emit_report_raw`].
pub fn parse_report_raw(text: &str) -> Result<ReportTable> {
    let mut table = ReportTable {
        cells: vec![],
        seed: 0,
        config_hash: 0,
        detector_checksum: 0,
        regressor_checksum: 0,
    };
    let mut lines = text.lines();
    let stamp_line = lines
        .next()
        .ok_or_else(|| ArwError::format("empty raw report"))?;
    for token in stamp_line.trim_start_matches('#').split_ascii_whitespace() {
        if let Some(v) = token.strip_prefix("seed=") {
            table.seed = v.parse().map_err(|_| ArwError::format("bad seed"))?;
        } else if let Some(v) = token.strip_prefix("config=") {
            table.config_hash =
                u64::from_str_radix(v, 16).map_err(|_| ArwError::format("bad config hash"))?;
        } else if let Some(v) = token.strip_prefix("detector=") {
            table.detector_checksum =
                u64::from_str_radix(v, 16).map_err(|_| ArwError::format("bad checksum"))?;
        } else if let Some(v) = token.strip_prefix("regressor=") {
            table.regressor_checksum =
                u64::from_str_radix(v, 16).map_err(|_| ArwError::format("bad checksum"))?;
        }
    }
    let header = lines
        .next()
        .ok_or_else(|| ArwError::format("raw report missing header"))?;
    if !header.starts_with("attack,defense,") {
        return Err(ArwError::format("unexpected raw report header"));
    }
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + COLUMNS.len() {
            return Err(ArwError::format(format!(
                "raw report row has {} fields",
                fields.len()
            )));
        }
        let parse_opt = |s: &str| -> Result<Option<f32>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f32>()
                .map(Some)
                .map_err(|_| ArwError::format(format!("bad raw value {s:?}")))
        };
        let vals: Vec<Option<f32>> = fields[2..]
            .iter()
            .map(|s| parse_opt(s))
            .collect::<Result<Vec<_>>>()?;
        let detection = match (vals[0], vals[1], vals[2]) {
            (Some(m), Some(p), Some(r)) => Some(DetectionMetrics {
                map50: m,
                precision: p,
                recall: r,
            }),
            _ => None,
        };
        let regression = if vals[3..].iter().all(|v| v.is_some()) {
            let mut r = RangeBinnedError::default();
            for b in 0..4 {
                r.sums[b] = vals[3 + b].unwrap() as f64;
                r.counts[b] = 1; // means survive; raw counts live in run manifests
            }
            Some(r)
        } else {
            None
        };
        table.cells.push(CellOutcome {
            attack: fields[0].to_string(),
            defense: fields[1].to_string(),
            detection,
            regression,
        });
    }
    Ok(table)
}
