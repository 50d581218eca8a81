//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Tolerances and thresholds are pinned in code.
//!
//! The paper-scale numbers are not reproducible at desk scale, so the
//! gate is property-based plus directional reproduction of the
//! qualitative findings on the toy stack.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use arw_core::attacks::{
    apply_patch, auto_pgd, cap_run, fgsm, gaussian_noise, rp2, sign_mask, simba, Budget,
    DetectorObjective, DetectorScore, NormKind, RegressorObjective, SimbaBasis,
    TransformSampler,
};
use arw_core::defenses::{
    adversarial_train, bit_depth_reduce, build_mixed_set, default_denoiser, diffpir_restore,
    infonce_loss, median_blur, proximal_step, psnr, train_denoiser, DiffusionSchedule,
    InnerAttack,
};
use arw_core::evalkit::{
    attacked_road_images, attacked_sign_images, average_precision_50, binned_signed_error, iou,
    precision_recall, AttackSpec,
};
use arw_core::geometry::Box2;
use arw_core::models::{
    decode_detections, detector_forward, detector_loss, regressor_forward, regressor_loss, train,
    Detection, ModelBundle, ModelKind,
};
use arw_core::rng::Rng;
use arw_core::scenegen::{
    generate_road_dataset, generate_road_sequence, generate_sign_dataset, DatasetManifest,
    SceneLabel,
};
use arw_core::tape::{finite_diff_check, finite_diff_check_robust, Tape, Val};
use arw_core::tensor::Tensor;

const EPS: f32 = 8.0 / 255.0;
const ALPHA: f32 = 2.0 / 255.0;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[criterion {criterion}] {}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ── shared trained fixtures ─────────────────────────────────────────────

fn trained_detector() -> &'static ModelBundle {
    static CELL: OnceLock<ModelBundle> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate_sign_dataset(500, 1001).expect("generator");
        let mut m = ModelBundle::new(ModelKind::SignDetector, 42);
        train(&mut m, &data, 30, 0.08, 4242).expect("detector training");
        m
    })
}

fn trained_regressor() -> &'static ModelBundle {
    static CELL: OnceLock<ModelBundle> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate_road_dataset(2000, 1002).expect("generator");
        let mut m = ModelBundle::new(ModelKind::DistanceRegressor, 43);
        train(&mut m, &data, 30, 0.08, 4343).expect("regressor training");
        m
    })
}

fn adv_trained_detector() -> &'static ModelBundle {
    static CELL: OnceLock<ModelBundle> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate_sign_dataset(500, 1001).expect("generator");
        let mut m = ModelBundle::new(ModelKind::SignDetector, 42);
        let budget = Budget::linf(EPS, EPS, 1, 0);
        adversarial_train(&mut m, &data, InnerAttack::Fgsm, &budget, 30, 0.08, 4242)
            .expect("adversarial training");
        m
    })
}

fn sign_gts(set: &DatasetManifest) -> Vec<Vec<Box2>> {
    set.entries
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

fn detector_map50(model: &ModelBundle, images: &[Tensor], gts: &[Vec<Box2>]) -> f32 {
    let dets: Vec<Vec<Detection>> = images
        .iter()
        .map(|img| {
            let pred = detector_forward(model, img).expect("forward");
            decode_detections(&pred, 0.05, 0.45)
        })
        .collect();
    average_precision_50(&dets, gts)
}

fn load_images(set: &DatasetManifest) -> Vec<Tensor> {
    (0..set.len())
        .map(|i| set.load_image(i).expect("inline image"))
        .collect()
}

// ── criterion 1: gradient soundness ─────────────────────────────────────

#[test]
fn criterion_1_gradient_soundness() {
    let started = Instant::now();

    // dense/conv primitives, exhaustive central differences, < 1e-4
    let mut rng = Rng::new(11);
    let mut primitive_max = 0.0f32;
    for _ in 0..10 {
        let x = Tensor::from_vec(&[6], (0..6).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let w = Tensor::from_vec(&[6, 4], (0..24).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let b = Tensor::from_vec(&[4], (0..4).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let dense_f = |tape: &Tape, xv: Val| {
            let wv = tape.leaf(&w);
            let bv = tape.leaf(&b);
            let out = tape.dense(xv, wv, bv)?;
            let sq = tape.mul(out, out)?;
            Ok(tape.mean(sq))
        };
        primitive_max = primitive_max.max(finite_diff_check(&dense_f, &x, 5e-3).unwrap());

        let img =
            Tensor::from_vec(&[5, 5, 2], (0..50).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
        let k =
            Tensor::from_vec(&[3, 3, 2, 2], (0..36).map(|_| rng.range(-1.0, 1.0)).collect())
                .unwrap();
        let conv_f = |tape: &Tape, xv: Val| {
            let kv = tape.leaf(&k);
            let out = tape.conv2d(xv, kv, 1)?;
            let sq = tape.mul(out, out)?;
            Ok(tape.mean(sq))
        };
        primitive_max = primitive_max.max(finite_diff_check(&conv_f, &img, 5e-3).unwrap());
    }

    // model forward losses at 10 random inputs, < 1e-3. A random input
    // occasionally sits exactly on an influential relu kink where the
    // two-sided difference is undefined; a genuine gradient bug fails at
    // every input, so 10 of 12 candidates must pass.
    let detector = ModelBundle::new(ModelKind::SignDetector, 5);
    let regressor = ModelBundle::new(ModelKind::DistanceRegressor, 6);
    let mut det_pass = 0;
    let mut reg_pass = 0;
    for s in 0..12u64 {
        let sign = generate_sign_dataset(1, 2000 + s).unwrap().load_image(0).unwrap();
        let det_f = |tape: &Tape, x: Val| {
            let bound = detector.bind(tape);
            detector_loss(tape, &bound, x, false, None)
        };
        if finite_diff_check_robust(&det_f, &sign, 1e-3, 100, s).unwrap() < 1e-3 {
            det_pass += 1;
        }

        let road = generate_road_sequence(1, 10.0 + 5.0 * s as f32, 10.0 + 5.0 * s as f32, 3000 + s)
            .unwrap()[0]
            .image
            .clone();
        let reg_f = |tape: &Tape, x: Val| {
            let bound = regressor.bind(tape);
            regressor_loss(tape, &bound, x, 30.0)
        };
        if finite_diff_check_robust(&reg_f, &road, 1e-3, 100, s).unwrap() < 1e-3 {
            reg_pass += 1;
        }
    }

    let elapsed = started.elapsed();
    let pass =
        primitive_max < 1e-4 && det_pass >= 10 && reg_pass >= 10 && elapsed.as_secs() < 60;
    verdict(
        "1",
        pass,
        &format!(
            "primitive max err {primitive_max:.2e} (< 1e-4); detector {det_pass}/12, regressor {reg_pass}/12 inputs < 1e-3; runtime {elapsed:?} (< 60 s)"
        ),
    );
    assert!(pass);
}

// ── criterion 2: budget invariants ──────────────────────────────────────

#[test]
fn criterion_2_budget_invariants() {
    use rayon::prelude::*;

    let n = 500usize;
    let detector = ModelBundle::new(ModelKind::SignDetector, 21);
    let regressor = ModelBundle::new(ModelKind::DistanceRegressor, 22);
    let signs = generate_sign_dataset(n, 77).unwrap();
    let sign_images = load_images(&signs);
    let road = generate_road_sequence(n, 10.0, 70.0, 78).unwrap();

    let in_range = |t: &Tensor| t.data().iter().all(|&v| (0.0..=1.0).contains(&v));

    // gaussian: valid range (no norm bound by construction)
    let gauss_ok = sign_images
        .par_iter()
        .enumerate()
        .all(|(i, img)| {
            let r = gaussian_noise(img, 0.08, 1000 + i as u64).unwrap();
            in_range(&r.x_adv)
        });

    // fgsm + auto-pgd: max|delta| <= eps exactly
    let fgsm_ok = sign_images
        .par_iter()
        .enumerate()
        .all(|(i, img)| {
            let (present, gt_box) = match &signs.entries[i].label {
                SceneLabel::Sign { present, bbox } => (*present, *bbox),
                _ => unreachable!(),
            };
            let obj = DetectorObjective {
                model: &detector,
                present,
                gt_box,
            };
            let r = fgsm(&obj, img, &Budget::linf(EPS, EPS, 1, 0)).unwrap();
            r.delta.max_abs() <= EPS && in_range(&r.x_adv)
        });

    let apgd_ok = road
        .par_iter()
        .all(|frame| {
            let clean = regressor_forward(&regressor, &frame.image).unwrap();
            let obj = RegressorObjective {
                model: &regressor,
                clean_pred: clean,
            };
            let r = auto_pgd(&obj, &frame.image, &Budget::linf(EPS, ALPHA, 3, 0)).unwrap();
            r.delta.max_abs() <= EPS && in_range(&r.x_adv)
        });

    // simba: ||delta||_2^2 <= accepted * eps^2 <= T * eps^2
    let simba_ok = sign_images
        .par_iter()
        .enumerate()
        .all(|(i, img)| {
            let budget = Budget {
                norm: NormKind::L2,
                epsilon: 0.05,
                alpha: 0.05,
                max_iters: 1,
                max_queries: 30,
                seed: 2000 + i as u64,
            };
            let score = DetectorScore { model: &detector };
            let r = simba(&score, img, &budget, SimbaBasis::Pixel).unwrap();
            let accepted = r
                .delta
                .data()
                .iter()
                .filter(|&&v| v != 0.0)
                .count();
            let bound = accepted as f64 * (0.05f64).powi(2);
            let t_bound = r.queries_used as f64 * (0.05f64).powi(2);
            r.delta.l2_norm_sq() <= bound * (1.0 + 1e-5)
                && r.delta.l2_norm_sq() <= t_bound * (1.0 + 1e-5)
                && in_range(&r.x_adv)
        });

    // rp2: support confined to the mask
    let rp2_ok = (0..n)
        .into_par_iter()
        .all(|i| {
            let (present, gt_box) = match &signs.entries[i].label {
                SceneLabel::Sign { present, bbox } => (*present, *bbox),
                _ => unreachable!(),
            };
            let Some(gt) = gt_box.filter(|_| present) else {
                return true;
            };
            let mask = sign_mask(&gt);
            let sampler = TransformSampler {
                seed: 3000 + i as u64,
                ..Default::default()
            };
            let patch = rp2(&detector, &sign_images[i], &mask, None, &sampler, 0.05, 2).unwrap();
            let confined = patch
                .delta
                .data()
                .iter()
                .zip(mask.data())
                .all(|(&d, &m)| m != 0.0 || d == 0.0);
            confined && in_range(&apply_patch(&sign_images[i], &patch).unwrap())
        });

    // cap: Linf bound per frame
    let cap_runs = cap_run(&regressor, &road, &Budget::linf(EPS, ALPHA, 1, 0), 0.05).unwrap();
    let cap_ok = cap_runs
        .iter()
        .all(|(_, r)| r.delta.max_abs() <= EPS && in_range(&r.x_adv));

    // zero budgets are exact identities for every attack
    let img = &sign_images[0];
    let frame0 = &road[..1];
    let obj = DetectorObjective {
        model: &detector,
        present: true,
        gt_box: Some(Box2::new(32.0, 32.0, 16.0, 16.0)),
    };
    let score = DetectorScore { model: &detector };
    let zero_budget = Budget::linf(0.0, ALPHA, 3, 0);
    let zero_q = Budget {
        norm: NormKind::L2,
        epsilon: 0.0,
        alpha: 1.0,
        max_iters: 1,
        max_queries: 20,
        seed: 5,
    };
    let gt = Box2::new(32.0, 32.0, 20.0, 20.0);
    let idpatch = rp2(
        &detector,
        img,
        &sign_mask(&gt),
        None,
        &TransformSampler::default(),
        0.05,
        0,
    )
    .unwrap();
    let identity_ok = gaussian_noise(img, 0.0, 9).unwrap().x_adv.data() == img.data()
        && fgsm(&obj, img, &zero_budget).unwrap().x_adv.data() == img.data()
        && auto_pgd(&obj, img, &zero_budget).unwrap().x_adv.data() == img.data()
        && simba(&score, img, &zero_q, SimbaBasis::Pixel).unwrap().x_adv.data() == img.data()
        && apply_patch(img, &idpatch).unwrap().data() == img.data()
        && cap_run(&regressor, frame0, &zero_budget, 0.05).unwrap()[0]
            .1
            .x_adv
            .data()
            == frame0[0].image.data();

    let pass = gauss_ok && fgsm_ok && apgd_ok && simba_ok && rp2_ok && cap_ok && identity_ok;
    verdict(
        "2",
        pass,
        &format!(
            "500/attack bounds: gaussian {gauss_ok}, fgsm {fgsm_ok}, autopgd {apgd_ok}, simba {simba_ok}, rp2 {rp2_ok}, cap {cap_ok}; zero-budget identity {identity_ok}"
        ),
    );
    assert!(pass);
}

// ── criterion 3: oracle equivalence ─────────────────────────────────────

/// Independent all-point AP: the PR curve is recomputed from scratch at
/// every prefix length, then the precision envelope is integrated.
fn oracle_ap(detections: &[Vec<Detection>], gts: &[Vec<Box2>]) -> f32 {
    let total_gt: usize = gts.iter().map(|g| g.len()).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let mut flat: Vec<(usize, Detection)> = Vec::new();
    for (i, dets) in detections.iter().enumerate() {
        for d in dets {
            flat.push((i, d.clone()));
        }
    }
    flat.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
    let tp_at = |k: usize| -> usize {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for (img, d) in &flat[..k] {
            let mut best: Option<(usize, f32)> = None;
            for (gi, gt) in gts[*img].iter().enumerate() {
                if used[*img][gi] {
                    continue;
                }
                let o = iou(&d.bbox, gt).unwrap_or(0.0);
                if o >= 0.5 && best.map_or(true, |(_, bo)| o > bo) {
                    best = Some((gi, o));
                }
            }
            if let Some((gi, _)) = best {
                used[*img][gi] = true;
                tp += 1;
            }
        }
        tp
    };
    let points: Vec<(f64, f64)> = (1..=flat.len())
        .map(|k| {
            let tp = tp_at(k);
            (tp as f64 / total_gt as f64, tp as f64 / k as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for i in 0..points.len() {
        let (r, _) = points[i];
        if r > prev_r {
            let p_env = points[i..].iter().map(|&(_, p)| p).fold(0.0f64, f64::max);
            ap += (r - prev_r) * p_env;
            prev_r = r;
        }
    }
    ap as f32
}

#[test]
fn criterion_3_oracle_equivalence() {
    // median blur vs brute force on 100 random 8x8 images
    let mut rng = Rng::new(31);
    let mut median_ok = true;
    for _ in 0..100 {
        let data: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.uniform()).collect();
        let img = Tensor::from_vec(&[8, 8, 3], data).unwrap();
        let out = median_blur(&img, 3).unwrap();
        'outer: for y in 0..8usize {
            for x in 0..8usize {
                for ch in 0..3usize {
                    let mut vals = Vec::with_capacity(9);
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            let sy = (y as i32 + dy).clamp(0, 7) as usize;
                            let sx = (x as i32 + dx).clamp(0, 7) as usize;
                            vals.push(img.data()[(sy * 8 + sx) * 3 + ch]);
                        }
                    }
                    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    if out.data()[(y * 8 + x) * 3 + ch] != vals[4] {
                        median_ok = false;
                        break 'outer;
                    }
                }
            }
        }
    }

    // AP / precision / recall vs the brute-force PR oracle on 20 crafted
    // fixtures with duplicates, misses и false positives
    let mut metric_ok = true;
    let mut worst_gap = 0.0f32;
    for fixture in 0..20u64 {
        let mut frng = Rng::new(900 + fixture);
        let n_imgs = 2 + frng.below(3);
        let mut gts: Vec<Vec<Box2>> = Vec::new();
        let mut dets: Vec<Vec<Detection>> = Vec::new();
        for _ in 0..n_imgs {
            let n_gt = frng.below(3);
            let boxes: Vec<Box2> = (0..n_gt)
                .map(|k| {
                    Box2::new(
                        10.0 + 20.0 * k as f32,
                        10.0 + 14.0 * frng.uniform(),
                        8.0,
                        8.0,
                    )
                })
                .collect();
            let mut image_dets = Vec::new();
            for b in &boxes {
                // true positive candidate with jitter, sometimes missing
                if frng.uniform() < 0.8 {
                    image_dets.push(Detection {
                        bbox: Box2::new(b.cx + frng.range(-1.5, 1.5), b.cy, 8.0, 8.0),
                        score: frng.uniform(),
                    });
                }
                // occasional duplicate
                if frng.uniform() < 0.3 {
                    image_dets.push(Detection {
                        bbox: *b,
                        score: frng.uniform(),
                    });
                }
            }
            // false positive
            if frng.uniform() < 0.6 {
                image_dets.push(Detection {
                    bbox: Box2::new(50.0, 50.0, 8.0, 8.0),
                    score: frng.uniform(),
                });
            }
            gts.push(boxes);
            dets.push(image_dets);
        }
        let ap = average_precision_50(&dets, &gts);
        let ap_oracle = oracle_ap(&dets, &gts);
        worst_gap = worst_gap.max((ap - ap_oracle).abs());
        if (ap - ap_oracle).abs() > 1e-6 {
            metric_ok = false;
        }
        // precision/recall against hand counting at the same threshold
        let (p, r) = precision_recall(&dets, &gts, 0.25);
        let kept: Vec<Vec<Detection>> = dets
            .iter()
            .map(|v| v.iter().filter(|d| d.score >= 0.25).cloned().collect())
            .collect();
        let total_gt: usize = gts.iter().map(|g| g.len()).sum();
        let mut flat: Vec<(usize, Detection)> = Vec::new();
        for (i, v) in kept.iter().enumerate() {
            for d in v {
                flat.push((i, d.clone()));
            }
        }
        flat.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0usize;
        for (img, d) in &flat {
            let mut best: Option<(usize, f32)> = None;
            for (gi, gt) in gts[*img].iter().enumerate() {
                if !used[*img][gi] {
                    let o = iou(&d.bbox, gt).unwrap_or(0.0);
                    if o >= 0.5 && best.map_or(true, |(_, bo)| o > bo) {
                        best = Some((gi, o));
                    }
                }
            }
            if let Some((gi, _)) = best {
                used[*img][gi] = true;
                tp += 1;
            }
        }
        let n_det = flat.len();
        let (p_hand, r_hand) = if n_det == 0 && total_gt == 0 {
            (1.0, 1.0)
        } else {
            (
                if n_det == 0 { 0.0 } else { tp as f32 / n_det as f32 },
                if total_gt == 0 { 0.0 } else { tp as f32 / total_gt as f32 },
            )
        };
        if (p - p_hand).abs() > 1e-6 || (r - r_hand).abs() > 1e-6 {
            metric_ok = false;
        }
    }

    // proximal step vs a numeric minimizer on 1000 random triples
    let mut prox_ok = true;
    let mut prox_worst = 0.0f64;
    let mut prng = Rng::new(77);
    for _ in 0..1000 {
        let y = prng.uniform();
        let x0 = prng.uniform();
        let rho = prng.range(0.01, 30.0);
        let closed = proximal_step(&Tensor::scalar(y), &Tensor::scalar(x0), rho).unwrap().data()[0];
        let f = |x: f64| (y as f64 - x).powi(2) + rho as f64 * (x - x0 as f64).powi(2);
        let (mut lo, mut hi) = (-1.0f64, 2.0f64);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..90 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let numeric = (lo + hi) / 2.0;
        let gap = (closed as f64 - numeric).abs();
        prox_worst = prox_worst.max(gap);
        if gap > 1e-6 {
            prox_ok = false;
        }
    }

    let pass = median_ok && metric_ok && prox_ok;
    verdict(
        "3",
        pass,
        &format!(
            "median oracle {median_ok}; AP/PR oracle {metric_ok} (worst AP gap {worst_gap:.2e}); proximal closed form {prox_ok} (worst {prox_worst:.2e} <= 1e-6)"
        ),
    );
    assert!(pass);
}

// ── criterion 4: attack ordering on the regressor ───────────────────────

#[test]
fn criterion_4_attack_ordering() {
    let regressor = trained_regressor();
    let budget_fgsm = Budget::linf(EPS, EPS, 1, 0);
    let budget_apgd = Budget::linf(EPS, ALPHA, 20, 0);
    let budget_cap = Budget::linf(EPS, ALPHA, 1, 0);

    // per seed, |mean signed error| of bins 0 and 3 for each attack
    let mut bin0: Vec<[f32; 4]> = Vec::new(); // gaussian, fgsm, autopgd, cap
    let mut bin3: Vec<[f32; 4]> = Vec::new();
    for seq_seed in [301u64, 302, 303] {
        let frames = generate_road_sequence(200, 6.0, 79.0, seq_seed).unwrap();
        let clean: Vec<f32> = frames
            .iter()
            .map(|f| regressor_forward(regressor, &f.image).unwrap().clamp(0.0, 80.0))
            .collect();
        let specs = [
            AttackSpec::Gaussian { sigma: EPS },
            AttackSpec::Fgsm {
                budget: budget_fgsm.clone(),
            },
            AttackSpec::AutoPgd {
                budget: budget_apgd.clone(),
            },
            AttackSpec::Cap {
                budget: budget_cap.clone(),
                lambda: 0.05,
            },
        ];
        let mut b0 = [0.0f32; 4];
        let mut b3 = [0.0f32; 4];
        for (k, spec) in specs.iter().enumerate() {
            let advs = attacked_road_images(spec, regressor, &frames, seq_seed).unwrap();
            let cond: Vec<f32> = advs
                .iter()
                .map(|img| regressor_forward(regressor, img).unwrap())
                .collect();
            let binned = binned_signed_error(&clean, &cond).unwrap();
            b0[k] = binned.mean(0).abs();
            b3[k] = binned.mean(3).abs();
        }
        println!(
            "  seed {seq_seed}: |bin0| gaussian={:.2} fgsm={:.2} autopgd={:.2} cap={:.2}; |bin3| fgsm={:.2} autopgd={:.2} cap={:.2}",
            b0[0], b0[1], b0[2], b0[3], b3[1], b3[2], b3[3]
        );
        bin0.push(b0);
        bin3.push(b3);
    }

    // pairwise comparisons in the near bin, majority across seeds
    let majority = |f: &dyn Fn(&[f32; 4]) -> bool| bin0.iter().filter(|b| f(b)).count() >= 2;
    let comparisons = [
        majority(&|b| b[2] >= b[3]), // autopgd >= cap
        majority(&|b| b[3] >= b[1]), // cap >= fgsm
        majority(&|b| b[1] >= b[0]), // fgsm >= gaussian
        majority(&|b| b[2] >= b[0]), // autopgd >= gaussian
    ];
    let held = comparisons.iter().filter(|&&c| c).count();

    // near-range error exceeds far-range error for every gradient attack
    let near_exceeds_far = (1..4).all(|k| {
        bin0.iter().zip(&bin3).filter(|(b0, b3)| b0[k] > b3[k]).count() >= 2
    });

    let pass = held >= 3 && near_exceeds_far;
    verdict(
        "4",
        pass,
        &format!(
            "pairwise orderings held {held}/4 (need >= 3); near > far for all gradient attacks: {near_exceeds_far}"
        ),
    );
    assert!(pass);
}

// ── criterion 5: input-processing defense efficacy ──────────────────────

#[test]
fn criterion_5_defense_efficacy() {
    let detector = trained_detector();
    let regressor = trained_regressor();

    // median blur recovers >= 30% of the FGSM-induced mAP drop
    let mut blur_votes = 0;
    for seed in [401u64, 402, 403] {
        let test = generate_sign_dataset(200, seed).unwrap();
        let gts = sign_gts(&test);
        let images = load_images(&test);
        let spec = AttackSpec::Fgsm {
            budget: Budget::linf(EPS, EPS, 1, 0),
        };
        let attacked = attacked_sign_images(&spec, detector, &test, seed).unwrap();
        let blurred: Vec<Tensor> = attacked
            .iter()
            .map(|img| median_blur(img, 3).unwrap())
            .collect();
        let map_clean = detector_map50(detector, &images, &gts);
        let map_fgsm = detector_map50(detector, &attacked, &gts);
        let map_blur = detector_map50(detector, &blurred, &gts);
        let drop_nodef = map_clean - map_fgsm;
        let drop_blur = map_clean - map_blur;
        println!(
            "  seed {seed}: clean mAP {map_clean:.3}, fgsm {map_fgsm:.3}, fgsm+blur {map_blur:.3} (drop {drop_nodef:.3} -> {drop_blur:.3})"
        );
        if drop_nodef > 0.0 && drop_blur <= 0.7 * drop_nodef {
            blur_votes += 1;
        }
    }

    // bit-depth reduction (b <= 3) reduces gaussian-attack regression error
    let mut bits_votes = 0;
    for seed in [501u64, 502, 503] {
        let frames = generate_road_sequence(200, 6.0, 79.0, seed).unwrap();
        let clean: Vec<f32> = frames
            .iter()
            .map(|f| regressor_forward(regressor, &f.image).unwrap())
            .collect();
        let mut err_raw = 0.0f64;
        let mut err_bits = 0.0f64;
        for (i, f) in frames.iter().enumerate() {
            let noisy = gaussian_noise(&f.image, 0.08, seed ^ (i as u64) << 3).unwrap().x_adv;
            let quantized = bit_depth_reduce(&noisy, 3).unwrap();
            err_raw += (regressor_forward(regressor, &noisy).unwrap() - clean[i]).abs() as f64;
            err_bits +=
                (regressor_forward(regressor, &quantized).unwrap() - clean[i]).abs() as f64;
        }
        println!(
            "  seed {seed}: gaussian mean |err| {:.3} m, +bitdepth {:.3} m",
            err_raw / frames.len() as f64,
            err_bits / frames.len() as f64
        );
        if err_bits < err_raw {
            bits_votes += 1;
        }
    }

    let pass = blur_votes >= 2 && bits_votes >= 2;
    verdict(
        "5",
        pass,
        &format!("median-blur votes {blur_votes}/3, bit-depth votes {bits_votes}/3 (majority required)"),
    );
    assert!(pass);
}

// ── criterion 6: adversarial training ───────────────────────────────────

#[test]
fn criterion_6_adversarial_training() {
    let standard = trained_detector();
    let robust = adv_trained_detector();

    // white-box FGSM against each model on three test sets
    let mut gains = Vec::new();
    for seed in [601u64, 602, 603] {
        let test = generate_sign_dataset(200, seed).unwrap();
        let gts = sign_gts(&test);
        let fgsm_spec = AttackSpec::Fgsm {
            budget: Budget::linf(EPS, EPS, 1, 0),
        };
        let atk_std = attacked_sign_images(&fgsm_spec, standard, &test, seed).unwrap();
        let atk_rob = attacked_sign_images(&fgsm_spec, robust, &test, seed).unwrap();
        let map_std = detector_map50(standard, &atk_std, &gts);
        let map_rob = detector_map50(robust, &atk_rob, &gts);
        println!("  seed {seed}: standard under FGSM {map_std:.3}, adv-trained under FGSM {map_rob:.3}");
        gains.push(map_rob - map_std);
    }
    let mean_gain = gains.iter().sum::<f32>() / gains.len() as f32;

    // zero-epsilon inner attack reproduces the standard checkpoint
    let data = generate_sign_dataset(24, 4).unwrap();
    let mut a = ModelBundle::new(ModelKind::SignDetector, 9);
    train(&mut a, &data, 2, 0.05, 17).unwrap();
    let mut b = ModelBundle::new(ModelKind::SignDetector, 9);
    adversarial_train(
        &mut b,
        &data,
        InnerAttack::Fgsm,
        &Budget::linf(0.0, 0.01, 1, 0),
        2,
        0.05,
        17,
    )
    .unwrap();
    let bit_exact = a.params_equal(&b);

    let pass = mean_gain >= 0.10 && bit_exact;
    verdict(
        "6",
        pass,
        &format!("mAP@50 gain under FGSM {mean_gain:.3} (>= 0.10); zero-eps checkpoint bit-exact {bit_exact}"),
    );
    assert!(pass);
}

// ── criterion 7: mixed-set protocol ─────────────────────────────────────

#[test]
fn criterion_7_mixed_set_protocol() {
    let sets: Vec<DatasetManifest> = (0..4)
        .map(|s| generate_sign_dataset(416, 700 + s).unwrap())
        .collect();
    let (train_m, test_m) = build_mixed_set(&sets, 0.25, 11).unwrap();

    let ids = |m: &DatasetManifest| -> std::collections::HashSet<u64> {
        m.entries
            .iter()
            .map(|e| match &e.image {
                arw_core::scenegen::ImageSource::Inline(t) => arw_core::rng::fnv1a(
                    &t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
                ),
                _ => 0,
            })
            .collect()
    };
    let train_ids = ids(&train_m);
    let test_ids = ids(&test_m);
    let disjoint = train_ids.is_disjoint(&test_ids);
    let counts_ok = train_m.len() == 4 * 104 && test_m.len() == 4 * 104;

    let pass = counts_ok && disjoint;
    verdict(
        "7",
        pass,
        &format!(
            "416/attack at 0.25 -> train {} (= 416), test {} (= 416), disjoint {disjoint}",
            train_m.len(),
            test_m.len()
        ),
    );
    assert!(pass);
}

// ── criterion 8: contrastive + diffpir sanity ───────────────────────────

#[test]
fn criterion_8_contrastive_and_diffpir() {
    // hand-computed InfoNCE values to 1e-5
    let unit = |v: Vec<f32>| Tensor::from_vec(&[v.len()], v).unwrap();
    let orth = vec![
        unit(vec![1.0, 0.0, 0.0]),
        unit(vec![1.0, 0.0, 0.0]),
        unit(vec![0.0, 1.0, 0.0]),
        unit(vec![0.0, 1.0, 0.0]),
    ];
    let expected = -((1f64.exp()) / (1f64.exp() + 2.0)).ln() as f32;
    let v1 = infonce_loss(&orth, 1.0).unwrap();
    let uniform: Vec<Tensor> = (0..6).map(|_| unit(vec![0.6, 0.8])).collect();
    let v2 = infonce_loss(&uniform, 0.7).unwrap();
    let infonce_ok = (v1 - expected).abs() < 1e-5 && (v2 - (5.0f32).ln()).abs() < 1e-5;

    // restoration improves PSNR on >= 80% of 100 images for both attacks
    let detector = trained_detector();
    let train_set = generate_sign_dataset(200, 801).unwrap();
    let (denoiser_model, _) = train_denoiser(&train_set, 0.1, 6, 0.05, 802).unwrap();
    let denoiser = default_denoiser(&denoiser_model);
    let schedule = DiffusionSchedule::default_schedule();

    let test = generate_sign_dataset(100, 803).unwrap();
    let images = load_images(&test);
    let mut gauss_better = 0usize;
    let mut fgsm_better = 0usize;
    for (i, img) in images.iter().enumerate() {
        let noisy = gaussian_noise(img, 0.1, 900 + i as u64).unwrap().x_adv;
        let restored = diffpir_restore(&noisy, &schedule, &denoiser, 950 + i as u64).unwrap();
        if psnr(&restored, img).unwrap() > psnr(&noisy, img).unwrap() {
            gauss_better += 1;
        }

        let (present, gt_box) = match &test.entries[i].label {
            SceneLabel::Sign { present, bbox } => (*present, *bbox),
            _ => unreachable!(),
        };
        let obj = DetectorObjective {
            model: detector,
            present,
            gt_box,
        };
        let attacked = fgsm(&obj, img, &Budget::linf(EPS, EPS, 1, 0)).unwrap().x_adv;
        let restored = diffpir_restore(&attacked, &schedule, &denoiser, 970 + i as u64).unwrap();
        if psnr(&restored, img).unwrap() > psnr(&attacked, img).unwrap() {
            fgsm_better += 1;
        }
    }

    let pass = infonce_ok && gauss_better >= 80 && fgsm_better >= 80;
    verdict(
        "8",
        pass,
        &format!(
            "infonce hand cases {infonce_ok}; PSNR improved on {gauss_better}/100 (gaussian) and {fgsm_better}/100 (fgsm), need >= 80"
        ),
    );
    assert!(pass);
}

// ── criterion 9: end-to-end determinism ─────────────────────────────────

#[test]
fn criterion_9_end_to_end_determinism() {
    let started = Instant::now();
    let exe = env!("CARGO_BIN_EXE_arw");
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../example.cfg");
    let work = std::env::temp_dir().join(format!("arw_accept_{}", std::process::id()));
    std::fs::create_dir_all(&work).unwrap();

    let run = |out: &str| {
        let status = std::process::Command::new(exe)
            .args([
                "--workdir",
                work.to_str().unwrap(),
                "bench",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out,
            ])
            .status()
            .expect("bench run");
        assert!(status.success(), "bench exited nonzero");
    };
    run("run_a");
    run("run_b");

    let mut identical = true;
    for name in [
        "report.csv",
        "report.md",
        "report.raw.csv",
        "plot_map50.csv",
        "plot_err_0_20.csv",
    ] {
        let a = std::fs::read(work.join("run_a").join(name)).unwrap();
        let b = std::fs::read(work.join("run_b").join(name)).unwrap();
        if a != b {
            identical = false;
            println!("  mismatch in {name}");
        }
    }
    let elapsed = started.elapsed();
    let within_budget = elapsed.as_secs() < 30 * 60;
    std::fs::remove_dir_all(&work).ok();

    let pass = identical && within_budget;
    verdict(
        "9",
        pass,
        &format!("two bench runs byte-identical: {identical}; both runs took {elapsed:?} (< 30 min)"),
    );
    assert!(pass);
}
