//! Quick training-quality probe for tuning defaults.

use arw_core::evalkit::{detection_metrics, precision_recall};
use arw_core::models::{
    decode_detections, detector_forward, regressor_forward, train, ModelBundle, ModelKind,
};
use arw_core::scenegen::{generate_road_dataset, generate_sign_dataset, SceneLabel};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();

    // detector
    let train_set = generate_sign_dataset(500, 1).unwrap();
    let test_set = generate_sign_dataset(200, 2).unwrap();
    let mut det = ModelBundle::new(ModelKind::SignDetector, 10);
    let report = train(&mut det, &train_set, 30, 0.08, 100).unwrap();
    println!(
        "detector losses: first={:.4} last={:.4} ({:?})",
        report.epoch_losses[0],
        report.epoch_losses.last().unwrap(),
        t0.elapsed()
    );

    let mut dets_all = Vec::new();
    let mut gts_all = Vec::new();
    for i in 0..test_set.len() {
        let img = test_set.load_image(i).unwrap();
        let pred = detector_forward(&det, &img).unwrap();
        dets_all.push(decode_detections(&pred, 0.05, 0.45));
        match &test_set.entries[i].label {
            SceneLabel::Sign { bbox: Some(b), .. } => gts_all.push(vec![*b]),
            _ => gts_all.push(vec![]),
        }
    }
    let m = detection_metrics(&dets_all, &gts_all);
    let (p, r) = precision_recall(&dets_all, &gts_all, 0.25);
    println!("detector: mAP50={:.4} P={:.4} R={:.4}", m.map50, p, r);

    // regressor
    let t1 = Instant::now();
    let train_set = generate_road_dataset(2000, 3).unwrap();
    let test_set = generate_road_dataset(300, 4).unwrap();
    let mut reg = ModelBundle::new(ModelKind::DistanceRegressor, 20);
    let report = train(&mut reg, &train_set, 30, 0.08, 200).unwrap();
    println!(
        "regressor losses: first={:.5} last={:.5} ({:?})",
        report.epoch_losses[0],
        report.epoch_losses.last().unwrap(),
        t1.elapsed()
    );
    let mut abs_err = 0.0f64;
    for i in 0..test_set.len() {
        let img = test_set.load_image(i).unwrap();
        let pred = regressor_forward(&reg, &img).unwrap();
        let SceneLabel::Road { distance_m, .. } = test_set.entries[i].label else {
            unreachable!()
        };
        abs_err += (pred - distance_m).abs() as f64;
    }
    println!("regressor mean |err| = {:.3} m", abs_err / test_set.len() as f64);
    println!("total {:?}", t0.elapsed());
}
