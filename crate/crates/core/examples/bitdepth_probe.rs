//! Decompose the bit-depth defense error: quantization penalty on clean
//! frames vs noise attenuation, under region-confined Gaussian attacks.

use arw_core::attacks::gaussian_noise_in_region;
use arw_core::defenses::bit_depth_reduce;
use arw_core::models::{regressor_forward, train, ModelBundle, ModelKind};
use arw_core::scenegen::{generate_road_dataset, generate_road_sequence};

fn main() {
    let data = generate_road_dataset(2000, 1002).unwrap();
    let mut reg = ModelBundle::new(ModelKind::DistanceRegressor, 43);
    train(&mut reg, &data, 30, 0.08, 4343).unwrap();

    let frames = generate_road_sequence(200, 6.0, 79.0, 501).unwrap();
    let clean: Vec<f32> = frames
        .iter()
        .map(|f| regressor_forward(&reg, &f.image).unwrap())
        .collect();

    for bits in [3u8, 2] {
        let mut quant_penalty = 0.0f64;
        for (i, f) in frames.iter().enumerate() {
            let q = bit_depth_reduce(&f.image, bits).unwrap();
            quant_penalty += (regressor_forward(&reg, &q).unwrap() - clean[i]).abs() as f64;
        }
        println!(
            "b={bits}: clean-quantization penalty = {:.3} m",
            quant_penalty / frames.len() as f64
        );
    }

    for sigma in [0.05f32, 0.08, 0.12, 0.2] {
        let mut err_raw = 0.0f64;
        let mut err_b3 = 0.0f64;
        for (i, f) in frames.iter().enumerate() {
            let noisy = gaussian_noise_in_region(&f.image, sigma, 500 ^ (i as u64) << 3, &f.lead_box)
                .unwrap()
                .x_adv;
            let q = bit_depth_reduce(&noisy, 3).unwrap();
            err_raw += (regressor_forward(&reg, &noisy).unwrap() - clean[i]).abs() as f64;
            err_b3 += (regressor_forward(&reg, &q).unwrap() - clean[i]).abs() as f64;
        }
        println!(
            "sigma={sigma}: attacked err {:.3} m, +bitdepth3 {:.3} m",
            err_raw / frames.len() as f64,
            err_b3 / frames.len() as f64
        );
    }
}
