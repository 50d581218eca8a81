//! Simple black-box attack: coordinate search over an orthonormal basis.
//!
//! Each step draws an unused basis vector q and tries delta +/- eps*q,
//! keeping whichever strictly reduces the model score (sign-present
//! probability for the detector, negative deviation for the regressor).
//! Basis vectors are drawn without replacement, so after T accepted
//! steps the cumulative perturbation satisfies ||delta||_2^2 <= T*eps^2.

use crate::error::{ArwError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{AttackResult, BlackBoxScore, Budget};

/// Orthonormal basis family for the coordinate search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimbaBasis {
    /// One pixel-channel coordinate per step.
    Pixel,
    /// Full-image 2-D DCT basis functions, one (u,v,channel) per step.
    Dct,
}

/// Dense basis vector for index `k` of the chosen family.
fn basis_vector(basis: SimbaBasis, shape: &[usize], k: usize) -> Tensor {
    let n: usize = shape.iter().product();
    match basis {
        SimbaBasis::Pixel => {
            let mut data = vec![0.0f32; n];
            data[k] = 1.0;
            Tensor::from_vec(shape, data).expect("valid basis vector")
        }
        SimbaBasis::Dct => {
            let (h, w, c) = (shape[0], shape[1], shape[2]);
            let per_channel = h * w;
            let ch = k / per_channel;
            let uv = k % per_channel;
            let u = uv / w;
            let v = uv % w;
            let au = if u == 0 { (1.0 / h as f64).sqrt() } else { (2.0 / h as f64).sqrt() };
            let av = if v == 0 { (1.0 / w as f64).sqrt() } else { (2.0 / w as f64).sqrt() };
            let mut data = vec![0.0f32; n];
            for y in 0..h {
                let cy = (std::f64::consts::PI / h as f64 * (y as f64 + 0.5) * u as f64).cos();
                for x in 0..w {
                    let cx =
                        (std::f64::consts::PI / w as f64 * (x as f64 + 0.5) * v as f64).cos();
                    data[(y * w + x) * c + ch] = (au * av * cy * cx) as f32;
                }
            }
            Tensor::from_vec(shape, data).expect("valid basis vector")
        }
    }
}

pub fn simba(
    score_fn: &dyn BlackBoxScore,
    x: &Tensor,
    budget: &Budget,
    basis: SimbaBasis,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.max_queries < 1 {
        return Err(ArwError::contract("simba needs max_queries >= 1"));
    }
    let eps = budget.epsilon;
    let n = x.numel();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(budget.seed);
    rng.shuffle(&mut order);

    let mut queries = 0usize;
    let query = |img: &Tensor, queries: &mut usize| -> Result<f32> {
        *queries += 1;
        score_fn.score(img)
    };

    let clean_score = query(x, &mut queries)?;
    let mut best_score = clean_score;
    let mut delta = Tensor::zeros(x.shape());
    let mut trace = vec![clean_score];
    let mut accepted = 0usize;

    for &k in &order {
        if queries >= budget.max_queries {
            break;
        }
        let q = basis_vector(basis, x.shape(), k);

        // try +eps q
        let try_delta = |delta: &Tensor, sign: f32| -> Result<Tensor> {
            let d: Vec<f32> = delta
                .data()
                .iter()
                .zip(q.data())
                .map(|(&d, &qv)| d + sign * eps * qv)
                .collect();
            Tensor::from_vec(x.shape(), d)
        };

        let plus = try_delta(&delta, 1.0)?;
        let s_plus = query(&x.add_clamped(&plus, 0.0, 1.0)?, &mut queries)?;
        if s_plus < best_score {
            best_score = s_plus;
            delta = plus;
            accepted += 1;
            trace.push(best_score);
            continue;
        }
        if queries >= budget.max_queries {
            break;
        }
        let minus = try_delta(&delta, -1.0)?;
        let s_minus = query(&x.add_clamped(&minus, 0.0, 1.0)?, &mut queries)?;
        if s_minus < best_score {
            best_score = s_minus;
            delta = minus;
            accepted += 1;
            trace.push(best_score);
        }
    }

    let success = best_score < clean_score;
    let mut result = AttackResult::assemble(x, delta, trace, queries, success)?;
    result.queries_used = queries;
    debug_assert!(
        result.delta.l2_norm_sq() <= (accepted as f64) * (eps as f64).powi(2) * (1.0 + 1e-5) ,
        "simba L2 bound violated"
    );
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ConstantScore;
    impl BlackBoxScore for ConstantScore {
        fn score(&self, _image: &Tensor) -> Result<f32> {
            Ok(0.7)
        }
    }

    /// Score decreases as mass moves away from 0.5 in the first coordinate.
    struct FirstCoordScore;
    impl BlackBoxScore for FirstCoordScore {
        fn score(&self, image: &Tensor) -> Result<f32> {
            Ok(1.0 - (image.data()[0] - 0.5).abs())
        }
    }

    fn budget(eps: f32, queries: usize, seed: u64) -> Budget {
        Budget {
            norm: super::super::NormKind::L2,
            epsilon: eps,
            alpha: eps.max(1e-6),
            max_iters: 1,
            max_queries: queries,
            seed,
        }
    }

    #[test]
    fn constant_model_yields_zero_delta_no_success() {
        let x = Tensor::filled(&[4, 4, 3], 0.5);
        let r = simba(&ConstantScore, &x, &budget(0.1, 60, 3), SimbaBasis::Pixel).unwrap();
        assert!(r.delta.data().iter().all(|&v| v == 0.0));
        assert!(!r.success);
        assert!(r.queries_used <= 60);
    }

    #[test]
    fn accepted_steps_change_one_pixel_by_eps() {
        let x = Tensor::filled(&[4, 4, 3], 0.5);
        let eps = 0.07;
        let r = simba(&FirstCoordScore, &x, &budget(eps, 200, 5), SimbaBasis::Pixel).unwrap();
        // every nonzero delta entry is exactly +-eps
        for &v in r.delta.data() {
            assert!(v == 0.0 || (v.abs() - eps).abs() < 1e-7, "v={v}");
        }
        assert!(r.success);
    }

    #[test]
    fn l2_bound_exact_for_pixel_basis() {
        let x = Tensor::filled(&[6, 6, 3], 0.5);
        let eps = 0.05f32;
        let r = simba(&FirstCoordScore, &x, &budget(eps, 150, 9), SimbaBasis::Pixel).unwrap();
        let accepted = r.delta.data().iter().filter(|&&v| v != 0.0).count();
        let bound = accepted as f64 * (eps as f64).powi(2);
        assert!(r.delta.l2_norm_sq() <= bound * (1.0 + 1e-6));
        // and within the overall T * eps^2 cap
        let t = r.queries_used as f64;
        assert!(r.delta.l2_norm_sq() <= t * (eps as f64).powi(2) * (1.0 + 1e-6));
    }

    #[test]
    fn dct_basis_vectors_are_orthonormal() {
        let shape = [8, 8, 3];
        for k in [0usize, 5, 17, 63] {
            let q = basis_vector(SimbaBasis::Dct, &shape, k);
            assert!((q.l2_norm_sq() - 1.0).abs() < 1e-5);
        }
        let a = basis_vector(SimbaBasis::Dct, &shape, 3);
        let b = basis_vector(SimbaBasis::Dct, &shape, 11);
        let dot: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum();
        assert!(dot.abs() < 1e-6);
    }

    #[test]
    fn query_cap_respected() {
        let x = Tensor::filled(&[8, 8, 3], 0.5);
        let r = simba(&ConstantScore, &x, &budget(0.1, 17, 1), SimbaBasis::Pixel).unwrap();
        assert!(r.queries_used <= 17);
    }

    #[test]
    fn epsilon_zero_is_identity() {
        let x = Tensor::filled(&[4, 4, 3], 0.3);
        let r = simba(&FirstCoordScore, &x, &budget(0.0, 40, 2), SimbaBasis::Pixel).unwrap();
        assert_eq!(r.x_adv.data(), x.data());
        assert!(!r.success);
    }

    #[test]
    fn deterministic_per_seed() {
        let x = Tensor::filled(&[6, 6, 3], 0.5);
        let a = simba(&FirstCoordScore, &x, &budget(0.05, 80, 7), SimbaBasis::Dct).unwrap();
        let b = simba(&FirstCoordScore, &x, &budget(0.05, 80, 7), SimbaBasis::Dct).unwrap();
        assert_eq!(a.x_adv.data(), b.x_adv.data());
        assert_eq!(a.queries_used, b.queries_used);
    }
}
