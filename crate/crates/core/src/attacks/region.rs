//! Box-confined attack variants for the regression protocol.
//!
//! The lead-distance evaluation perturbs only the lead vehicle's image
//! region, frame by frame, so the attack surface shrinks with apparent
//! size: a nearby vehicle exposes hundreds of pixels, a distant one a
//! handful. These wrappers restrict each base attack's perturbation
//! support to a box while keeping its budget semantics.

use crate::error::Result;
use crate::geometry::Box2;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::{sign_zero, AttackObjective, AttackResult, BlackBoxScore, Budget, NormKind};
use crate::error::ArwError;

/// Binary support mask for a box, all channels.
pub fn region_mask(shape: &[usize], region: &Box2) -> Tensor {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let (x0, y0, x1, y1) = region.corners();
    let mut data = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let inside = (x as f32 + 0.5) >= x0
                && (x as f32 + 0.5) <= x1
                && (y as f32 + 0.5) >= y0
                && (y as f32 + 0.5) <= y1;
            if inside {
                for ch in 0..c {
                    data[(y * w + x) * c + ch] = 1.0;
                }
            }
        }
    }
    Tensor::from_vec(shape, data).expect("valid mask")
}

/// Gaussian noise restricted to the region.
pub fn gaussian_noise_in_region(
    x: &Tensor,
    sigma: f32,
    seed: u64,
    region: &Box2,
) -> Result<AttackResult> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(ArwError::contract(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mask = region_mask(x.shape(), region);
    let mut rng = Rng::new(seed);
    let delta = Tensor::from_vec(
        x.shape(),
        mask.data()
            .iter()
            .map(|&m| m * sigma * rng.normal())
            .collect(),
    )?;
    let moved = delta.max_abs() > 0.0;
    AttackResult::assemble(x, delta, vec![], 0, moved)
}

/// Single signed-gradient step on the region only.
pub fn fgsm_in_region(
    objective: &dyn AttackObjective,
    x: &Tensor,
    budget: &Budget,
    region: &Box2,
) -> Result<AttackResult> {
    budget.validate()?;
    let mask = region_mask(x.shape(), region);
    let (clean_loss, grad) = objective.loss_and_grad(x)?;
    let delta = Tensor::from_vec(
        x.shape(),
        grad.data()
            .iter()
            .zip(mask.data())
            .map(|(&g, &m)| m * budget.epsilon * sign_zero(g))
            .collect(),
    )?;
    let x_adv = x.add_clamped(&delta, 0.0, 1.0)?;
    let adv_loss = objective.loss_at(&x_adv)?;
    AttackResult::assemble(x, delta, vec![clean_loss, adv_loss], 0, adv_loss > clean_loss)
}

/// Projected-gradient iterations whose support stays inside the region;
/// same adaptive step-halving as the unconstrained variant.
pub fn auto_pgd_in_region(
    objective: &dyn AttackObjective,
    x: &Tensor,
    budget: &Budget,
    region: &Box2,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm != NormKind::Linf {
        return Err(ArwError::contract("auto_pgd is an Linf attack"));
    }
    let mask = region_mask(x.shape(), region);
    let eps = budget.epsilon;
    let mut alpha = budget.alpha;
    let window = (budget.max_iters / 10).max(5);

    let clean_loss = objective.loss_at(x)?;
    let mut trace = vec![clean_loss];
    let mut delta = Tensor::zeros(x.shape());
    let mut best: Option<(f32, Tensor)> = None;
    let mut best_at_checkpoint = f32::NEG_INFINITY;

    for iter in 1..=budget.max_iters {
        let current = x.add_clamped(&delta, 0.0, 1.0)?;
        let (_, grad) = objective.loss_and_grad(&current)?;
        let stepped: Vec<f32> = delta
            .data()
            .iter()
            .zip(grad.data())
            .zip(mask.data())
            .map(|((&d, &g), &m)| (m * (d + alpha * sign_zero(g))).clamp(-eps, eps))
            .collect();
        delta = Tensor::from_vec(x.shape(), stepped)?;
        let loss = objective.loss_at(&x.add_clamped(&delta, 0.0, 1.0)?)?;
        trace.push(loss);
        if best.as_ref().map_or(true, |(b, _)| loss > *b) {
            best = Some((loss, delta.clone()));
        }
        if iter % window == 0 {
            let best_loss = best.as_ref().map(|(b, _)| *b).unwrap();
            if best_loss <= best_at_checkpoint {
                alpha *= 0.5;
            }
            best_at_checkpoint = best_loss;
        }
    }
    let (best_loss, delta) = best.expect("max_iters >= 1");
    AttackResult::assemble(x, delta, trace, 0, best_loss > clean_loss)
}

/// Pixel-basis black-box coordinate search over region coordinates only.
pub fn simba_in_region(
    score_fn: &dyn BlackBoxScore,
    x: &Tensor,
    budget: &Budget,
    region: &Box2,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.max_queries < 1 {
        return Err(ArwError::contract("simba needs max_queries >= 1"));
    }
    let mask = region_mask(x.shape(), region);
    let eps = budget.epsilon;
    let mut order: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(k, _)| k)
        .collect();
    let mut rng = Rng::new(budget.seed);
    rng.shuffle(&mut order);

    let mut queries = 0usize;
    let clean_score = {
        queries += 1;
        score_fn.score(x)?
    };
    let mut best_score = clean_score;
    let mut delta = Tensor::zeros(x.shape());
    let mut trace = vec![clean_score];

    for &k in &order {
        if queries >= budget.max_queries {
            break;
        }
        for sign in [1.0f32, -1.0] {
            if queries >= budget.max_queries {
                break;
            }
            let mut cand = delta.clone();
            cand.data_mut()[k] += sign * eps;
            queries += 1;
            let s = score_fn.score(&x.add_clamped(&cand, 0.0, 1.0)?)?;
            if s < best_score {
                best_score = s;
                delta = cand;
                trace.push(best_score);
                break;
            }
        }
    }
    let success = best_score < clean_score;
    AttackResult::assemble(x, delta, trace, queries, success)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{regressor_forward, ModelBundle, ModelKind};
    use crate::scenegen::generate_road_sequence;

    #[test]
    fn masked_attacks_confine_support() {
        let model = ModelBundle::new(ModelKind::DistanceRegressor, 5);
        let frame = generate_road_sequence(1, 12.0, 12.0, 3).unwrap().remove(0);
        let clean = regressor_forward(&model, &frame.image).unwrap();
        let obj = super::super::RegressorObjective {
            model: &model,
            clean_pred: clean,
        };
        let budget = Budget::linf(0.05, 0.02, 4, 0);
        let mask = region_mask(frame.image.shape(), &frame.lead_box);

        let bounded = [
            fgsm_in_region(&obj, &frame.image, &budget, &frame.lead_box).unwrap(),
            auto_pgd_in_region(&obj, &frame.image, &budget, &frame.lead_box).unwrap(),
        ];
        for r in &bounded {
            assert!(r.delta.max_abs() <= 0.05 + 1e-7);
        }
        let gauss = gaussian_noise_in_region(&frame.image, 0.05, 7, &frame.lead_box).unwrap();
        for r in bounded.iter().chain(std::iter::once(&gauss)) {
            for (d, m) in r.delta.data().iter().zip(mask.data()) {
                if *m == 0.0 {
                    assert_eq!(*d, 0.0);
                }
            }
        }
    }

    #[test]
    fn region_simba_changes_only_region_pixels() {
        let model = ModelBundle::new(ModelKind::DistanceRegressor, 5);
        let frame = generate_road_sequence(1, 10.0, 10.0, 4).unwrap().remove(0);
        let clean = regressor_forward(&model, &frame.image).unwrap();
        let score = super::super::RegressorScore {
            model: &model,
            clean_pred: clean,
        };
        let budget = Budget {
            norm: NormKind::L2,
            epsilon: 0.05,
            alpha: 0.05,
            max_iters: 1,
            max_queries: 40,
            seed: 9,
        };
        let r = simba_in_region(&score, &frame.image, &budget, &frame.lead_box).unwrap();
        let mask = region_mask(frame.image.shape(), &frame.lead_box);
        for (d, m) in r.delta.data().iter().zip(mask.data()) {
            if *m == 0.0 {
                assert_eq!(*d, 0.0);
            }
        }
        assert!(r.queries_used <= 40);
    }
}
