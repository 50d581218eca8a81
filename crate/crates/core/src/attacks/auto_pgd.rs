//! Iterative projected gradient attack with an adaptive step size.
//!
//! Each iterate is x_{t+1} = Proj(x_t + alpha * sign(grad J)), projecting
//! onto the eps-ball around x intersected with [0,1]. The step size
//! halves whenever the best-so-far loss fails to improve across a
//! checkpoint window of max(5, iters/10); the returned adversarial image
//! is the best-loss iterate visited.

use crate::error::{ArwError, Result};
use crate::tensor::Tensor;

use super::{sign_zero, AttackObjective, AttackResult, Budget, NormKind};

pub fn auto_pgd(
    objective: &dyn AttackObjective,
    x: &Tensor,
    budget: &Budget,
) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm != NormKind::Linf {
        return Err(ArwError::contract("auto_pgd is an Linf attack"));
    }
    let eps = budget.epsilon;
    let mut alpha = budget.alpha;
    let window = (budget.max_iters / 10).max(5);

    let clean_loss = objective.loss_at(x)?;
    let mut trace = vec![clean_loss];

    // the perturbation is the state: clamping delta keeps the Linf bound
    // exact in f32, and the visited iterate is always clip(x + delta)
    let mut delta = Tensor::zeros(x.shape());
    let mut best_delta: Option<Tensor> = None;
    let mut best_loss = f32::NEG_INFINITY;
    let mut best_at_last_checkpoint = f32::NEG_INFINITY;

    for iter in 1..=budget.max_iters {
        let current = x.add_clamped(&delta, 0.0, 1.0)?;
        let (_, grad) = objective.loss_and_grad(&current)?;
        let stepped: Vec<f32> = delta
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&d, &g)| (d + alpha * sign_zero(g)).clamp(-eps, eps))
            .collect();
        delta = Tensor::from_vec(x.shape(), stepped)?;
        let loss = objective.loss_at(&x.add_clamped(&delta, 0.0, 1.0)?)?;
        trace.push(loss);

        if loss > best_loss {
            best_loss = loss;
            best_delta = Some(delta.clone());
        }
        if iter % window == 0 {
            if best_loss <= best_at_last_checkpoint {
                alpha *= 0.5;
            }
            best_at_last_checkpoint = best_loss;
        }
    }

    let delta = best_delta.expect("max_iters >= 1 guarantees one iterate");
    let success = best_loss > clean_loss;
    AttackResult::assemble(x, delta, trace, 0, success)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::fgsm;
    use crate::tape::{Tape, Val};

    struct QuadraticObjective;

    // J = mean((x - 0.2)^2): gradient points away from 0.2
    impl AttackObjective for QuadraticObjective {
        fn loss_on_tape(&self, tape: &Tape, image: Val) -> Result<Val> {
            let target = tape.leaf(&Tensor::filled(&tape.shape(image), 0.2));
            tape.mse(image, target)
        }
    }

    #[test]
    fn one_iter_with_alpha_eps_equals_fgsm() {
        let obj = QuadraticObjective;
        let x = Tensor::from_vec(&[5], vec![0.5, 0.1, 0.9, 0.3, 0.25]).unwrap();
        let budget = Budget::linf(0.05, 0.05, 1, 0);
        let a = auto_pgd(&obj, &x, &budget).unwrap();
        let f = fgsm(&obj, &x, &budget).unwrap();
        assert_eq!(a.x_adv.data(), f.x_adv.data());
    }

    #[test]
    fn best_so_far_trace_is_monotone() {
        let obj = QuadraticObjective;
        let x = Tensor::from_vec(&[6], vec![0.5, 0.4, 0.6, 0.3, 0.7, 0.2]).unwrap();
        let r = auto_pgd(&obj, &x, &Budget::linf(0.1, 0.02, 25, 0)).unwrap();
        let mut best = f32::NEG_INFINITY;
        let mut running = Vec::new();
        for &v in &r.loss_trace[1..] {
            best = best.max(v);
            running.push(best);
        }
        for w in running.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // returned iterate attains the best visited loss
        let final_loss = obj.loss_at(&r.x_adv).unwrap();
        assert!((final_loss - best).abs() < 1e-6);
    }

    #[test]
    fn linf_projection_is_exact() {
        let obj = QuadraticObjective;
        let x = Tensor::from_vec(&[4], vec![0.5, 0.02, 0.98, 0.4]).unwrap();
        let eps = 0.03;
        let r = auto_pgd(&obj, &x, &Budget::linf(eps, 0.02, 15, 0)).unwrap();
        assert!(r.delta.max_abs() <= eps);
        assert!(r.x_adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn epsilon_zero_is_identity() {
        let obj = QuadraticObjective;
        let x = Tensor::from_vec(&[3], vec![0.5, 0.6, 0.7]).unwrap();
        let r = auto_pgd(&obj, &x, &Budget::linf(0.0, 0.01, 5, 0)).unwrap();
        assert_eq!(r.x_adv.data(), x.data());
        assert!(!r.success);
    }

    #[test]
    fn more_iterations_do_not_hurt() {
        let obj = QuadraticObjective;
        let x = Tensor::from_vec(&[6], vec![0.5, 0.45, 0.55, 0.35, 0.65, 0.5]).unwrap();
        let short = auto_pgd(&obj, &x, &Budget::linf(0.1, 0.05, 2, 0)).unwrap();
        let long = auto_pgd(&obj, &x, &Budget::linf(0.1, 0.05, 30, 0)).unwrap();
        let loss_short = obj.loss_at(&short.x_adv).unwrap();
        let loss_long = obj.loss_at(&long.x_adv).unwrap();
        assert!(loss_long >= loss_short);
    }
}
