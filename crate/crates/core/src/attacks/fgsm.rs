//! Fast gradient sign method: x_adv = clip(x + eps * sign(grad J)).

use crate::error::{ArwError, Result};
use crate::tensor::Tensor;

use super::{sign_zero, AttackObjective, AttackResult, Budget, NormKind};

pub fn fgsm(objective: &dyn AttackObjective, x: &Tensor, budget: &Budget) -> Result<AttackResult> {
    budget.validate()?;
    if budget.norm != NormKind::Linf {
        return Err(ArwError::contract("fgsm is an Linf attack"));
    }
    let (clean_loss, grad) = objective.loss_and_grad(x)?;
    let delta = Tensor::from_vec(
        x.shape(),
        grad.data()
            .iter()
            .map(|&g| budget.epsilon * sign_zero(g))
            .collect(),
    )?;
    let x_adv = x.add_clamped(&delta, 0.0, 1.0)?;
    let adv_loss = objective.loss_at(&x_adv)?;
    AttackResult::assemble(x, delta, vec![clean_loss, adv_loss], 0, adv_loss > clean_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{Tape, Val};

    /// J = w . x with fixed weights; gradient is w everywhere.
    struct LinearObjective {
        w: Vec<f32>,
    }

    impl AttackObjective for LinearObjective {
        fn loss_on_tape(&self, tape: &Tape, image: Val) -> Result<Val> {
            let w = tape.leaf(&Tensor::from_vec(&[self.w.len()], self.w.clone())?);
            let prod = tape.mul(w, image)?;
            Ok(tape.sum(prod))
        }
    }

    #[test]
    fn linear_case_matches_closed_form() {
        // w=(2,-3), x=(0.5,0.5), eps=0.1 -> x_adv=(0.6,0.4)
        let obj = LinearObjective { w: vec![2.0, -3.0] };
        let x = Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap();
        let r = fgsm(&obj, &x, &Budget::linf(0.1, 0.1, 1, 0)).unwrap();
        assert!((r.x_adv.data()[0] - 0.6).abs() < 1e-6);
        assert!((r.x_adv.data()[1] - 0.4).abs() < 1e-6);
        assert!(r.success);
    }

    #[test]
    fn epsilon_zero_is_identity() {
        let obj = LinearObjective { w: vec![1.0, 1.0] };
        let x = Tensor::from_vec(&[2], vec![0.3, 0.7]).unwrap();
        let r = fgsm(&obj, &x, &Budget::linf(0.0, 0.1, 1, 0)).unwrap();
        assert_eq!(r.x_adv.data(), x.data());
        assert!(!r.success);
    }

    #[test]
    fn zero_gradient_coordinate_stays_put() {
        let obj = LinearObjective { w: vec![1.0, 0.0] };
        let x = Tensor::from_vec(&[2], vec![0.5, 0.5]).unwrap();
        let r = fgsm(&obj, &x, &Budget::linf(0.1, 0.1, 1, 0)).unwrap();
        assert_eq!(r.delta.data()[1], 0.0);
        assert_eq!(r.x_adv.data()[1], 0.5);
    }

    #[test]
    fn linf_bound_holds_exactly() {
        let obj = LinearObjective {
            w: vec![0.5, -0.2, 0.0, 3.0],
        };
        let x = Tensor::from_vec(&[4], vec![0.1, 0.9, 0.5, 0.99]).unwrap();
        let eps = 8.0 / 255.0;
        let r = fgsm(&obj, &x, &Budget::linf(eps, eps, 1, 0)).unwrap();
        assert!(r.delta.max_abs() <= eps);
        assert!(r.x_adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // the invariant x_adv = clip(x + delta) reproduces exactly
        let re = x.add_clamped(&r.delta, 0.0, 1.0).unwrap();
        assert_eq!(re.data(), r.x_adv.data());
    }
}
