//! Closed-form perturbation directions.

use crate::autodiff::sgn;
use crate::tensor::Tensor;

/// Gradient norms at or below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// `eps * sgn(grad)` with `sgn(0) = 0`.
pub fn fgsm(grad: &Tensor, eps: f64) -> Tensor {
    grad.map(|g| eps * sgn(g))
}

/// `eps * grad / ||grad||_2`, or zeros when `||grad||_2 <= 1e-12`.
pub fn fgm(grad: &Tensor, eps: f64) -> Tensor {
    let norm = grad.norm();
    if norm <= DEGENERATE_NORM {
        return Tensor::zeros(grad.shape());
    }
    grad.map(|g| eps * g / norm)
}

/// One normalized ascent step from `x_t`, projected back onto the L2 ball
/// of `radius` around `x0`.
pub fn pgd_step(x_t: &Tensor, grad: &Tensor, alpha: f64, x0: &Tensor, radius: f64) -> Tensor {
    let step = fgm(grad, alpha);
    let mut offset: Vec<f64> = x_t
        .data()
        .iter()
        .zip(step.data())
        .zip(x0.data())
        .map(|((x, s), o)| x + s - o)
        .collect();
    let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let shrink = radius / norm;
        offset.iter_mut().for_each(|v| *v *= shrink);
    }
    Tensor::from_parts(
        x0.shape().to_vec(),
        x0.data().iter().zip(&offset).map(|(o, d)| o + d).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Tensor {
        Tensor::vector(x.to_vec()).unwrap()
    }

    #[test]
    fn fgsm_sign_definition() {
        assert_eq!(fgsm(&v(&[0.2, -0.7, 0.0]), 0.1).data(), &[0.1, -0.1, 0.0]);
        assert_eq!(fgsm(&v(&[0.2, -0.7, 0.0]), 0.0).data(), &[0.0, -0.0, 0.0]);
        assert!(fgsm(&v(&[1.0, 2.0, 3.0]), 0.5).data().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn fgm_cases() {
        assert_eq!(fgm(&v(&[3.0, 4.0]), 5.0).data(), &[3.0, 4.0]);
        assert_eq!(fgm(&v(&[0.0, 0.0]), 5.0).data(), &[0.0, 0.0]);
        assert_eq!(fgm(&v(&[1e-13, 0.0]), 5.0).data(), &[0.0, 0.0]);
    }

    #[test]
    fn pgd_projection_cases() {
        let zero = v(&[0.0, 0.0]);
        assert_eq!(pgd_step(&zero, &v(&[1.0, 0.0]), 2.0, &zero, 1.0).data(), &[1.0, 0.0]);
        let inside = pgd_step(&zero, &v(&[0.0, 3.0]), 0.25, &zero, 1.0);
        assert_eq!(inside.data(), &[0.0, 0.25]);
    }

    proptest! {
        #[test]
        fn fgm_has_norm_eps(g in prop::collection::vec(-10.0f64..10.0, 1..40), eps in 0.0f64..20.0) {
            let g = v(&g);
            prop_assume!(g.norm() > 1e-6);
            prop_assert!((fgm(&g, eps).norm() - eps).abs() < 1e-9);
        }

        #[test]
        fn pgd_stays_in_ball(
            x0 in prop::collection::vec(-5.0f64..5.0, 3),
            grads in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 10),
            alpha in 0.01f64..2.0,
            radius in 0.01f64..3.0,
        ) {
            let x0 = v(&x0);
            let mut x = x0.clone();
            for g in grads {
                x = pgd_step(&x, &v(&g), alpha, &x0, radius);
                prop_assert!(x.sub(&x0).unwrap().norm() <= radius + 1e-10);
            }
        }
    }
}
