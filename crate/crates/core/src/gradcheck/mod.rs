//! Central-difference check of tape gradients.

mod suite;

pub use suite::{run_suite, SuiteRow, OP_NAMES};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scalar-valued function of one tensor, rebuilt on a fresh tape per call.
pub trait ScalarFn: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> {}
impl<F> ScalarFn for F where F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> {}

/// Max over all coordinates of `|analytic - central| / max(1, |analytic|)`.
pub fn gradcheck<F: ScalarFn>(f: F, point: &Tensor, step: f64) -> Result<f64> {
    let coords: Vec<usize> = (0..point.len()).collect();
    gradcheck_coords(f, point, step, &coords)
}

/// As [`gradcheck`], restricted to the listed flat coordinates.
pub fn gradcheck_coords<F: ScalarFn>(
    f: F,
    point: &Tensor,
    step: f64,
    coords: &[usize],
) -> Result<f64> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(format!("gradcheck: step must be positive, got {step}")));
    }
    let analytic = analytic_grad(&f, point)?;
    let eval = |x: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.param(x);
        Ok(f(&tape, v)?.item())
    };
    let mut worst: f64 = 0.0;
    for &i in coords {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Outcome of [`gradcheck_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub max_error: f64,
    pub checked: usize,
    /// Coordinates dropped because they sit on a kink.
    pub skipped: usize,
}

/// Like [`gradcheck_coords`], but drops coordinates whose one-sided
/// differences disagree by more than `kink_tol * max(1, |analytic|)`: the
/// step straddles a point where the function is not differentiable.
pub fn gradcheck_report<F: ScalarFn>(
    f: F,
    point: &Tensor,
    step: f64,
    coords: &[usize],
    kink_tol: f64,
) -> Result<CheckReport> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::invalid(format!("gradcheck: step must be positive, got {step}")));
    }
    let analytic = analytic_grad(&f, point)?;
    let eval = |x: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.param(x);
        Ok(f(&tape, v)?.item())
    };
    let f0 = eval(point.clone())?;
    let mut report = CheckReport {
        max_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for &i in coords {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        let a = analytic.data()[i];
        let scale = a.abs().max(1.0);
        if ((fp - f0) / step - (f0 - fm) / step).abs() > kink_tol * scale {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        report.max_error = report.max_error.max((a - numeric).abs() / scale);
        report.checked += 1;
    }
    Ok(report)
}

fn analytic_grad<F: ScalarFn>(f: &F, point: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&tape, x)?;
    if !y.value().is_scalar() {
        return Err(Error::NotScalar(y.shape()));
    }
    tape.backward(y)?;
    Ok(x.grad().unwrap_or_else(|| Tensor::zeros(point.shape())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm() {
        let p = Tensor::vector(vec![0.5, -1.5, 2.0, 3.25]).unwrap();
        let err = gradcheck(
            |_, x| x.mul(&x)?.sum()?.scale(0.5),
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn zero_step_rejected() {
        let p = Tensor::vector(vec![1.0]).unwrap();
        assert!(gradcheck(|_, x| x.sum(), &p, 0.0).is_err());
    }

    #[test]
    fn matmul_sum_grad_matches_fd() {
        // loss = sum(x W) with x = [[1, 1]]: dL/dW[i][j] = x[i].
        let w = Tensor::new(vec![2, 3], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let f = |tape: &Tape, w: Var<'_>| -> Result<f64> {
            let xv = tape.constant(x.clone());
            Ok(xv.matmul(&w)?.sum()?.item())
        };
        let tape = Tape::new();
        let wv = tape.param(w.clone());
        let xv = tape.constant(x.clone());
        tape.backward(xv.matmul(&wv).unwrap().sum().unwrap()).unwrap();
        let g = wv.grad().unwrap();
        for i in 0..w.len() {
            let mut p = w.clone();
            p.data_mut()[i] += 1e-6;
            let mut m = w.clone();
            m.data_mut()[i] -= 1e-6;
            let tp = Tape::new();
            let fp = f(&tp, tp.param(p)).unwrap();
            let tm = Tape::new();
            let fm = f(&tm, tm.param(m)).unwrap();
            let fd = (fp - fm) / 2e-6;
            assert!((fd - g.data()[i]).abs() < 1e-8);
            assert!((fd - 1.0).abs() < 1e-8);
        }
    }
}
