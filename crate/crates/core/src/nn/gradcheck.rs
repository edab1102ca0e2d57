//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Coordinate (flat index) where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn rel_error<S: Scalar>(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(S::GRAD_FLOOR)
}

/// Compares analytic gradients against central differences for the
/// coordinates in `coords` of a flat parameter vector.
pub fn check_flat<S: Scalar>(
    params: &[S],
    coords: &[usize],
    mut f: impl FnMut(&[S]) -> S,
    analytic: &[S],
    step: f64,
) -> Result<GradReport> {
    if step <= 0.0 {
        return Err(Error::Config(format!(
            "gradient-check step must be positive, got {step}"
        )));
    }
    let mut work = params.to_vec();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let h = S::lit(step);
    for &i in coords {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work);
        work[i] = orig - h;
        let minus = f(&work);
        work[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("gradient check output at coordinate {i}")));
        }
        // Differences are formed in f64 to avoid cancellation in the subtraction.
        let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * step);
        let a = analytic[i].as_f64();
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("analytic gradient at coordinate {i}")));
        }
        let err = rel_error::<S>(a, numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Gradient check with respect to an input tensor.
///
/// `f` maps the input to a scalar objective; `grad` returns the analytic
/// gradient of that objective for the given input.
pub fn check_input<S: Scalar>(
    x: &Tensor<S>,
    f: impl Fn(&Tensor<S>) -> S,
    grad: impl Fn(&Tensor<S>) -> Tensor<S>,
    step: f64,
) -> Result<GradReport> {
    let analytic = grad(x);
    let coords: Vec<usize> = (0..x.len()).collect();
    let mut probe = x.clone();
    check_flat(
        x.data(),
        &coords,
        |v| {
            probe.data_mut().copy_from_slice(v);
            f(&probe)
        },
        analytic.data(),
        step,
    )
}

/// Gradient check with respect to every parameter of a module, or a seeded
/// random sample of `n` coordinates when `sample_coords = Some((n, seed))`.
pub fn check_module<S: Scalar, M: Module<S> + Clone>(
    module: &M,
    f: impl Fn(&M) -> S,
    grad: impl Fn(&M) -> M,
    step: f64,
    sample_coords: Option<(usize, u64)>,
) -> Result<GradReport> {
    let analytic = grad(module).flatten();
    let params = module.flatten();
    let coords: Vec<usize> = match sample_coords {
        Some((n, seed)) if n < params.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, params.len(), n).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..params.len()).collect(),
    };
    let mut probe = module.clone();
    check_flat(
        &params,
        &coords,
        |v| {
            probe.unflatten(v);
            f(&probe)
        },
        &analytic,
        step,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let r = check_input(
            &x,
            |x| x.data().iter().map(|v| v * v).sum(),
            |x| x.map(|v| 2.0 * v),
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = check_input(
            &x,
            |x| x.data().iter().map(|v| v * v).sum(),
            |x| x.map(|v| 3.0 * v),
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn non_finite_reports_coordinate() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 1e-5]).unwrap();
        let err = check_input(&x, |x| x.data()[1].ln(), |x| x.clone(), 1e-4).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(check_flat::<f64>(&[1.0], &[0], |v| v[0], &[1.0], 0.0).is_err());
    }
}
