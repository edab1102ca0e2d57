use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability clamp applied before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

fn clamp<S: Scalar>(p: S) -> S {
    let eps = S::lit(BCE_EPS);
    p.max(eps).min(S::one() - eps)
}

/// Mean binary cross-entropy over shots.
pub fn bce_loss<S: Scalar>(p: &[S], y: &[S]) -> Result<S> {
    if p.len() != y.len() {
        return Err(Error::dim("bce_loss", &[p.len()], &[y.len()]));
    }
    if p.is_empty() {
        return Ok(S::zero());
    }
    let total: S = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp(p);
            -(y * p.ln() + (S::one() - y) * (S::one() - p).ln())
        })
        .sum();
    Ok(total / S::from_usize_lossy(p.len()))
}

/// `dL/dp` of [`bce_loss`]; zero where the clamp is active.
pub fn bce_grad<S: Scalar>(p: &[S], y: &[S]) -> Result<Vec<S>> {
    if p.len() != y.len() {
        return Err(Error::dim("bce_grad", &[p.len()], &[y.len()]));
    }
    let n = S::from_usize_lossy(p.len().max(1));
    let eps = S::lit(BCE_EPS);
    Ok(p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            if p < eps || p > S::one() - eps {
                S::zero()
            } else {
                (p - y) / (p * (S::one() - p)) / n
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_flat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_probability() {
        let l = bce_loss(&[0.5f64], &[1.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_eps_level() {
        let l = bce_loss(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap();
        assert!(l > 0.0 && l < 1e-6);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(bce_loss(&[0.5f64], &[1.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..12).map(|_| rng.random_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..12).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let g = bce_grad(&p, &y).unwrap();
        let coords: Vec<usize> = (0..p.len()).collect();
        let r = check_flat(&p, &coords, |p| bce_loss(p, &y).unwrap(), &g, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
