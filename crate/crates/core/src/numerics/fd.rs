use crate::error::{Error, Result};

/// Central-difference gradient `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, theta: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::Numerical(format!("finite-difference step {step} must be positive")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + step;
        let plus = f(&probe);
        probe[i] = theta[i] - step;
        let minus = f(&probe);
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!("non-finite objective around coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|t| t.iter().map(|x| x * x).sum(), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_diff_grad(|_| 3.5, &[0.1, -4.0, 9.0], 1e-5).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sine_at_origin() {
        let g = finite_diff_grad(|t| t[0].sin(), &[0.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let err = finite_diff_grad(|t| 1.0 / t[0], &[0.0], 1e-5);
        assert!(err.is_ok(), "1/x is finite at ±h");
        let err = finite_diff_grad(|t| (t[0] - 1e-5).ln(), &[0.0], 1e-5).unwrap_err();
        assert!(err.is_numerical());
        assert!(finite_diff_grad(|t| t[0], &[0.0], 0.0).is_err());
    }
}
