//! Central finite-difference oracle for gradients.

use crate::error::Error;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Gradient of `f` at `at` by reverse-mode differentiation.
pub fn analytic_grad<F, E>(f: &F, at: &Tensor<f64>) -> std::result::Result<Tensor<f64>, E>
where
    F: Fn(&mut Graph<f64>, Var) -> std::result::Result<Var, E>,
    E: From<Error>,
{
    let mut g = Graph::new();
    let x = g.param(at.clone());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    Ok(g.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(at.shape())))
}

fn eval<F, E>(f: &F, at: Tensor<f64>) -> std::result::Result<f64, E>
where
    F: Fn(&mut Graph<f64>, Var) -> std::result::Result<Var, E>,
    E: From<Error>,
{
    let mut g = Graph::new();
    let x = g.input(at);
    let y = f(&mut g, x)?;
    let v = g.value(y);
    if v.numel() != 1 {
        return Err(Error::Graph(format!("function must return a scalar, got {:?}", v.shape())).into());
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "finite_diff_check" }.into());
    }
    Ok(v)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for every element `i`.
pub fn central_difference<F, E>(f: &F, at: &Tensor<f64>, eps: f64) -> std::result::Result<Tensor<f64>, E>
where
    F: Fn(&mut Graph<f64>, Var) -> std::result::Result<Var, E>,
    E: From<Error>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("eps must be > 0, got {eps}")).into());
    }
    let mut out = Vec::with_capacity(at.numel());
    for i in 0..at.numel() {
        let mut plus = at.clone();
        plus.data_mut()[i] += eps;
        let mut minus = at.clone();
        minus.data_mut()[i] -= eps;
        out.push((eval(f, plus)? - eval(f, minus)?) / (2.0 * eps));
    }
    Ok(Tensor::new(at.shape(), out)?)
}

/// Fraction of a tensor's largest gradient component below which a component
/// is judged against that scale instead of its own magnitude: central
/// differences cannot resolve smaller components above roundoff.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Largest `|a − c| / max(|a|, |c|, s)` between analytic and
/// central-difference gradients, with `s = max(1e-8, RELATIVE_FLOOR · max_j max(|a_j|, |c_j|))`.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    let pairs = || analytic.data().iter().zip(numeric.data());
    let scale = pairs().fold(0.0f64, |m, (a, c)| m.max(a.abs()).max(c.abs()));
    let floor = (RELATIVE_FLOOR * scale).max(1e-8);
    pairs()
        .map(|(&a, &c)| (a - c).abs() / a.abs().max(c.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares reverse-mode and central-difference gradients of the scalar
/// function `f` at `at`; returns the maximum relative error.
pub fn finite_diff_check<F, E>(f: F, at: &Tensor<f64>, eps: f64) -> std::result::Result<f64, E>
where
    F: Fn(&mut Graph<f64>, Var) -> std::result::Result<Var, E>,
    E: From<Error>,
{
    let numeric = central_difference(&f, at, eps)?;
    let analytic = analytic_grad(&f, at)?;
    Ok(relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact_to_roundoff() {
        let at = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let err = finite_diff_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum(sq)
            },
            &at,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let at = Tensor::new(&[3], vec![0.1, -4.0, 2.0]).unwrap();
        let err = finite_diff_check(
            |g, _x| {
                let c = g.input(Tensor::scalar(7.0));
                g.sum(c)
            },
            &at,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_function_rejected() {
        let at = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        assert!(finite_diff_check(|g, x| g.relu(x), &at, 1e-5).is_err());
        assert!(finite_diff_check(|g, x| g.sum(x), &at, 0.0).is_err());
    }

    #[test]
    fn components_far_below_scale_are_judged_absolutely() {
        let t = |v: Vec<f64>| Tensor::new(&[2], v).unwrap();
        let tiny = relative_error(&t(vec![1.0, 1e-9]), &t(vec![1.0, 3e-9]));
        assert!((tiny - 2e-9 / 1e-4).abs() < 1e-12, "{tiny}");
        let wrong = relative_error(&t(vec![1.0, 1e-3]), &t(vec![1.0, 2e-3]));
        assert!((wrong - 0.5).abs() < 1e-12, "{wrong}");
    }
}
