use crate::error::{shape_err, Error, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

struct AddRule;

impl<T: Real> Backward<T> for AddRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        ctx.needs.iter().map(|&n| n.then(|| ctx.grad.clone())).collect()
    }
}

struct MulRule;

impl<T: Real> Backward<T> for MulRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
        let times = |other: &Tensor<T>| {
            let data = ctx.grad.data().iter().zip(other.data()).map(|(&g, &o)| g * o).collect();
            Tensor::new(ctx.grad.shape(), data).expect("same shape")
        };
        vec![ctx.needs[0].then(|| times(b)), ctx.needs[1].then(|| times(a))]
    }
}

/// `Σ coeffs[i]·inputs[i]`.
struct LinearCombRule<T> {
    coeffs: Vec<T>,
}

impl<T: Real> Backward<T> for LinearCombRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        self.coeffs
            .iter()
            .zip(&ctx.needs)
            .map(|(&c, &need)| {
                need.then(|| {
                    let data = ctx.grad.data().iter().map(|&g| g * c).collect();
                    Tensor::new(ctx.grad.shape(), data).expect("same shape")
                })
            })
            .collect()
    }
}

struct ReluRule;

impl<T: Real> Backward<T> for ReluRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let data = ctx
            .grad
            .data()
            .iter()
            .zip(ctx.output.data())
            .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
            .collect();
        vec![Some(Tensor::new(ctx.grad.shape(), data).expect("same shape"))]
    }
}

struct SumRule;

impl<T: Real> Backward<T> for SumRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = ctx.grad.data()[0];
        vec![Some(Tensor::full(ctx.inputs[0].shape(), g))]
    }
}

impl<T: Real> Graph<T> {
    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "operands differ: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.record("add", &[a, b], out, AddRule)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.record("mul", &[a, b], out, MulRule)
    }

    /// `Σ coeff·var` over same-shaped terms.
    pub fn linear_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Invalid("linear_comb needs at least one term".into()));
        };
        for &(v, c) in terms {
            self.same_shape(first, v)?;
            if !c.is_finite() {
                return Err(Error::Invalid(format!("coefficient {c} is not finite")));
            }
        }
        let coeffs: Vec<T> = terms.iter().map(|&(_, c)| T::from_f64(c)).collect();
        let mut data = vec![T::zero(); self.value(first).numel()];
        for (&(v, _), &c) in terms.iter().zip(&coeffs) {
            for (acc, &x) in data.iter_mut().zip(self.value(v).data()) {
                *acc += c * x;
            }
        }
        let out = Tensor::new(self.value(first).shape(), data)?;
        let vars: Vec<Var> = terms.iter().map(|&(v, _)| v).collect();
        self.record("linear_comb", &vars, out, LinearCombRule { coeffs })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.linear_comb(&[(a, factor)])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let x = self.value(a);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.record("relu", &[a], out, ReluRule)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let total = self.value(a).data().iter().copied().sum::<T>();
        self.record("sum", &[a], Tensor::scalar(total), SumRule)
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    fn vec3(g: &mut Graph<f64>, v: [f64; 3]) -> crate::Var {
        g.param(Tensor::new(&[3], v.to_vec()).unwrap())
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = vec3(&mut g, [1.0, -2.0, 5.0]);
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_two_x() {
        let mut g = Graph::new();
        let x = vec3(&mut g, [1.0, 2.0, 3.0]);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn relu_passes_positive_gradient_only() {
        let mut g = Graph::new();
        let x = vec3(&mut g, [-1.0, 0.5, 2.0]);
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0.0, 0.5, 2.0]);
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = vec3(&mut g, [1.0, 2.0, 3.0]);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_and_empty_comb_rejected() {
        let mut g = Graph::<f64>::new();
        let a = vec3(&mut g, [1.0, 2.0, 3.0]);
        let b = g.param(Tensor::scalar(1.0));
        assert!(g.add(a, b).is_err());
        assert!(g.linear_comb(&[]).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::scalar(1e308));
        assert!(matches!(g.scale(a, 1e10), Err(crate::Error::NonFinite { .. })));
    }
}
