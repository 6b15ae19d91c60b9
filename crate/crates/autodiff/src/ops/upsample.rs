//! Bilinear upsampling, align-corners = false.
//!
//! Output index `d` along an axis of input length `n_in` and output length
//! `n_out` reads source coordinate `max(0, (d + 0.5)·n_in/n_out − 0.5)`,
//! interpolating between `floor` and `min(floor + 1, n_in − 1)`.

use crate::error::{shape_err, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

fn axis_taps<T: Real>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            Tap {
                lo,
                hi: (lo + 1).min(n_in - 1),
                frac: T::from_f64(src - lo as f64),
            }
        })
        .collect()
}

struct UpsampleRule<T> {
    rows: Vec<Tap<T>>,
    cols: Vec<Tap<T>>,
    h: usize,
    w: usize,
}

impl<T: Real> Backward<T> for UpsampleRule<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut gx = vec![T::zero(); ctx.inputs[0].numel()];
        let one = T::one();
        for (gplane, plane) in gx
            .chunks_exact_mut(self.h * self.w)
            .zip(ctx.grad.data().chunks_exact(oh * ow))
        {
            for (oy, r) in self.rows.iter().enumerate() {
                for (ox, c) in self.cols.iter().enumerate() {
                    let g = plane[oy * ow + ox];
                    gplane[r.lo * self.w + c.lo] += g * (one - r.frac) * (one - c.frac);
                    gplane[r.lo * self.w + c.hi] += g * (one - r.frac) * c.frac;
                    gplane[r.hi * self.w + c.lo] += g * r.frac * (one - c.frac);
                    gplane[r.hi * self.w + c.hi] += g * r.frac * c.frac;
                }
            }
        }
        vec![Some(Tensor::new(ctx.inputs[0].shape(), gx).expect("x shape"))]
    }
}

impl<T: Real> Graph<T> {
    /// Bilinear resize of `x [N,C,H,W]` to `[N,C,out_h,out_w]` with
    /// `out_h ≥ H`, `out_w ≥ W`.
    pub fn bilinear_upsample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check(x)?;
        let (n, c, h, w) = self.value(x).dims4()?;
        if out_h < h || out_w < w {
            return shape_err(format!("upsample cannot shrink {h}x{w} to {out_h}x{out_w}"));
        }
        let rows = axis_taps::<T>(h, out_h);
        let cols = axis_taps::<T>(w, out_w);
        let out = resample(self.value(x).data(), h, w, &rows, &cols);
        let out = Tensor::new(&[n, c, out_h, out_w], out)?;
        self.record("bilinear_upsample", &[x], out, UpsampleRule { rows, cols, h, w })
    }
}

fn resample<T: Real>(data: &[T], h: usize, w: usize, rows: &[Tap<T>], cols: &[Tap<T>]) -> Vec<T> {
    let one = T::one();
    let mut out = Vec::with_capacity(data.len() / (h * w) * rows.len() * cols.len());
    for plane in data.chunks_exact(h * w) {
        for r in rows {
            for c in cols {
                let top = plane[r.lo * w + c.lo] * (one - c.frac) + plane[r.lo * w + c.hi] * c.frac;
                let bot = plane[r.hi * w + c.lo] * (one - c.frac) + plane[r.hi * w + c.hi] * c.frac;
                out.push(top * (one - r.frac) + bot * r.frac);
            }
        }
    }
    out
}

/// Bilinear resize of consecutive `h×w` planes outside any graph, with the
/// same sampling rule as [`Graph::bilinear_upsample`].
pub fn resize_planes<T: Real>(data: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    resample(data, h, w, &axis_taps(h, out_h), &axis_taps(w, out_w))
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn same_size_is_identity() {
        let t = Tensor::new(&[1, 2, 2, 3], (0..12).map(|i| i as f64 * 1.5).collect()).unwrap();
        let mut g = Graph::<f64>::new();
        let x = g.input(t.clone());
        let y = g.bilinear_upsample(x, 2, 3).unwrap();
        assert_eq!(g.value(y), &t);
    }

    #[test]
    fn two_to_four_is_monotone_convex() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap());
        let y = g.bilinear_upsample(x, 1, 4).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(&[2, 1, 3, 3], 0.7));
        let y = g.bilinear_upsample(x, 13, 8).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn downscale_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 1, 4, 4]));
        assert!(g.bilinear_upsample(x, 2, 4).is_err());
    }
}
