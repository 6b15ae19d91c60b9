//! Deformable convolution (offsets only, no modulation mask).
//!
//! Offsets have shape `[N, 2·kH·kW, Ho, Wo]`; channel `2k` is the row offset
//! and `2k + 1` the column offset of kernel tap `k = ky·kW + kx`. Tap `k` of
//! output `(oy, ox)` reads the input at
//! `(oy·s − p + ky + Δy, ox·s − p + kx + Δx)` by bilinear interpolation, with
//! zero outside the feature map. All input channels share one offset field.

use crate::error::{shape_err, Result};
use crate::gemm::matmul;
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::ops::conv::{add_bias, bias_grad, ConvGeom};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Bilinear stencil of one sampling point within an `h×w` plane.
///
/// Corners outside the plane point at index 0 with `inside = 0`, so reads
/// stay branch-free and contribute zero.
#[derive(Clone, Copy)]
struct Stencil<T> {
    /// Corner indices (00, 01, 10, 11).
    idx: [usize; 4],
    inside: [T; 4],
    /// Interpolation weights, already zero for outside corners.
    weights: [T; 4],
    /// Fractional parts (row, column).
    ly: T,
    lx: T,
}

impl<T: Real> Stencil<T> {
    fn new(py: T, px: T, h: usize, w: usize) -> Self {
        let (y0, x0) = (py.floor(), px.floor());
        let (ly, lx) = (py - y0, px - x0);
        let (y0, x0) = (y0.as_f64() as isize, x0.as_f64() as isize);
        let mut idx = [0usize; 4];
        let mut inside = [T::zero(); 4];
        for (c, (y, x)) in [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)].into_iter().enumerate() {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                idx[c] = y as usize * w + x as usize;
                inside[c] = T::one();
            }
        }
        let one = T::one();
        let bilinear = [(one - ly) * (one - lx), (one - ly) * lx, ly * (one - lx), ly * lx];
        Self {
            idx,
            inside,
            weights: [0, 1, 2, 3].map(|c| bilinear[c] * inside[c]),
            ly,
            lx,
        }
    }

    #[inline]
    fn corners(&self, plane: &[T]) -> [T; 4] {
        [0, 1, 2, 3].map(|c| plane[self.idx[c]] * self.inside[c])
    }

    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        let w = &self.weights;
        w[0] * plane[self.idx[0]] + w[1] * plane[self.idx[1]] + w[2] * plane[self.idx[2]] + w[3] * plane[self.idx[3]]
    }

    /// `(∂v/∂py, ∂v/∂px)` of the interpolated value.
    #[inline]
    fn position_grad(&self, plane: &[T]) -> (T, T) {
        let c = self.corners(plane);
        let one = T::one();
        let dy = (one - self.lx) * (c[2] - c[0]) + self.lx * (c[3] - c[1]);
        let dx = (one - self.ly) * (c[1] - c[0]) + self.ly * (c[3] - c[2]);
        (dy, dx)
    }
}

fn stencils<T: Real>(g: &ConvGeom, offset_n: &[T]) -> Vec<Stencil<T>> {
    let npix = g.out_pixels();
    let mut out = Vec::with_capacity(g.taps() * npix);
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let k = ky * g.kw + kx;
            let dy = &offset_n[2 * k * npix..(2 * k + 1) * npix];
            let dx = &offset_n[(2 * k + 1) * npix..(2 * k + 2) * npix];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let p = oy * g.wo + ox;
                    let by = (oy * g.stride + ky) as f64 - g.pad as f64;
                    let bx = (ox * g.stride + kx) as f64 - g.pad as f64;
                    out.push(Stencil::new(T::from_f64(by) + dy[p], T::from_f64(bx) + dx[p], g.h, g.w));
                }
            }
        }
    }
    out
}

fn deform_im2col<T: Real>(g: &ConvGeom, x_n: &[T], st: &[Stencil<T>], cols: &mut [T]) {
    let kp = g.taps() * g.out_pixels();
    for ci in 0..g.cin {
        let plane = &x_n[ci * g.in_pixels()..(ci + 1) * g.in_pixels()];
        for (v, s) in cols[ci * kp..(ci + 1) * kp].iter_mut().zip(st) {
            *v = s.sample(plane);
        }
    }
}

struct DeformRule {
    geom: ConvGeom,
}

impl<T: Real> Backward<T> for DeformRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let (x, off, w) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
        let grad = ctx.grad.data();
        let npix = g.out_pixels();
        let kp = g.taps() * npix;
        let (in_len, out_len, off_len) = (g.cin * g.in_pixels(), g.cout * npix, 2 * kp);

        let mut gx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut goff = ctx.needs[1].then(|| vec![T::zero(); off.len()]);
        let mut gw = ctx.needs[2].then(|| vec![T::zero(); w.len()]);
        let mut cols = vec![T::zero(); g.col_rows() * npix];
        let mut gcols = vec![T::zero(); g.col_rows() * npix];

        for n in 0..g.n {
            let x_n = &x[n * in_len..(n + 1) * in_len];
            let grad_n = &grad[n * out_len..(n + 1) * out_len];
            let st = stencils(g, &off[n * off_len..(n + 1) * off_len]);
            if let Some(gw) = gw.as_mut() {
                deform_im2col(g, x_n, &st, &mut cols);
                matmul(g.cout, npix, g.col_rows(), grad_n, false, &cols, true, gw, true);
            }
            if gx.is_none() && goff.is_none() {
                continue;
            }
            matmul(g.col_rows(), g.cout, npix, w, true, grad_n, false, &mut gcols, false);
            for ci in 0..g.cin {
                let plane = &x_n[ci * g.in_pixels()..(ci + 1) * g.in_pixels()];
                let gc = &gcols[ci * kp..(ci + 1) * kp];
                if let Some(gx) = gx.as_mut() {
                    let gplane = &mut gx[n * in_len + ci * g.in_pixels()..n * in_len + (ci + 1) * g.in_pixels()];
                    for (s, &gv) in st.iter().zip(gc) {
                        for c in 0..4 {
                            gplane[s.idx[c]] += s.weights[c] * gv;
                        }
                    }
                }
                if let Some(goff) = goff.as_mut() {
                    let goff_n = &mut goff[n * off_len..(n + 1) * off_len];
                    for k in 0..g.taps() {
                        let (gy, gxo) = goff_n[2 * k * npix..(2 * k + 2) * npix].split_at_mut(npix);
                        let tap = k * npix..(k + 1) * npix;
                        for (((s, &gv), oy), ox) in st[tap.clone()].iter().zip(&gc[tap]).zip(gy).zip(gxo) {
                            let (dy, dx) = s.position_grad(plane);
                            *oy += gv * dy;
                            *ox += gv * dx;
                        }
                    }
                }
            }
        }
        let gb = ctx.needs[3].then(|| bias_grad(grad, g.n, g.cout, npix));
        vec![
            gx.map(|d| Tensor::new(ctx.inputs[0].shape(), d).expect("x shape")),
            goff.map(|d| Tensor::new(ctx.inputs[1].shape(), d).expect("offset shape")),
            gw.map(|d| Tensor::new(ctx.inputs[2].shape(), d).expect("w shape")),
            gb.map(|d| Tensor::new(ctx.inputs[3].shape(), d).expect("b shape")),
        ]
    }
}

impl<T: Real> Graph<T> {
    /// Deformable convolution of `x` sampled at `offset`-shifted kernel taps.
    ///
    /// With an all-zero offset field the result equals [`Graph::conv2d`]
    /// exactly.
    pub fn deform_conv2d(
        &mut self,
        x: Var,
        offset: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        for v in [x, offset, weight, bias] {
            self.check(v)?;
        }
        let geom = ConvGeom::resolve(
            self.value(x).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
            stride,
            padding,
        )?;
        let want = [geom.n, 2 * geom.taps(), geom.ho, geom.wo];
        if self.value(offset).shape() != want {
            return shape_err(format!(
                "offset field must be {want:?}, got {:?}",
                self.value(offset).shape()
            ));
        }
        let (xs, offs) = (self.value(x).data(), self.value(offset).data());
        let (w, b) = (self.value(weight).data(), self.value(bias).data());
        let npix = geom.out_pixels();
        let in_len = geom.cin * geom.in_pixels();
        let off_len = 2 * geom.taps() * npix;
        let mut out = vec![T::zero(); geom.n * geom.cout * npix];
        let mut cols = vec![T::zero(); geom.col_rows() * npix];
        for n in 0..geom.n {
            let st = stencils(&geom, &offs[n * off_len..(n + 1) * off_len]);
            deform_im2col(&geom, &xs[n * in_len..(n + 1) * in_len], &st, &mut cols);
            let out_n = &mut out[n * geom.cout * npix..(n + 1) * geom.cout * npix];
            matmul(geom.cout, geom.col_rows(), npix, w, false, &cols, false, out_n, false);
            add_bias(out_n, b, npix);
        }
        let out = Tensor::new(&[geom.n, geom.cout, geom.ho, geom.wo], out)?;
        self.record("deform_conv2d", &[x, offset, weight, bias], out, DeformRule { geom })
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn zero_offsets_equal_plain_convolution_bitwise() {
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            let mut g = Graph::<f64>::new();
            let x = g.input(ramp(&[2, 3, 6, 5]));
            let w = g.param(ramp(&[4, 3, 3, 3]));
            let b = g.param(Tensor::new(&[4], vec![0.5, -0.5, 0.25, 0.0]).unwrap());
            let plain = g.conv2d(x, w, b, stride, pad).unwrap();
            let (n, _, ho, wo) = g.value(plain).dims4().unwrap();
            let off = g.input(Tensor::zeros(&[n, 18, ho, wo]));
            let deformed = g.deform_conv2d(x, off, w, b, stride, pad).unwrap();
            assert_eq!(g.value(plain), g.value(deformed));
        }
    }

    #[test]
    fn unit_row_offset_shifts_input_up() {
        let xt = ramp(&[1, 1, 4, 3]);
        let mut g = Graph::<f64>::new();
        let x = g.input(xt.clone());
        let w = g.param(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.param(Tensor::zeros(&[1]));
        let mut off = vec![0.0; 2 * 12];
        off[..12].iter_mut().for_each(|v| *v = 1.0);
        let off = g.input(Tensor::new(&[1, 2, 4, 3], off).unwrap());
        let y = g.deform_conv2d(x, off, w, b, 1, 0).unwrap();
        let y = g.value(y).data();
        for r in 0..4 {
            for c in 0..3 {
                let want = if r + 1 < 4 { xt.data()[(r + 1) * 3 + c] } else { 0.0 };
                assert_eq!(y[r * 3 + c], want);
            }
        }
    }

    #[test]
    fn half_pixel_offset_interpolates() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[1, 1, 1, 2], vec![2.0, 4.0]).unwrap());
        let w = g.param(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.param(Tensor::zeros(&[1]));
        let off = g.input(Tensor::new(&[1, 2, 1, 2], vec![0.0, 0.0, 0.5, 0.5]).unwrap());
        let y = g.deform_conv2d(x, off, w, b, 1, 0).unwrap();
        // second sample straddles the right border: half of 4 plus half of zero
        assert_eq!(g.value(y).data(), &[3.0, 2.0]);
    }

    #[test]
    fn wrong_offset_shape_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 1, 3, 3]));
        let w = g.param(Tensor::zeros(&[1, 1, 3, 3]));
        let b = g.param(Tensor::zeros(&[1]));
        let off = g.input(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(g.deform_conv2d(x, off, w, b, 1, 1).is_err());
    }
}
