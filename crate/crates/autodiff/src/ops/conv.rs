//! 2-D cross-correlation via im2col + GEMM.

use crate::error::{shape_err, Result};
use crate::gemm::matmul;
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Resolved sizes of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn resolve(x: &[usize], weight: &[usize], bias: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, w] = x[..] else {
            return shape_err(format!("conv input must be [N,C,H,W], got {x:?}"));
        };
        let [cout, wcin, kh, kw] = weight[..] else {
            return shape_err(format!("conv weight must be [Cout,Cin,kH,kW], got {weight:?}"));
        };
        if wcin != cin {
            return shape_err(format!("conv expects {wcin} input channels, got {cin}"));
        }
        if bias != [cout] {
            return shape_err(format!("conv bias must be [{cout}], got {bias:?}"));
        }
        if stride == 0 {
            return shape_err("conv stride must be >= 1");
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        if hp < kh || wp < kw {
            return shape_err(format!(
                "empty conv output: padded input {hp}x{wp} smaller than kernel {kh}x{kw}"
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        })
    }

    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    /// Rows of the column matrix: `Cin·kH·kW`.
    pub fn col_rows(&self) -> usize {
        self.cin * self.taps()
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    pub fn in_pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate read by output index `o` at kernel offset `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }

    /// Output columns `[lo, hi)` whose input column at kernel offset `kx` is
    /// inside the row; the first one reads input column `lo·stride + kx − pad`.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let reach = self.w + self.pad;
        let hi = if reach > kx { ((reach - kx - 1) / self.stride + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let npix = self.out_pixels();
        for ci in 0..self.cin {
            let plane = &x[ci * self.in_pixels()..(ci + 1) * self.in_pixels()];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kx);
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    for oy in 0..self.ho {
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        let Some(iy) = self.src(oy, ky, self.h) else {
                            line.fill(T::zero());
                            continue;
                        };
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if lo < hi {
                            let first = iy * self.w + lo * self.stride + kx - self.pad;
                            if self.stride == 1 {
                                line[lo..hi].copy_from_slice(&plane[first..first + hi - lo]);
                            } else {
                                for (v, &p) in line[lo..hi].iter_mut().zip(plane[first..].iter().step_by(self.stride)) {
                                    *v = p;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], gx: &mut [T]) {
        let npix = self.out_pixels();
        for ci in 0..self.cin {
            let plane = &mut gx[ci * self.in_pixels()..(ci + 1) * self.in_pixels()];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kx);
                    if lo >= hi {
                        continue;
                    }
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * npix..(row + 1) * npix];
                    for oy in 0..self.ho {
                        let Some(iy) = self.src(oy, ky, self.h) else { continue };
                        let line = &src[oy * self.wo + lo..oy * self.wo + hi];
                        let first = iy * self.w + lo * self.stride + kx - self.pad;
                        for (p, &v) in plane[first..].iter_mut().step_by(self.stride).zip(line) {
                            *p += v;
                        }
                    }
                }
            }
        }
    }
}

/// `out_n = W · cols_n + b` for every sample, given a column builder.
pub(crate) fn conv_forward_with<T: Real>(
    geom: &ConvGeom,
    weight: &[T],
    bias: &[T],
    mut build_cols: impl FnMut(usize, &mut [T]),
) -> Vec<T> {
    let npix = geom.out_pixels();
    let mut out = vec![T::zero(); geom.n * geom.cout * npix];
    let mut cols = vec![T::zero(); geom.col_rows() * npix];
    for n in 0..geom.n {
        build_cols(n, &mut cols);
        let out_n = &mut out[n * geom.cout * npix..(n + 1) * geom.cout * npix];
        matmul(geom.cout, geom.col_rows(), npix, weight, false, &cols, false, out_n, false);
        add_bias(out_n, bias, npix);
    }
    out
}

pub(crate) fn add_bias<T: Real>(out_n: &mut [T], bias: &[T], npix: usize) {
    for (plane, &b) in out_n.chunks_exact_mut(npix).zip(bias) {
        plane.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn bias_grad<T: Real>(grad: &[T], n: usize, cout: usize, npix: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); cout];
    for s in 0..n {
        for (co, acc) in gb.iter_mut().enumerate() {
            let off = (s * cout + co) * npix;
            *acc += grad[off..off + npix].iter().copied().sum::<T>();
        }
    }
    gb
}

struct Conv2dRule {
    geom: ConvGeom,
}

impl<T: Real> Backward<T> for Conv2dRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let g = &self.geom;
        let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let grad = ctx.grad.data();
        let npix = g.out_pixels();
        let (in_len, out_len) = (g.cin * g.in_pixels(), g.cout * npix);

        let mut gx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
        let mut gw = ctx.needs[1].then(|| vec![T::zero(); w.len()]);
        let mut cols = vec![T::zero(); if g.pointwise() { 0 } else { g.col_rows() * npix }];
        let mut gcols = vec![T::zero(); if g.pointwise() || gx.is_none() { 0 } else { g.col_rows() * npix }];

        for n in 0..g.n {
            let x_n = &x[n * in_len..(n + 1) * in_len];
            let grad_n = &grad[n * out_len..(n + 1) * out_len];
            if let Some(gw) = gw.as_mut() {
                let cols_n: &[T] = if g.pointwise() {
                    x_n
                } else {
                    g.im2col(x_n, &mut cols);
                    &cols
                };
                matmul(g.cout, npix, g.col_rows(), grad_n, false, cols_n, true, gw, true);
            }
            if let Some(gx) = gx.as_mut() {
                let gx_n = &mut gx[n * in_len..(n + 1) * in_len];
                if g.pointwise() {
                    matmul(g.col_rows(), g.cout, npix, w, true, grad_n, false, gx_n, false);
                } else {
                    matmul(g.col_rows(), g.cout, npix, w, true, grad_n, false, &mut gcols, false);
                    g.col2im(&gcols, gx_n);
                }
            }
        }
        let gb = ctx.needs[2].then(|| bias_grad(grad, g.n, g.cout, npix));
        vec![
            gx.map(|d| Tensor::new(ctx.inputs[0].shape(), d).expect("x shape")),
            gw.map(|d| Tensor::new(ctx.inputs[1].shape(), d).expect("w shape")),
            gb.map(|d| Tensor::new(ctx.inputs[2].shape(), d).expect("b shape")),
        ]
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `x [N,Cin,H,W]` with `weight [Cout,Cin,kH,kW]`,
    /// zero padding `padding` on every side, plus `bias [Cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        for v in [x, weight, bias] {
            self.check(v)?;
        }
        let geom = ConvGeom::resolve(
            self.value(x).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
            stride,
            padding,
        )?;
        let xs = self.value(x).data();
        let in_len = geom.cin * geom.in_pixels();
        let out = conv_forward_with(&geom, self.value(weight).data(), self.value(bias).data(), |n, cols| {
            let x_n = &xs[n * in_len..(n + 1) * in_len];
            if geom.pointwise() {
                cols.copy_from_slice(x_n);
            } else {
                geom.im2col(x_n, cols);
            }
        });
        let out = Tensor::new(&[geom.n, geom.cout, geom.ho, geom.wo], out)?;
        self.record("conv2d", &[x, weight, bias], out, Conv2dRule { geom })
    }
}
