use crate::error::{shape_err, Error, Result};
use crate::graph::{Backward, BackwardCtx, Graph, Var};
use crate::scalar::Real;
use crate::tensor::Tensor;

struct ConcatRule {
    channels: Vec<usize>,
    n: usize,
    plane: usize,
}

impl<T: Real> Backward<T> for ConcatRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let total: usize = self.channels.iter().sum();
        let grad = ctx.grad.data();
        let mut start = 0;
        let mut out = Vec::with_capacity(self.channels.len());
        for (i, &c) in self.channels.iter().enumerate() {
            if ctx.needs[i] {
                let mut g = Vec::with_capacity(self.n * c * self.plane);
                for s in 0..self.n {
                    let off = (s * total + start) * self.plane;
                    g.extend_from_slice(&grad[off..off + c * self.plane]);
                }
                out.push(Some(Tensor::new(ctx.inputs[i].shape(), g).expect("input shape")));
            } else {
                out.push(None);
            }
            start += c;
        }
        out
    }
}

struct CropRule {
    top: usize,
    left: usize,
}

impl<T: Real> Backward<T> for CropRule {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> {
        let (_, _, h, w) = ctx.inputs[0].dims4().expect("4-d");
        let (_, _, ch, cw) = ctx.grad.dims4().expect("4-d");
        let mut gx = vec![T::zero(); ctx.inputs[0].numel()];
        for (gplane, plane) in gx.chunks_exact_mut(h * w).zip(ctx.grad.data().chunks_exact(ch * cw)) {
            for y in 0..ch {
                let dst = (self.top + y) * w + self.left;
                gplane[dst..dst + cw].copy_from_slice(&plane[y * cw..(y + 1) * cw]);
            }
        }
        vec![Some(Tensor::new(ctx.inputs[0].shape(), gx).expect("x shape"))]
    }
}

impl<T: Real> Graph<T> {
    /// Concatenates `[N,Ci,H,W]` maps along channels, in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Invalid("concat_channels needs at least one input".into()));
        };
        for &v in xs {
            self.check(v)?;
        }
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(xs.len());
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return shape_err(format!("concat: [{vn},_,{vh},{vw}] does not match [{n},_,{h},{w}]"));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for s in 0..n {
            for (&v, &c) in xs.iter().zip(&channels) {
                let data = self.value(v).data();
                out.extend_from_slice(&data[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let out = Tensor::new(&[n, total, h, w], out)?;
        self.record("concat_channels", xs, out, ConcatRule { channels, n, plane })
    }

    /// Spatial window `[top, top+h) × [left, left+w)` of every plane.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        self.check(x)?;
        let (n, c, xh, xw) = self.value(x).dims4()?;
        if h == 0 || w == 0 || top + h > xh || left + w > xw {
            return shape_err(format!("crop {h}x{w}+{top}+{left} outside {xh}x{xw}"));
        }
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in self.value(x).data().chunks_exact(xh * xw) {
            for y in top..top + h {
                out.extend_from_slice(&plane[y * xw + left..y * xw + left + w]);
            }
        }
        let out = Tensor::new(&[n, c, h, w], out)?;
        self.record("crop", &[x], out, CropRule { top, left })
    }
}
