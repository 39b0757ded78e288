//! Convolution-family ops. Dense convolutions go through im2col + gemm so the
//! f64 path stays fast enough for the CPU training runs; the depthwise dynamic
//! convolution is small and done directly.

use super::{Arr, Graph, Op, Var};
use ndarray::{Array2, ArrayView3, Ix3, Ix4};

pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold `Cin x H x W` into `(Cin*kh*kw) x (oh*ow)` patches.
pub fn im2col(
    x: &ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    let mut col = Array2::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for u in 0..kh {
            for v in 0..kw {
                let row = (ci * kh + u) * kw + v;
                for oi in 0..oh {
                    let ii = (oi * stride + u) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + v) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        col[[row, oi * ow + oj]] = x[[ci, ii as usize, jj as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Fold `(C*kh*kw) x (oh*ow)` patch columns back into `C x H x W`,
/// accumulating overlaps. Inverse-scatter of [`im2col`].
pub fn col2im(
    col: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array3<f64> {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    assert_eq!(col.shape(), &[c * kh * kw, oh * ow]);
    let mut img = ndarray::Array3::zeros((c, h, w));
    for ci in 0..c {
        for u in 0..kh {
            for v in 0..kw {
                let row = (ci * kh + u) * kw + v;
                for oi in 0..oh {
                    let ii = (oi * stride + u) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + v) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        img[[ci, ii as usize, jj as usize]] += col[[row, oi * ow + oj]];
                    }
                }
            }
        }
    }
    img
}

struct Conv2d {
    stride: usize,
    pad: usize,
}
impl Op for Conv2d {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let x = i[0].view().into_dimensionality::<Ix3>().unwrap();
        let w = i[1].view().into_dimensionality::<Ix4>().unwrap();
        let (cout, cin, kh, kw) = w.dim();
        let (xc, xh, xw) = x.dim();
        let g = g.as_standard_layout();
        let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
        let (gh, gw) = (g3.dim().1, g3.dim().2);
        let g2 = g3.into_shape((cout, gh * gw)).unwrap();

        let col = im2col(&x, kh, kw, self.stride, self.pad);
        let w2 = w.into_shape((cout, cin * kh * kw)).unwrap();

        // dW = g @ col^T, dx = col2im(W^T @ g)
        let dw = g2.dot(&col.t()).into_shape((cout, cin, kh, kw)).unwrap();
        let dcol = w2.t().dot(&g2);
        let dx = col2im(&dcol, xc, xh, xw, kh, kw, self.stride, self.pad);
        vec![dx.into_dyn(), dw.into_dyn()]
    }
}

struct Deconv2d {
    stride: usize,
    pad: usize,
}
impl Op for Deconv2d {
    fn backward(&self, i: &[&Arr], o: &Arr, g: &Arr) -> Vec<Arr> {
        let x = i[0].view().into_dimensionality::<Ix3>().unwrap();
        let w = i[1].view().into_dimensionality::<Ix4>().unwrap();
        let (cin, cout, kh, kw) = w.dim();
        let (_, xh, xw) = x.dim();
        let _ = o;
        let g = g.as_standard_layout();
        let g3 = g.view().into_dimensionality::<Ix3>().unwrap();

        // Transposed conv is the adjoint of conv, so its backward is the
        // forward conv with the same geometry.
        let gcol = im2col(&g3, kh, kw, self.stride, self.pad);
        let w2 = w.into_shape((cin, cout * kh * kw)).unwrap();
        let x2 = x.into_shape((cin, xh * xw)).unwrap();

        let dx = w2.dot(&gcol).into_shape((cin, xh, xw)).unwrap();
        let dw = x2.dot(&gcol.t()).into_shape((cin, cout, kh, kw)).unwrap();
        vec![dx.into_dyn(), dw.into_dyn()]
    }
}

struct MaxPool2d {
    argmax: Vec<(usize, usize)>, // (y, x) source per output element
}
impl Op for MaxPool2d {
    fn backward(&self, i: &[&Arr], o: &Arr, g: &Arr) -> Vec<Arr> {
        let (c, oh, ow) = {
            let s = o.shape();
            (s[0], s[1], s[2])
        };
        let mut dx = Arr::zeros(i[0].raw_dim());
        for ci in 0..c {
            for oi in 0..oh {
                for oj in 0..ow {
                    let (sy, sx) = self.argmax[(ci * oh + oi) * ow + oj];
                    dx[[ci, sy, sx]] += g[[ci, oi, oj]];
                }
            }
        }
        vec![dx]
    }
}

struct UpsampleNearest {
    in_h: usize,
    in_w: usize,
}
impl Op for UpsampleNearest {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let (c, oh, ow) = {
            let s = g.shape();
            (s[0], s[1], s[2])
        };
        let mut dx = Arr::zeros(i[0].raw_dim());
        for ci in 0..c {
            for oi in 0..oh {
                let si = oi * self.in_h / oh;
                for oj in 0..ow {
                    let sj = oj * self.in_w / ow;
                    dx[[ci, si, sj]] += g[[ci, oi, oj]];
                }
            }
        }
        vec![dx]
    }
}

/// Depthwise convolution whose kernels are themselves a differentiable input:
/// channel `c` of the output is channel `c` of the map convolved with kernel
/// `c` of the bank, zero-padded to preserve the spatial size.
struct DynDepthwise;
impl Op for DynDepthwise {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let x = i[0].view().into_dimensionality::<Ix3>().unwrap();
        let z = i[1].view().into_dimensionality::<Ix3>().unwrap();
        let (c, h, w) = x.dim();
        let s = z.dim().1;
        let pad = (s / 2) as isize;

        let mut dx = ndarray::Array3::<f64>::zeros((c, h, w));
        let mut dz = ndarray::Array3::<f64>::zeros((c, s, s));
        for ci in 0..c {
            for oi in 0..h {
                for oj in 0..w {
                    let go = g[[ci, oi, oj]];
                    if go == 0.0 {
                        continue;
                    }
                    for u in 0..s {
                        let ii = oi as isize + u as isize - pad;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for v in 0..s {
                            let jj = oj as isize + v as isize - pad;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            let (iu, ju) = (ii as usize, jj as usize);
                            dx[[ci, iu, ju]] += go * z[[ci, u, v]];
                            dz[[ci, u, v]] += go * x[[ci, iu, ju]];
                        }
                    }
                }
            }
        }
        vec![dx.into_dyn(), dz.into_dyn()]
    }
}

impl<'p> Graph<'p> {
    /// Dense 2-D convolution. `x`: `Cin x H x W`, `w`: `Cout x Cin x kh x kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("conv2d input not 3-D");
        let wv = self.value(w).view().into_dimensionality::<Ix4>().expect("conv2d weight not 4-D");
        let (cout, cin, kh, kw) = wv.dim();
        assert_eq!(xv.dim().0, cin, "conv2d channel mismatch");
        let oh = conv_out_dim(xv.dim().1, kh, stride, pad);
        let ow = conv_out_dim(xv.dim().2, kw, stride, pad);

        let col = im2col(&xv, kh, kw, stride, pad);
        let w2 = wv.into_shape((cout, cin * kh * kw)).unwrap();
        let v = w2.dot(&col).into_shape((cout, oh, ow)).unwrap().into_dyn();
        self.push(v, vec![x.0, w.0], Some(Box::new(Conv2d { stride, pad })), None)
    }

    /// Transposed 2-D convolution. `x`: `Cin x h x w`, `w`: `Cin x Cout x kh x kw`.
    /// `out_hw` picks the output size among the stride-ambiguous candidates.
    pub fn deconv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    ) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("deconv2d input not 3-D");
        let wv = self.value(w).view().into_dimensionality::<Ix4>().expect("deconv2d weight not 4-D");
        let (cin, cout, kh, kw) = wv.dim();
        let (xc, xh, xw) = xv.dim();
        assert_eq!(xc, cin, "deconv2d channel mismatch");
        let (oh, ow) = out_hw;
        assert_eq!(conv_out_dim(oh, kh, stride, pad), xh, "deconv2d output height incompatible");
        assert_eq!(conv_out_dim(ow, kw, stride, pad), xw, "deconv2d output width incompatible");

        let w2 = wv.into_shape((cin, cout * kh * kw)).unwrap();
        let x2 = xv.into_shape((cin, xh * xw)).unwrap();
        let col = w2.t().dot(&x2);
        let v = col2im(&col, cout, oh, ow, kh, kw, stride, pad);
        self.push(
            v.into_dyn(),
            vec![x.0, w.0],
            Some(Box::new(Deconv2d { stride, pad })),
            None,
        )
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("maxpool input not 3-D");
        let (c, h, w) = xv.dim();
        let oh = (h - k) / stride + 1;
        let ow = (w - k) / stride + 1;
        let mut out = ndarray::Array3::zeros((c, oh, ow));
        let mut argmax = vec![(0usize, 0usize); c * oh * ow];
        for ci in 0..c {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut src = (0, 0);
                    for u in 0..k {
                        for v in 0..k {
                            let (ii, jj) = (oi * stride + u, oj * stride + v);
                            if xv[[ci, ii, jj]] > best {
                                best = xv[[ci, ii, jj]];
                                src = (ii, jj);
                            }
                        }
                    }
                    out[[ci, oi, oj]] = best;
                    argmax[(ci * oh + oi) * ow + oj] = src;
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![x.0],
            Some(Box::new(MaxPool2d { argmax })),
            None,
        )
    }

    /// Nearest-neighbor resize to an arbitrary (larger or equal) target size.
    pub fn upsample_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("upsample input not 3-D");
        let (c, h, w) = xv.dim();
        let mut out = ndarray::Array3::zeros((c, out_h, out_w));
        for ci in 0..c {
            for oi in 0..out_h {
                let si = oi * h / out_h;
                for oj in 0..out_w {
                    let sj = oj * w / out_w;
                    out[[ci, oi, oj]] = xv[[ci, si, sj]];
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![x.0],
            Some(Box::new(UpsampleNearest { in_h: h, in_w: w })),
            None,
        )
    }

    /// Depthwise dynamic convolution; gradients flow to the map and the bank.
    pub fn dyn_depthwise(&mut self, x: Var, z: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("depthwise input not 3-D");
        let zv = self.value(z).view().into_dimensionality::<Ix3>().expect("kernel bank not 3-D");
        let (c, h, w) = xv.dim();
        let (zc, s, s2) = zv.dim();
        assert_eq!(c, zc, "depthwise channel mismatch");
        assert_eq!(s, s2, "kernels must be square");
        assert!(s % 2 == 1, "kernel size must be odd");
        let pad = (s / 2) as isize;

        let mut out = ndarray::Array3::zeros((c, h, w));
        for ci in 0..c {
            for oi in 0..h {
                for oj in 0..w {
                    let mut acc = 0.0;
                    for u in 0..s {
                        let ii = oi as isize + u as isize - pad;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for v in 0..s {
                            let jj = oj as isize + v as isize - pad;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            acc += xv[[ci, ii as usize, jj as usize]] * zv[[ci, u, v]];
                        }
                    }
                    out[[ci, oi, oj]] = acc;
                }
            }
        }
        self.push(out.into_dyn(), vec![x.0, z.0], Some(Box::new(DynDepthwise)), None)
    }
}
