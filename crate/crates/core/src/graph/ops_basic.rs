//! Elementwise, linear-algebra, shape, and reduction ops.

use super::{Arr, Graph, Op, Var};
use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, IxDyn};

struct Add;
impl Op for Add {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        vec![g.clone(), g.clone()]
    }
}

struct Sub;
impl Op for Sub {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        vec![g.clone(), -g]
    }
}

struct Mul;
impl Op for Mul {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        vec![g * i[1], g * i[0]]
    }
}

struct MulScalar(f64);
impl Op for MulScalar {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        vec![g * self.0]
    }
}

struct AddScalar;
impl Op for AddScalar {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        vec![g.clone()]
    }
}

struct Relu;
impl Op for Relu {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let mut dx = g.clone();
        dx.zip_mut_with(i[0], |d, &x| {
            if x <= 0.0 {
                *d = 0.0;
            }
        });
        vec![dx]
    }
}

struct Sigmoid;
impl Op for Sigmoid {
    fn backward(&self, _i: &[&Arr], o: &Arr, g: &Arr) -> Vec<Arr> {
        let mut dx = g.clone();
        dx.zip_mut_with(o, |d, &y| *d *= y * (1.0 - y));
        vec![dx]
    }
}

struct Tanh;
impl Op for Tanh {
    fn backward(&self, _i: &[&Arr], o: &Arr, g: &Arr) -> Vec<Arr> {
        let mut dx = g.clone();
        dx.zip_mut_with(o, |d, &y| *d *= 1.0 - y * y);
        vec![dx]
    }
}

struct MatMul;
impl Op for MatMul {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let a = i[0].view().into_dimensionality::<Ix2>().unwrap();
        let b = i[1].view().into_dimensionality::<Ix2>().unwrap();
        let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
        let da = g2.dot(&b.t());
        let db = a.t().dot(&g2);
        vec![da.into_dyn(), db.into_dyn()]
    }
}

/// Copy into standard layout with a new logical shape; works on permuted
/// (non-contiguous) inputs.
fn reshaped(value: &Arr, shape: &[usize]) -> Arr {
    let flat: Vec<f64> = value.iter().cloned().collect();
    Arr::from_shape_vec(IxDyn(shape), flat).expect("reshape: incompatible size")
}

struct Reshape {
    in_shape: Vec<usize>,
}
impl Op for Reshape {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        vec![reshaped(g, &self.in_shape)]
    }
}

struct Permute {
    axes: Vec<usize>,
}
impl Op for Permute {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let mut inverse = vec![0usize; self.axes.len()];
        for (new_pos, &old_axis) in self.axes.iter().enumerate() {
            inverse[old_axis] = new_pos;
        }
        vec![g.view().permuted_axes(IxDyn(&inverse)).to_owned()]
    }
}

struct Concat {
    axis: usize,
    sizes: Vec<usize>,
}
impl Op for Concat {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut offset = 0;
        for &sz in &self.sizes {
            let part = g
                .slice_axis(Axis(self.axis), ndarray::Slice::from(offset..offset + sz as isize));
            out.push(part.to_owned());
            offset += sz as isize;
        }
        out
    }
}

struct IndexAxis {
    axis: usize,
    index: usize,
    in_shape: Vec<usize>,
}
impl Op for IndexAxis {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let mut dx = Arr::zeros(IxDyn(&self.in_shape));
        dx.index_axis_mut(Axis(self.axis), self.index).assign(g);
        vec![dx]
    }
}

struct Stack {
    axis: usize,
    n: usize,
}
impl Op for Stack {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        (0..self.n)
            .map(|k| g.index_axis(Axis(self.axis), k).to_owned())
            .collect()
    }
}

struct SumAll;
impl Op for SumAll {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let s = g.iter().next().copied().unwrap_or(1.0);
        vec![Arr::from_elem(i[0].raw_dim(), s)]
    }
}

struct MeanAll;
impl Op for MeanAll {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let s = g.iter().next().copied().unwrap_or(1.0);
        let n = i[0].len() as f64;
        vec![Arr::from_elem(i[0].raw_dim(), s / n)]
    }
}

/// `C x H x W` gated per channel by a length-`C` vector.
struct MulChannel;
impl Op for MulChannel {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let x = i[0];
        let w = i[1].view().into_dimensionality::<Ix1>().unwrap();
        let c = x.shape()[0];
        let mut dx = g.clone();
        for ci in 0..c {
            dx.index_axis_mut(Axis(0), ci).mapv_inplace(|v| v * w[ci]);
        }
        let mut dw = Array1::zeros(c);
        for ci in 0..c {
            let gs = g.index_axis(Axis(0), ci);
            let xs = x.index_axis(Axis(0), ci);
            dw[ci] = gs.iter().zip(xs.iter()).map(|(a, b)| a * b).sum();
        }
        vec![dx, dw.into_dyn()]
    }
}

/// `C x H x W` gated per pixel by a `1 x H x W` map.
struct MulSpatial;
impl Op for MulSpatial {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let x = i[0];
        let m = i[1].index_axis(Axis(0), 0);
        let c = x.shape()[0];
        let mut dx = g.clone();
        for ci in 0..c {
            let mut dslice = dx.index_axis_mut(Axis(0), ci);
            dslice.zip_mut_with(&m, |d, &mv| *d *= mv);
        }
        let mut dm = Arr::zeros(i[1].raw_dim());
        {
            let mut dm0 = dm.index_axis_mut(Axis(0), 0);
            for ci in 0..c {
                let gs = g.index_axis(Axis(0), ci);
                let xs = x.index_axis(Axis(0), ci);
                dm0.zip_mut_with(&(&gs * &xs), |d, &v| *d += v);
            }
        }
        vec![dx, dm]
    }
}

/// Max over the spatial extent of each channel; `C x H x W -> C`.
struct MaxSpatial {
    argmax: Vec<usize>,
}
impl Op for MaxSpatial {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let mut dx = Arr::zeros(i[0].raw_dim());
        let (h, w) = (i[0].shape()[1], i[0].shape()[2]);
        for (ci, &flat) in self.argmax.iter().enumerate() {
            dx[[ci, flat / w, flat % w]] = g[[ci]];
        }
        let _ = h;
        vec![dx]
    }
}

struct MeanSpatial;
impl Op for MeanSpatial {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let (c, h, w) = (i[0].shape()[0], i[0].shape()[1], i[0].shape()[2]);
        let scale = 1.0 / (h * w) as f64;
        let mut dx = Arr::zeros(i[0].raw_dim());
        for ci in 0..c {
            dx.index_axis_mut(Axis(0), ci).fill(g[[ci]] * scale);
        }
        vec![dx]
    }
}

/// Max over channels per pixel; `C x H x W -> 1 x H x W`.
struct MaxChannels {
    argmax: Vec<usize>,
}
impl Op for MaxChannels {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let (h, w) = (i[0].shape()[1], i[0].shape()[2]);
        let mut dx = Arr::zeros(i[0].raw_dim());
        for y in 0..h {
            for x in 0..w {
                let c = self.argmax[y * w + x];
                dx[[c, y, x]] = g[[0, y, x]];
            }
        }
        vec![dx]
    }
}

struct MeanChannels;
impl Op for MeanChannels {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let c = i[0].shape()[0];
        let scale = 1.0 / c as f64;
        let mut dx = Arr::zeros(i[0].raw_dim());
        for ci in 0..c {
            let mut slice = dx.index_axis_mut(Axis(0), ci);
            slice.assign(&g.index_axis(Axis(0), 0));
            slice.mapv_inplace(|v| v * scale);
        }
        vec![dx]
    }
}

/// `N x D` plus a length-`D` bias broadcast over rows.
struct AddRowBias;
impl Op for AddRowBias {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
        let db = g2.sum_axis(Axis(0));
        vec![g.clone(), db.into_dyn()]
    }
}

/// `D x L` plus a length-`D` bias broadcast over columns.
struct AddColBias;
impl Op for AddColBias {
    fn backward(&self, _i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
        let db = g2.sum_axis(Axis(1));
        vec![g.clone(), db.into_dyn()]
    }
}

/// `C x H x W` plus a length-`C` bias broadcast over space.
struct AddChannelBias;
impl Op for AddChannelBias {
    fn backward(&self, i: &[&Arr], _o: &Arr, g: &Arr) -> Vec<Arr> {
        let c = i[0].shape()[0];
        let mut db = Array1::zeros(c);
        for ci in 0..c {
            db[ci] = g.index_axis(Axis(0), ci).sum();
        }
        vec![g.clone(), db.into_dyn()]
    }
}

impl<'p> Graph<'p> {
    fn binary(&mut self, a: Var, b: Var, value: Arr, op: Box<dyn Op>) -> Var {
        self.push(value, vec![a.0, b.0], Some(op), None)
    }

    fn unary(&mut self, a: Var, value: Arr, op: Box<dyn Op>) -> Var {
        self.push(value, vec![a.0], Some(op), None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Box::new(Add))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Box::new(Sub))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Box::new(Mul))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.unary(a, v, Box::new(MulScalar(s)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) + s;
        self.unary(a, v, Box::new(AddScalar))
    }

    /// `1 - a`, the gate complement.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.mul_scalar(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.unary(a, v, Box::new(Relu))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(a, v, Box::new(Sigmoid))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.unary(a, v, Box::new(Tanh))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<Ix2>().expect("matmul lhs not 2-D");
        let bv = self.value(b).view().into_dimensionality::<Ix2>().expect("matmul rhs not 2-D");
        assert_eq!(av.shape()[1], bv.shape()[0], "matmul inner dim mismatch");
        let v = av.dot(&bv).into_dyn();
        self.binary(a, b, v, Box::new(MatMul))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let in_shape = self.shape(a).to_vec();
        let v = reshaped(self.value(a), shape);
        self.unary(a, v, Box::new(Reshape { in_shape }))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let v = self.value(a).view().permuted_axes(IxDyn(axes)).to_owned();
        self.unary(a, v, Box::new(Permute { axes: axes.to_vec() }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let sizes = parts.iter().map(|&p| self.shape(p)[axis]).collect();
        let parents = parts.iter().map(|p| p.0).collect();
        self.push(v, parents, Some(Box::new(Concat { axis, sizes })), None)
    }

    /// Select index `i` along `axis`, dropping that axis.
    pub fn index_axis(&mut self, a: Var, axis: usize, index: usize) -> Var {
        let in_shape = self.shape(a).to_vec();
        let v = self.value(a).index_axis(Axis(axis), index).to_owned();
        self.unary(a, v, Box::new(IndexAxis { axis, index, in_shape }))
    }

    /// Stack equally-shaped vars along a new axis.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::stack(Axis(axis), &views).expect("stack shape mismatch");
        let parents = parts.iter().map(|p| p.0).collect();
        self.push(
            v,
            parents,
            Some(Box::new(Stack { axis, n: parts.len() })),
            None,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        self.unary(a, v, Box::new(SumAll))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = ArrayD::from_elem(IxDyn(&[]), self.value(a).mean().unwrap());
        self.unary(a, v, Box::new(MeanAll))
    }

    pub fn mul_channel(&mut self, x: Var, w: Var) -> Var {
        assert_eq!(self.shape(x)[0], self.shape(w)[0], "channel gate mismatch");
        let xv = self.value(x);
        let wv = self.value(w);
        let mut v = xv.clone();
        for ci in 0..xv.shape()[0] {
            let scale = wv[[ci]];
            v.index_axis_mut(Axis(0), ci).mapv_inplace(|t| t * scale);
        }
        self.binary(x, w, v, Box::new(MulChannel))
    }

    pub fn mul_spatial(&mut self, x: Var, m: Var) -> Var {
        assert_eq!(self.shape(m)[0], 1, "spatial gate must be 1 x H x W");
        assert_eq!(&self.shape(x)[1..], &self.shape(m)[1..], "spatial gate mismatch");
        let xv = self.value(x);
        let mv = self.value(m).index_axis(Axis(0), 0).to_owned();
        let mut v = xv.clone();
        for ci in 0..xv.shape()[0] {
            v.index_axis_mut(Axis(0), ci).zip_mut_with(&mv, |t, &g| *t *= g);
        }
        self.binary(x, m, v, Box::new(MulSpatial))
    }

    /// `C x H x W -> C`, max over space.
    pub fn max_spatial(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, _h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = Array1::zeros(c);
        let mut argmax = vec![0usize; c];
        for ci in 0..c {
            let slice = xv.index_axis(Axis(0), ci);
            let mut best = f64::NEG_INFINITY;
            for (idx, &val) in slice.iter().enumerate() {
                if val > best {
                    best = val;
                    argmax[ci] = idx;
                }
            }
            out[ci] = best;
        }
        let _ = w;
        self.unary(x, out.into_dyn(), Box::new(MaxSpatial { argmax }))
    }

    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = xv.shape()[0];
        let mut out = Array1::zeros(c);
        for ci in 0..c {
            out[ci] = xv.index_axis(Axis(0), ci).mean().unwrap();
        }
        self.unary(x, out.into_dyn(), Box::new(MeanSpatial))
    }

    /// `C x H x W -> 1 x H x W`, max over channels.
    pub fn max_channels(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = Array2::from_elem((h, w), f64::NEG_INFINITY);
        let mut argmax = vec![0usize; h * w];
        for ci in 0..c {
            let slice = xv.index_axis(Axis(0), ci);
            for y in 0..h {
                for x2 in 0..w {
                    if slice[[y, x2]] > out[[y, x2]] {
                        out[[y, x2]] = slice[[y, x2]];
                        argmax[y * w + x2] = ci;
                    }
                }
            }
        }
        let v = out.into_shape((1, h, w)).unwrap().into_dyn();
        self.unary(x, v, Box::new(MaxChannels { argmax }))
    }

    pub fn mean_channels(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = Array2::zeros((h, w));
        for ci in 0..c {
            out += &xv.index_axis(Axis(0), ci);
        }
        out.mapv_inplace(|v| v / c as f64);
        let v = out.into_shape((1, h, w)).unwrap().into_dyn();
        self.unary(x, v, Box::new(MeanChannels))
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix2>().expect("row bias: lhs not 2-D");
        let bv = self.value(b).view().into_dimensionality::<Ix1>().expect("row bias: bias not 1-D");
        assert_eq!(xv.shape()[1], bv.len());
        let v = (&xv + &bv).into_dyn();
        self.binary(x, b, v, Box::new(AddRowBias))
    }

    pub fn add_col_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix2>().expect("col bias: lhs not 2-D");
        let bv = self.value(b).view().into_dimensionality::<Ix1>().expect("col bias: bias not 1-D");
        assert_eq!(xv.shape()[0], bv.len());
        let mut v = xv.to_owned();
        for (mut row, &bias) in v.rows_mut().into_iter().zip(bv.iter()) {
            row.mapv_inplace(|t| t + bias);
        }
        self.binary(x, b, v.into_dyn(), Box::new(AddColBias))
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        assert_eq!(self.shape(x)[0], self.shape(b)[0]);
        let xv = self.value(x);
        let bv = self.value(b);
        let mut v = xv.clone();
        for ci in 0..xv.shape()[0] {
            let bias = bv[[ci]];
            v.index_axis_mut(Axis(0), ci).mapv_inplace(|t| t + bias);
        }
        self.binary(x, b, v, Box::new(AddChannelBias))
    }
}
