//! Reverse-mode differentiation over a recorded graph of tensor operations.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Each
//! operation records its parents and a backward closure mapping the
//! gradient of its output to gradients of its inputs. [`Graph::backward`]
//! walks the nodes in reverse insertion order (a valid topological order)
//! and writes the accumulated gradients into each node's grad slot.

use crate::error::{Error, Result};
use crate::tensor::{self, axis_split, ConvSpec, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees.
pub struct BackwardCtx<'a> {
    /// Gradient of the loss w.r.t. this node's output.
    pub grad: &'a [f64],
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    /// Whether each input wants a gradient; closures may skip work for `false`.
    pub needs: Vec<bool>,
}

pub type InputGrads = Vec<Option<Vec<f64>>>;

type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Result<InputGrads>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    kink_margin: Option<f64>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance of any recorded value from a point where the graph
    /// is not differentiable: a quantization window edge or centre, a tie
    /// for the extreme similarity, or a leaky-ReLU input at zero. Finite
    /// differences are valid only while perturbations stay below it.
    /// `None` if no such operation was recorded.
    pub fn kink_margin(&self) -> Option<f64> {
        self.kink_margin
    }

    pub(crate) fn note_kink_margin(&mut self, margin: f64) {
        self.kink_margin = Some(self.kink_margin.map_or(margin, |m| m.min(margin)));
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient written by the last [`Graph::backward`] call, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Record an operation. The closure is dropped when no parent needs a gradient.
    pub(crate) fn push<F>(&mut self, value: Tensor, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardCtx<'_>) -> Result<InputGrads> + 'static,
    {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.to_vec(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagate from a single-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                output: &node.value,
                needs: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let input_grads = backward(&ctx)?;
            drop(ctx);
            grads[i] = Some(grad);
            debug_assert_eq!(input_grads.len(), node.parents.len());
            let parents = node.parents.clone();
            for (p, g) in parents.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match grads[p.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => grads[p.0] = Some(g),
                }
            }
        }
        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if let (true, Some(g)) = (node.requires_grad, grad) {
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, &[a, b], |ctx| {
            let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let g = Tensor::new(vec![m, n], ctx.grad.to_vec())?;
            let ga = ctx.needs[0]
                .then(|| tensor::matmul(&g, &tensor::transpose(b)?))
                .transpose()?;
            let gb = ctx.needs[1]
                .then(|| tensor::matmul(&tensor::transpose(a)?, &g))
                .transpose()?;
            debug_assert!(ga.as_ref().is_none_or(|t| t.numel() == m * k));
            Ok(vec![ga.map(Tensor::into_data), gb.map(Tensor::into_data)])
        }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(a))?;
        Ok(self.push(out, &[a], |ctx| {
            let g = Tensor::new(ctx.output.shape().to_vec(), ctx.grad.to_vec())?;
            Ok(vec![Some(tensor::transpose(&g)?.into_data())])
        }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, &[a], |ctx| Ok(vec![Some(ctx.grad.to_vec())])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], |ctx| {
            Ok(vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())])
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], |ctx| {
            let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let ga = ctx.needs[0].then(|| ctx.grad.iter().zip(y).map(|(g, v)| g * v).collect());
            let gb = ctx.needs[1].then(|| ctx.grad.iter().zip(x).map(|(g, v)| g * v).collect());
            Ok(vec![ga, gb])
        }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * factor);
        self.push(out, &[a], move |ctx| {
            Ok(vec![Some(ctx.grad.iter().map(|g| g * factor).collect())])
        })
    }

    /// `a + factor * b`
    pub fn axpy(&mut self, a: Var, factor: f64, b: Var) -> Result<Var> {
        let scaled = self.scale(b, factor);
        self.add(a, scaled)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, &[a], |ctx| {
            Ok(vec![Some(vec![ctx.grad[0]; ctx.inputs[0].numel()])])
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise affine map `x · Wᵀ + b` for `x: [n×in]`, `W: [out×in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        let (n, din) = xv.dims2("linear")?;
        let (dout, win) = wv.dims2("linear")?;
        if din != win {
            return Err(Error::shape("linear", xv.shape(), wv.shape()));
        }
        if bv.shape() != [dout] {
            return Err(Error::shape("linear bias", wv.shape(), bv.shape()));
        }
        let mut out = Vec::with_capacity(n * dout);
        for _ in 0..n {
            out.extend(bv.data().iter().copied());
        }
        let wt = tensor::transpose(wv)?;
        tensor::matmul_into(xv.data(), wt.data(), &mut out, n, din, dout);
        let out = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(out, &[x, weight, bias], move |ctx| {
            let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
            let g = ctx.grad;
            let gx = ctx.needs[0].then(|| {
                let mut gx = vec![0.0; n * din];
                tensor::matmul_into(g, w.data(), &mut gx, n, dout, din);
                gx
            });
            let gw = ctx.needs[1].then(|| {
                let mut gw = vec![0.0; dout * din];
                for i in 0..n {
                    let xr = &x.data()[i * din..(i + 1) * din];
                    for o in 0..dout {
                        let gv = g[i * dout + o];
                        if gv == 0.0 {
                            continue;
                        }
                        let row = &mut gw[o * din..(o + 1) * din];
                        row.iter_mut().zip(xr).for_each(|(a, b)| *a += gv * b);
                    }
                }
                gw
            });
            let gb = ctx.needs[2].then(|| {
                let mut gb = vec![0.0; dout];
                for row in g.chunks(dout) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                gb
            });
            Ok(vec![gx, gw, gb])
        }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let xv = self.value(x);
        // Exact zeros are structural (padding, dead inputs) and stay put.
        let margin = xv.data().iter().filter(|v| **v != 0.0).fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let out = Tensor::from_fn(xv.shape(), |i| {
            let v = xv.data()[i];
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        });
        let v = self.push(out, &[x], move |ctx| {
            let xs = ctx.inputs[0].data();
            Ok(vec![Some(
                ctx.grad
                    .iter()
                    .zip(xs)
                    .map(|(g, &v)| if v > 0.0 { *g } else { slope * g })
                    .collect(),
            )])
        });
        self.note_kink_margin(margin);
        v
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = tensor::softmax_axis(self.value(x), axis)?;
        Ok(self.push(out, &[x], move |ctx| {
            let y = ctx.output.data();
            let (outer, len, inner) = axis_split(ctx.output.shape(), axis)?;
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| ctx.grad[idx(k)] * y[idx(k)]).sum();
                    for k in 0..len {
                        gx[idx(k)] = y[idx(k)] * (ctx.grad[idx(k)] - dot);
                    }
                }
            }
            Ok(vec![Some(gx)])
        }))
    }

    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let out = tensor::global_avg_pool(self.value(a))?;
        Ok(self.push(out, &[a], |ctx| {
            let (_, h, w) = ctx.inputs[0].dims3("global_avg_pool")?;
            let hw = h * w;
            let gx = ctx
                .grad
                .iter()
                .flat_map(|g| std::iter::repeat_n(g / hw as f64, hw))
                .collect();
            Ok(vec![Some(gx)])
        }))
    }

    pub fn nearest_upsample(&mut self, a: Var, height: usize, width: usize) -> Result<Var> {
        let out = tensor::nearest_upsample(self.value(a), height, width)?;
        Ok(self.push(out, &[a], move |ctx| {
            let (c, h, w) = ctx.inputs[0].dims3("nearest_upsample")?;
            let index = tensor::nearest_index(h, w, height, width);
            let mut gx = vec![0.0; c * h * w];
            for ch in 0..c {
                let g = &ctx.grad[ch * height * width..(ch + 1) * height * width];
                let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
                for (&src, gv) in index.iter().zip(g) {
                    dst[src] += gv;
                }
            }
            Ok(vec![Some(gx)])
        }))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptyInput("concat"));
        };
        let base = self.shape(first).to_vec();
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == base.len() && axis < s.len();
            let compatible = same_rank
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&base, axis)?;
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, parts, move |ctx| {
            let mut grads: Vec<Vec<f64>> = lens
                .iter()
                .map(|len| Vec::with_capacity(outer * len * inner))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (g, &len) in grads.iter_mut().zip(&lens) {
                    g.extend_from_slice(&ctx.grad[offset..offset + len * inner]);
                    offset += len * inner;
                }
            }
            Ok(grads.into_iter().map(Some).collect())
        }))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, spec: ConvSpec) -> Result<Var> {
        let out = tensor::conv2d(self.value(x), self.value(weight), self.value(bias), spec)?;
        Ok(self.push(out, &[x, weight, bias], move |ctx| {
            let (gx, gw, gb) =
                tensor::conv2d_backward(ctx.inputs[0], ctx.inputs[1], spec, ctx.grad, ctx.needs[0])?;
            Ok(vec![gx, Some(gw), Some(gb)])
        }))
    }

    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let out = tensor::avg_pool(self.value(x), k)?;
        Ok(self.push(out, &[x], move |ctx| {
            let (c, h, w) = ctx.inputs[0].dims3("avg_pool")?;
            let (oh, ow) = (h / k, w / k);
            let scale = 1.0 / (k * k) as f64;
            let mut gx = vec![0.0; c * h * w];
            for ch in 0..c {
                for y in 0..oh * k {
                    for xx in 0..ow * k {
                        gx[(ch * h + y) * w + xx] = ctx.grad[(ch * oh + y / k) * ow + xx / k] * scale;
                    }
                }
            }
            Ok(vec![Some(gx)])
        }))
    }

    /// Spatial window `rows × cols` of a `[C×H×W]` map.
    pub fn crop(
        &mut self,
        x: Var,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Var> {
        let (c, h, w) = self.value(x).dims3("crop")?;
        if rows.end > h || cols.end > w || rows.is_empty() || cols.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "crop {rows:?}x{cols:?} outside {h}x{w}"
            )));
        }
        let (rh, rw) = (rows.len(), cols.len());
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * rh * rw);
        for ch in 0..c {
            for y in rows.clone() {
                let start = (ch * h + y) * w;
                data.extend_from_slice(&src[start + cols.start..start + cols.end]);
            }
        }
        let out = Tensor::new(vec![c, rh, rw], data)?;
        Ok(self.push(out, &[x], move |ctx| {
            let mut gx = vec![0.0; c * h * w];
            let mut k = 0;
            for ch in 0..c {
                for y in rows.clone() {
                    let start = (ch * h + y) * w;
                    gx[start + cols.start..start + cols.end]
                        .copy_from_slice(&ctx.grad[k..k + rw]);
                    k += rw;
                }
            }
            Ok(vec![Some(gx)])
        }))
    }

    /// Paint cell `(i, j)` of a `[C×R×S]` grid over the pixel block `rows[i] × cols[j]`.
    pub fn region_broadcast(
        &mut self,
        grid: Var,
        rows: &[std::ops::Range<usize>],
        cols: &[std::ops::Range<usize>],
    ) -> Result<Var> {
        let (c, r, s) = self.value(grid).dims3("region_broadcast")?;
        if r != rows.len() || s != cols.len() {
            return Err(Error::shape(
                "region_broadcast",
                self.shape(grid),
                &[rows.len(), cols.len()],
            ));
        }
        let height = rows.last().map_or(0, |r| r.end);
        let width = cols.last().map_or(0, |c| c.end);
        let mut owner = vec![0usize; height * width];
        for (i, rr) in rows.iter().enumerate() {
            for (j, cc) in cols.iter().enumerate() {
                for y in rr.clone() {
                    for x in cc.clone() {
                        owner[y * width + x] = i * s + j;
                    }
                }
            }
        }
        let src = self.value(grid).data();
        let mut data = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            data.extend(owner.iter().map(|&o| src[ch * r * s + o]));
        }
        let out = Tensor::new(vec![c, height, width], data)?;
        Ok(self.push(out, &[grid], move |ctx| {
            let mut g = vec![0.0; c * r * s];
            for ch in 0..c {
                let plane = &ctx.grad[ch * height * width..(ch + 1) * height * width];
                for (&o, gv) in owner.iter().zip(plane) {
                    g[ch * r * s + o] += gv;
                }
            }
            Ok(vec![Some(g)])
        }))
    }

    /// Mean over the first axis of `[n×m]`, giving `[m]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2("mean_rows")?;
        if n == 0 {
            return Err(Error::EmptyInput("mean_rows"));
        }
        let mut acc = vec![0.0; m];
        for row in self.value(x).data().chunks(m) {
            acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        let out = Tensor::from_vec(acc);
        Ok(self.push(out, &[x], move |ctx| {
            let gx = (0..n)
                .flat_map(|_| ctx.grad.iter().map(|g| g / n as f64))
                .collect();
            Ok(vec![Some(gx)])
        }))
    }

    /// Repeat a `[m]` vector into `n` rows, giving `[n×m]`.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 {
            return Err(Error::rank("broadcast_rows", 1, xv.shape()));
        }
        let m = xv.numel();
        let data = (0..n).flat_map(|_| xv.data().iter().copied()).collect();
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(out, &[x], move |ctx| {
            let mut g = vec![0.0; m];
            for row in ctx.grad.chunks(m) {
                g.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            Ok(vec![Some(g)])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_accumulates_through_shared_inputs() {
        // f(x) = sum(x * x) => grad 2x
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::eye(2));
        let b = g.param(Tensor::from_fn(&[2, 2], |i| i as f64));
        let y = g.matmul(a, b).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(a).is_none());
        assert_eq!(g.grad(b).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn concat_along_inner_axis() {
        let mut g = Graph::new();
        let a = g.param(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let b = g.param(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let p = g.mul(c, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[0.0, 3.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn region_broadcast_paints_uneven_blocks() {
        let mut g = Graph::new();
        let grid = g.param(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let out = g.region_broadcast(grid, &[0..1, 1..3], &[0..1, 1..3]).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 2.0, 2.0,
            3.0, 4.0, 4.0,
            3.0, 4.0, 4.0,
        ];
        assert_eq!(g.value(out).data(), &expected);
        let s = g.sum(out);
        g.backward(s).unwrap();
        assert_eq!(g.grad(grid).unwrap(), &[1.0, 2.0, 2.0, 4.0]);
    }
}
