//! Dense row-major `f64` tensors and the forward kernels built on them.
//!
//! Every kernel here is a pure function. The differentiable versions in
//! [`crate::autograd`] call into these for their forward pass.

use crate::error::{Error, Result};

/// Dense N-dimensional array with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            grad: None,
        }
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape("set_grad", &self.shape, &[grad.len()]));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element at a multi-index. Panics on a bad index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::rank(op, 2, &self.shape)),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::rank(op, 3, &self.shape)),
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// `out += a[m×k] · b[k×n]`
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("transpose")?;
    let src = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Split a shape around `axis` into (outer, axis length, inner) strides.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::AxisOutOfRange {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (src[idx(k)] - max).exp();
                out[idx(k)] = e;
                total += e;
            }
            for k in 0..len {
                out[idx(k)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Per-channel mean of a `[C×H×W]` map.
pub fn global_avg_pool(a: &Tensor) -> Result<Tensor> {
    let (c, h, w) = a.dims3("global_avg_pool")?;
    let hw = h * w;
    if hw == 0 {
        return Err(Error::EmptyInput("global_avg_pool"));
    }
    let out = a
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(vec![c], out)
}

/// Nearest-neighbour upsampling with floor index mapping `src = dst * h / H`.
pub fn nearest_upsample(a: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = a.dims3("nearest_upsample")?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "nearest_upsample: zero target size".into(),
        ));
    }
    if height < h || width < w {
        return Err(Error::InvalidArgument(format!(
            "nearest_upsample: target {height}x{width} smaller than source {h}x{w}"
        )));
    }
    let index = nearest_index(h, w, height, width);
    let src = a.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        out.extend(index.iter().map(|&i| plane[i]));
    }
    Tensor::new(vec![c, height, width], out)
}

/// Flat source index for every destination pixel of a nearest upsample.
pub(crate) fn nearest_index(h: usize, w: usize, height: usize, width: usize) -> Vec<usize> {
    let mut index = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = y * h / height;
        for x in 0..width {
            let sx = x * w / width;
            index.push(sy * w + sx);
        }
    }
    index
}

/// Geometry of a 2-d convolution over a `[C×H×W]` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

pub(crate) struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv_dims(x: &Tensor, weight: &Tensor, spec: ConvSpec) -> Result<ConvDims> {
    let (c, h, w) = x.dims3("conv2d")?;
    let [o, wc, k, k2] = weight.shape()[..] else {
        return Err(Error::rank("conv2d", 4, weight.shape()));
    };
    if wc != c || k != k2 {
        return Err(Error::shape("conv2d", x.shape(), weight.shape()));
    }
    match (spec.output_size(h, k), spec.output_size(w, k)) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(ConvDims {
            c,
            h,
            w,
            o,
            k,
            oh,
            ow,
        }),
        _ => Err(Error::RegionTooSmall {
            op: "conv2d",
            height: h,
            width: w,
        }),
    }
}

/// Visit every (output pixel, input pixel) pair touched by kernel tap `(ki, kj)`.
#[inline]
fn for_each_tap(
    d: &ConvDims,
    spec: ConvSpec,
    ki: usize,
    kj: usize,
    mut f: impl FnMut(usize, usize),
) {
    for oy in 0..d.oh {
        let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.padding as isize;
        if iy < 0 || iy >= d.h as isize {
            continue;
        }
        let iy = iy as usize;
        for ox in 0..d.ow {
            let ix = (ox * spec.stride + kj * spec.dilation) as isize - spec.padding as isize;
            if ix < 0 || ix >= d.w as isize {
                continue;
            }
            f(oy * d.ow + ox, iy * d.w + ix as usize);
        }
    }
}

pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let d = conv_dims(x, weight, spec)?;
    if bias.shape() != [d.o] {
        return Err(Error::shape("conv2d bias", weight.shape(), bias.shape()));
    }
    let (xs, ws) = (x.data(), weight.data());
    let plane = d.oh * d.ow;
    let mut out = vec![0.0; d.o * plane];
    for o in 0..d.o {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(bias.data()[o]);
        for c in 0..d.c {
            let src = &xs[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ki in 0..d.k {
                for kj in 0..d.k {
                    let wv = ws[((o * d.c + c) * d.k + ki) * d.k + kj];
                    if wv == 0.0 {
                        continue;
                    }
                    for_each_tap(&d, spec, ki, kj, |po, pi| dst[po] += wv * src[pi]);
                }
            }
        }
    }
    Tensor::new(vec![d.o, d.oh, d.ow], out)
}

/// Input gradient (when requested), weight gradient, bias gradient.
pub(crate) type ConvGrads = (Option<Vec<f64>>, Vec<f64>, Vec<f64>);

pub(crate) fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    spec: ConvSpec,
    grad_out: &[f64],
    need_input: bool,
) -> Result<ConvGrads> {
    let d = conv_dims(x, weight, spec)?;
    let (xs, ws) = (x.data(), weight.data());
    let plane = d.oh * d.ow;
    let mut gx = need_input.then(|| vec![0.0; xs.len()]);
    let mut gw = vec![0.0; ws.len()];
    let gb = grad_out.chunks(plane).map(|p| p.iter().sum()).collect();
    for o in 0..d.o {
        let go = &grad_out[o * plane..(o + 1) * plane];
        for c in 0..d.c {
            let src = &xs[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ki in 0..d.k {
                for kj in 0..d.k {
                    let wi = ((o * d.c + c) * d.k + ki) * d.k + kj;
                    let mut acc = 0.0;
                    for_each_tap(&d, spec, ki, kj, |po, pi| acc += go[po] * src[pi]);
                    gw[wi] += acc;
                    if let Some(gx) = gx.as_mut() {
                        let wv = ws[wi];
                        let dst = &mut gx[c * d.h * d.w..(c + 1) * d.h * d.w];
                        for_each_tap(&d, spec, ki, kj, |po, pi| dst[pi] += wv * go[po]);
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Non-overlapping `k×k` average pooling; trailing rows/cols that do not fill a window are dropped.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3("avg_pool")?;
    if k == 0 || h < k || w < k {
        return Err(Error::RegionTooSmall {
            op: "avg_pool",
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / k, w / k);
    let scale = 1.0 / (k * k) as f64;
    let src = x.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh * k {
            for xx in 0..ow * k {
                out[(ch * oh + y / k) * ow + xx / k] += src[(ch * h + y) * w + xx] * scale;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap().data(), a.data());
        let b = t(&[2, 1], &[5.0, 6.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let err = matmul(&Tensor::eye(2), &Tensor::zeros(&[3, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 2]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_axis(&Tensor::from_vec(vec![0.0; 3]), 0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_axis(&Tensor::from_vec(vec![2f64.ln(), 0.0]), 0).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let s = softmax_axis(&Tensor::from_vec(vec![1000.0, 0.0]), 0).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_axis_out_of_range() {
        assert!(matches!(
            softmax_axis(&Tensor::zeros(&[2, 2]), 2),
            Err(Error::AxisOutOfRange { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn softmax_along_first_axis_normalizes_columns() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 7.0]);
        let s = softmax_axis(&x, 0).unwrap();
        for j in 0..3 {
            assert!((s.at(&[0, j]) + s.at(&[1, j]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn global_avg_pool_examples() {
        let p = global_avg_pool(&Tensor::full(&[3, 2, 2], 5.0)).unwrap();
        assert_eq!(p.data(), &[5.0, 5.0, 5.0]);
        assert_eq!(global_avg_pool(&t(&[1, 1, 2], &[1.0, 3.0])).unwrap().data(), &[2.0]);
        assert_eq!(
            global_avg_pool(&t(&[2, 1, 1], &[4.0, 6.0])).unwrap().data(),
            &[4.0, 6.0]
        );
        assert!(matches!(
            global_avg_pool(&Tensor::zeros(&[2, 0, 3])),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn nearest_upsample_examples() {
        let up = nearest_upsample(&t(&[1, 1, 1], &[7.0]), 2, 2).unwrap();
        assert_eq!(up.data(), &[7.0; 4]);
        let a = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let up = nearest_upsample(&a, 4, 4).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(up.data(), &expected);
        assert_eq!(nearest_upsample(&a, 2, 2).unwrap(), a);
        assert!(nearest_upsample(&a, 0, 4).is_err());
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        // 1 input channel, 3x3 input, 2x2 kernel, stride 1, no pad
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let w = t(&[1, 1, 2, 2], &[1., 0., 0., -1.]);
        let b = t(&[1], &[0.5]);
        let spec = ConvSpec {
            stride: 1,
            padding: 0,
            dilation: 1,
        };
        let y = conv2d(&x, &w, &b, spec).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1. - 5. + 0.5, 2. - 6. + 0.5, 4. - 8. + 0.5, 5. - 9. + 0.5]);
    }

    #[test]
    fn conv2d_output_geometry() {
        let spec = ConvSpec {
            stride: 2,
            padding: 1,
            dilation: 1,
        };
        assert_eq!(spec.output_size(64, 3), Some(32));
        let dil = ConvSpec {
            stride: 1,
            padding: 2,
            dilation: 2,
        };
        assert_eq!(dil.output_size(8, 3), Some(8));
    }

    #[test]
    fn avg_pool_means_blocks() {
        let x = t(&[1, 2, 4], &[1., 3., 5., 7., 1., 3., 5., 7.]);
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[2.0, 6.0]);
    }
}
