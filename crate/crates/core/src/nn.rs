//! Learnable layers and the parameter-tree plumbing shared by every module.
//!
//! Parameter records are generic over their leaf type: `Linear<Tensor>` holds
//! weights, `Linear<Var>` holds the same weights bound into a [`Graph`].
//! [`ParamTree::map_named`] converts between the two and gives every leaf a
//! stable dotted name used by checkpoints.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor};

/// Slope of the Leaky ReLU inside every two-layer MLP.
pub const LEAKY_SLOPE: f64 = 0.01;

pub trait ParamTree {
    type Elem;
    type Mapped<U>: ParamTree<Elem = U>;

    fn map_named<U>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Self::Elem) -> U,
    ) -> Self::Mapped<U>;
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Bind every tensor as a trainable leaf.
pub fn bind_params<P: ParamTree<Elem = Tensor>>(p: &P, g: &mut Graph) -> P::Mapped<Var> {
    p.map_named("", &mut |_, t| g.param(t.clone()))
}

/// Bind every tensor as a constant leaf (inference).
pub fn bind_constants<P: ParamTree<Elem = Tensor>>(p: &P, g: &mut Graph) -> P::Mapped<Var> {
    p.map_named("", &mut |_, t| g.constant(t.clone()))
}

/// `(name, tensor)` pairs in traversal order.
pub fn named_tensors<P: ParamTree<Elem = Tensor>>(p: &P) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    p.map_named("", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

pub fn leaves<P: ParamTree>(p: &P) -> Vec<P::Elem>
where
    P::Elem: Clone,
{
    let mut out = Vec::new();
    p.map_named("", &mut |_, v| out.push(v.clone()));
    out
}

pub fn param_count<P: ParamTree<Elem = Tensor>>(p: &P) -> usize {
    let mut n = 0;
    p.map_named("", &mut |_, t| n += t.numel());
    n
}

/// Rebuild `p` with tensors taken in traversal order from `values`.
pub fn replace_tensors<P: ParamTree<Elem = Tensor>>(
    p: &P,
    values: Vec<Tensor>,
) -> Result<P::Mapped<Tensor>> {
    let mut it = values.into_iter();
    let mut bad = None;
    let out = p.map_named("", &mut |name, t| match it.next() {
        Some(v) if v.shape() == t.shape() => v,
        other => {
            bad.get_or_insert_with(|| {
                Error::InvalidArgument(format!(
                    "replacement for {name}: expected shape {:?}, got {:?}",
                    t.shape(),
                    other.map(|v| v.shape().to_vec())
                ))
            });
            t.clone()
        }
    });
    match (bad, it.next()) {
        (Some(e), _) => Err(e),
        (None, Some(_)) => Err(Error::InvalidArgument("too many replacement tensors".into())),
        (None, None) => Ok(out),
    }
}

impl<P: ParamTree> ParamTree for Vec<P> {
    type Elem = P::Elem;
    type Mapped<U> = Vec<P::Mapped<U>>;

    fn map_named<U>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Self::Elem) -> U,
    ) -> Self::Mapped<U> {
        self.iter()
            .enumerate()
            .map(|(i, p)| p.map_named(&join(prefix, &i.to_string()), f))
            .collect()
    }
}

impl<P: ParamTree> ParamTree for Option<P> {
    type Elem = P::Elem;
    type Mapped<U> = Option<P::Mapped<U>>;

    fn map_named<U>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Self::Elem) -> U,
    ) -> Self::Mapped<U> {
        self.as_ref().map(|p| p.map_named(prefix, f))
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Affine map applied to each row: `y = x · Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = Tensor> {
    /// `[out × in]`
    pub weight: T,
    /// `[out]`
    pub bias: T,
}

pub type LinearLayer = Linear<Tensor>;

impl<T> ParamTree for Linear<T> {
    type Elem = T;
    type Mapped<U> = Linear<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Linear<U> {
        Linear {
            weight: f(&join(prefix, "weight"), &self.weight),
            bias: f(&join(prefix, "bias"), &self.bias),
        }
    }
}

impl Linear<Tensor> {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (out, _) = weight.dims2("linear weight")?;
        if bias.shape() != [out] {
            return Err(Error::shape("linear", weight.shape(), bias.shape()));
        }
        Ok(Self { weight, bias })
    }

    pub fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform_init(&[out_dim, in_dim], in_dim, rng),
            bias: uniform_init(&[out_dim], in_dim, rng),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Tensor::eye(dim),
            bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Linear<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.weight, self.bias)
    }
}

/// Two linear layers with a Leaky ReLU between them and nothing after.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T = Tensor> {
    pub first: Linear<T>,
    pub second: Linear<T>,
}

impl<T> ParamTree for Mlp<T> {
    type Elem = T;
    type Mapped<U> = Mlp<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Mlp<U> {
        Mlp {
            first: self.first.map_named(&join(prefix, "first"), f),
            second: self.second.map_named(&join(prefix, "second"), f),
        }
    }
}

impl Mlp<Tensor> {
    pub fn new(first: LinearLayer, second: LinearLayer) -> Result<Self> {
        if first.out_dim() != second.in_dim() {
            return Err(Error::shape(
                "mlp",
                first.weight.shape(),
                second.weight.shape(),
            ));
        }
        Ok(Self { first, second })
    }

    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            first: Linear::init(in_dim, hidden, rng),
            second: Linear::init(hidden, out_dim, rng),
        }
    }

    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            first: Linear::zeros(in_dim, hidden),
            second: Linear::zeros(hidden, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.first.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.second.out_dim()
    }
}

impl Mlp<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.first.forward(g, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        self.second.forward(g, h)
    }
}

/// `l2(leaky_relu(l1(x)))` over the rows of `x: [n × in]`.
pub fn apply_mlp(x: &Tensor, l1: &LinearLayer, l2: &LinearLayer, leak: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&leak) {
        return Err(Error::InvalidArgument(format!(
            "leak {leak} outside [0, 1)"
        )));
    }
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let l1 = bind_constants(l1, &mut g);
    let l2 = bind_constants(l2, &mut g);
    let h = l1.forward(&mut g, xv)?;
    let h = g.leaky_relu(h, leak);
    let y = l2.forward(&mut g, h)?;
    Ok(g.value(y).clone())
}

/// Square-kernel 2-d convolution with fixed geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T = Tensor> {
    /// `[out × in × k × k]`
    pub weight: T,
    /// `[out]`
    pub bias: T,
    pub spec: ConvSpec,
}

impl<T> ParamTree for Conv<T> {
    type Elem = T;
    type Mapped<U> = Conv<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> Conv<U> {
        Conv {
            weight: f(&join(prefix, "weight"), &self.weight),
            bias: f(&join(prefix, "bias"), &self.bias),
            spec: self.spec,
        }
    }
}

impl Conv<Tensor> {
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: ConvSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: uniform_init(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            bias: uniform_init(&[out_ch], fan_in, rng),
            spec,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Conv<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.weight, self.bias, self.spec)
    }
}

/// 1×1 convolution over a `[C×H×W]` map, realized as a shared linear map per pixel.
pub fn pointwise(g: &mut Graph, layer: &Linear<Var>, x: Var) -> Result<Var> {
    let (c, h, w) = g.value(x).dims3("pointwise")?;
    let rows = g.reshape(x, &[c, h * w])?;
    let rows = g.transpose(rows)?;
    let y = layer.forward(g, rows)?;
    let y = g.transpose(y)?;
    let out = g.shape(y)[0];
    g.reshape(y, &[out, h, w])
}
