//! Texture enhancement: a learned generalization of histogram equalization.
//!
//! Level statistics from a 1-d quantization pass become graph nodes; a
//! column-normalized affinity between their projections mixes every level
//! into every reconstructed level, which is then painted back onto pixels
//! through the soft quantization encoding.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{bind_constants, join, Linear, LinearLayer, Mlp, ParamTree};
use crate::qco::{QuantOutput1D, QuantVars1D};
use crate::tensor::Tensor;

/// Classical histogram-equalization remap: `G'_n = (N-1) * cumsum(F)_n / sum(F)`.
pub fn reference_hist_equalize(counts: &[f64], n_levels: usize) -> Result<Vec<f64>> {
    if counts.len() != n_levels {
        return Err(Error::InvalidArgument(format!(
            "{} counts for {n_levels} levels",
            counts.len()
        )));
    }
    if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidArgument(
            "histogram counts must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::EmptyInput("reference_hist_equalize"));
    }
    let top = (n_levels - 1) as f64;
    let mut running = 0.0;
    Ok(counts
        .iter()
        .map(|c| {
            running += c;
            top * running / total
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemParams<T = Tensor> {
    /// Lifts the `[N × 2]` counting map.
    pub qco_mlp: Mlp<T>,
    pub phi1: Linear<T>,
    pub phi2: Linear<T>,
    pub phi3: Linear<T>,
}

impl<T> ParamTree for TemParams<T> {
    type Elem = T;
    type Mapped<U> = TemParams<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> TemParams<U> {
        TemParams {
            qco_mlp: self.qco_mlp.map_named(&join(prefix, "qco_mlp"), f),
            phi1: self.phi1.map_named(&join(prefix, "phi1"), f),
            phi2: self.phi2.map_named(&join(prefix, "phi2"), f),
            phi3: self.phi3.map_named(&join(prefix, "phi3"), f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemDims {
    pub in_channels: usize,
    pub qco_hidden: usize,
    pub qco_out: usize,
    /// Output width of `phi1`/`phi2`.
    pub key: usize,
    /// `C2`, output width of `phi3`.
    pub out_channels: usize,
}

impl TemParams<Tensor> {
    pub fn init(dims: TemDims, rng: &mut impl Rng) -> Self {
        let c1 = dims.qco_out + dims.in_channels;
        Self {
            qco_mlp: Mlp::init(2, dims.qco_hidden, dims.qco_out, rng),
            phi1: Linear::init(c1, dims.key, rng),
            phi2: Linear::init(c1, dims.key, rng),
            phi3: Linear::init(c1, dims.out_channels, rng),
        }
    }

    pub fn new(qco_mlp: Mlp, phi1: LinearLayer, phi2: LinearLayer, phi3: LinearLayer) -> Result<Self> {
        let c1 = phi1.in_dim();
        if qco_mlp.in_dim() != 2
            || phi2.in_dim() != c1
            || phi3.in_dim() != c1
            || phi1.out_dim() != phi2.out_dim()
        {
            return Err(Error::InvalidArgument(
                "TEM projections disagree on dimensions".into(),
            ));
        }
        Ok(Self {
            qco_mlp,
            phi1,
            phi2,
            phi3,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.phi3.out_dim()
    }

    /// Channel count of the input map these parameters accept.
    pub fn in_channels(&self) -> usize {
        self.phi1.in_dim() - self.qco_mlp.out_dim()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TemVars {
    pub qco: QuantVars1D,
    /// `[N × N]`, absent when the graph is bypassed.
    pub level_graph: Option<Var>,
    /// `[C2 × N]`
    pub levels_prime: Var,
    /// `[C2 × H × W]`
    pub output: Var,
}

/// Apply a linear map to each column of `d: [C × N]`, giving `[out × N]`.
fn project_columns(g: &mut Graph, layer: &Linear<Var>, d: Var) -> Result<Var> {
    let rows = g.transpose(d)?;
    let y = layer.forward(g, rows)?;
    g.transpose(y)
}

impl Graph {
    /// `softmax_dim0(phi1(D)ᵀ · phi2(D))`; each column sums to one.
    pub fn build_level_graph(&mut self, d: Var, params: &TemParams<Var>) -> Result<Var> {
        let rows = self.transpose(d)?;
        let q = params.phi1.forward(self, rows)?;
        let k = params.phi2.forward(self, rows)?;
        let kt = self.transpose(k)?;
        let affinity = self.matmul(q, kt)?;
        self.softmax(affinity, 0)
    }

    /// `phi3(D) · X`
    pub fn reconstruct_levels(&mut self, d: Var, x: Var, params: &TemParams<Var>) -> Result<Var> {
        let p3 = project_columns(self, &params.phi3, d)?;
        self.matmul(p3, x)
    }

    /// `L' · E` reshaped to `[C2 × h × w]`.
    pub fn reassign(&mut self, levels_prime: Var, encoding: Var, h: usize, w: usize) -> Result<Var> {
        let hw = self.value(encoding).dims2("reassign")?.1;
        if hw != h * w {
            return Err(Error::shape("reassign", self.shape(encoding), &[h, w]));
        }
        let r = self.matmul(levels_prime, encoding)?;
        let c2 = self.shape(r)[0];
        self.reshape(r, &[c2, h, w])
    }

    /// Full module. With `use_graph == false` the reconstructed levels are `phi3(D)` directly.
    pub fn tem_forward(
        &mut self,
        a: Var,
        n_levels: usize,
        params: &TemParams<Var>,
        use_graph: bool,
    ) -> Result<TemVars> {
        let (_, h, w) = self.value(a).dims3("tem_forward")?;
        let qco = self.qco1d(a, n_levels, &params.qco_mlp)?;
        let (level_graph, levels_prime) = if use_graph {
            let x = self.build_level_graph(qco.statfeat, params)?;
            (Some(x), self.reconstruct_levels(qco.statfeat, x, params)?)
        } else {
            (None, project_columns(self, &params.phi3, qco.statfeat)?)
        };
        let output = self.reassign(levels_prime, qco.encoding, h, w)?;
        Ok(TemVars {
            qco,
            level_graph,
            levels_prime,
            output,
        })
    }
}

/// Intermediates of one TEM pass on plain tensors.
#[derive(Debug, Clone)]
pub struct TemOutput {
    pub qco: QuantOutput1D,
    pub level_graph: Option<Tensor>,
    pub levels_prime: Tensor,
    pub output: Tensor,
}

pub fn build_level_graph(d: &Tensor, params: &TemParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let dv = g.constant(d.clone());
    let p = bind_constants(params, &mut g);
    let x = g.build_level_graph(dv, &p)?;
    Ok(g.value(x).clone())
}

pub fn reconstruct_levels(d: &Tensor, x: &Tensor, params: &TemParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let (dv, xv) = (g.constant(d.clone()), g.constant(x.clone()));
    let p = bind_constants(params, &mut g);
    let out = g.reconstruct_levels(dv, xv, &p)?;
    Ok(g.value(out).clone())
}

pub fn reassign(levels_prime: &Tensor, encoding: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let (l, e) = (g.constant(levels_prime.clone()), g.constant(encoding.clone()));
    let out = g.reassign(l, e, h, w)?;
    Ok(g.value(out).clone())
}

pub fn tem_forward_full(a: &Tensor, n_levels: usize, params: &TemParams, use_graph: bool) -> Result<TemOutput> {
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let p = bind_constants(params, &mut g);
    let v = g.tem_forward(av, n_levels, &p, use_graph)?;
    let levels = g.value(v.qco.levels).clone();
    Ok(TemOutput {
        qco: QuantOutput1D {
            mean_feature: g.value(v.qco.mean_feature).clone(),
            similarity: g.value(v.qco.similarity).clone(),
            levels,
            encoding: g.value(v.qco.encoding).clone(),
            counting: g.value(v.qco.counting).clone(),
            statfeat: g.value(v.qco.statfeat).clone(),
        },
        level_graph: v.level_graph.map(|x| g.value(x).clone()),
        levels_prime: g.value(v.levels_prime).clone(),
        output: g.value(v.output).clone(),
    })
}

pub fn tem_forward(a: &Tensor, n_levels: usize, params: &TemParams) -> Result<Tensor> {
    tem_forward_full(a, n_levels, params, true).map(|o| o.output)
}
