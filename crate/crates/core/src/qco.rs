//! Quantization and counting operators.
//!
//! A feature map is reduced to a per-pixel similarity score against its own
//! average feature, soft-assigned to `N` equally spaced levels, and the level
//! occupancy (1-d) or horizontal co-occupancy (2-d) is counted and lifted by
//! an MLP next to the broadcast average feature.
//!
//! Every stage is a differentiable [`Graph`] operation with a hand-written
//! backward pass. The free functions of the same names evaluate a stage on
//! plain tensors.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{bind_constants, Mlp};
use crate::tensor::Tensor;

/// Added to the cosine-similarity denominator.
pub const EPS_NORM: f64 = 1e-12;
/// Added to the counting denominator so an all-zero encoding counts to zero.
pub const EPS_COUNT: f64 = 1e-12;
/// Similarity ranges narrower than this are widened to it, centred on the midpoint.
pub const MIN_RANGE: f64 = 1e-6;

pub const DEFAULT_LEVELS_1D: usize = 128;
pub const DEFAULT_LEVELS_2D: usize = 8;

/// Intermediates of one 1-d pass.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutput1D {
    /// `[C]` average feature.
    pub mean_feature: Tensor,
    /// `[HW]` cosine similarity to the average feature.
    pub similarity: Tensor,
    /// `[N]`
    pub levels: Tensor,
    /// `[N × HW]`
    pub encoding: Tensor,
    /// `[N × 2]`: level, normalized count.
    pub counting: Tensor,
    /// `[C1 × N]`
    pub statfeat: Tensor,
}

/// Intermediates of one 2-d pass.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantOutput2D {
    pub mean_feature: Tensor,
    pub similarity: Tensor,
    /// `[N]`
    pub levels: Tensor,
    /// `[2 × N × N]`, cell `(m, n)` holds `(L_m, L_n)`.
    pub pair_levels: Tensor,
    /// `[N × HW]`
    pub encoding: Tensor,
    /// `[N × N × H × (W-1)]`
    pub cooc_encoding: Tensor,
    /// `[N × N × 3]`: left level, right level, normalized count.
    pub counting: Tensor,
    /// `[C' × N × N]`
    pub statfeat: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct QuantVars1D {
    pub mean_feature: Var,
    pub similarity: Var,
    pub levels: Var,
    pub encoding: Var,
    pub counting: Var,
    pub statfeat: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct QuantVars2D {
    pub mean_feature: Var,
    pub similarity: Var,
    pub levels: Var,
    pub encoding: Var,
    pub cooc_encoding: Var,
    pub counting: Var,
    /// `[N² × C']`, one row per level-pair cell.
    pub statfeat_rows: Var,
    /// `[C' × N × N]`
    pub statfeat: Var,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Half-width of each quantization window.
#[inline]
pub fn window_half_width(n_levels: usize) -> f64 {
    0.5 / n_levels as f64
}

#[inline]
fn in_window(diff: f64, half: f64) -> bool {
    -half <= diff && diff < half
}

/// The largest similarity sits on the top level by construction; rounding
/// leaves them this close, and the tie holds under any perturbation.
const STRUCTURAL_TIE: f64 = 1e-12;

/// Smallest distance of any `L_n - S_i` from a window edge or, barring
/// structural ties, from the centre of the window. Finite-difference
/// checks are only meaningful when this exceeds the perturbation size.
pub fn window_margin(similarity: &[f64], levels: &[f64]) -> f64 {
    let half = window_half_width(levels.len());
    let mut margin = f64::INFINITY;
    for &s in similarity {
        for &l in levels {
            let d = l - s;
            margin = margin.min((d - half).abs()).min((d + half).abs());
            if d.abs() > STRUCTURAL_TIE {
                margin = margin.min(d.abs());
            }
        }
    }
    margin
}

/// Gap between the smallest and next-larger value, and between the largest
/// and next-smaller one. Exact ties are skipped: they arise from pixels that
/// are structurally identical (such as all-zero vectors) and stay tied.
pub fn extreme_gap(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let n = sorted.len();
    if n < 2 {
        return f64::INFINITY;
    }
    (sorted[1] - sorted[0]).min(sorted[n - 1] - sorted[n - 2])
}

/// Level affine coefficients `(lo, step, d_lo_weight)` so that
/// `L_n = lo + step * n` for `n = 1..=N`.
fn level_frame(min: f64, max: f64, n: usize) -> (f64, f64, bool) {
    let range = max - min;
    if range >= MIN_RANGE {
        (min, range / n as f64, false)
    } else {
        let mid = 0.5 * (min + max);
        (mid - 0.5 * MIN_RANGE, MIN_RANGE / n as f64, true)
    }
}

fn argmin_argmax(xs: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v < xs[lo] {
            lo = i;
        }
        if v > xs[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// Normalize per-bin sums `r` by their total; returns `(normalized, denominator)`.
fn normalize_counts(r: &[f64]) -> (Vec<f64>, f64) {
    let den = r.iter().sum::<f64>() + EPS_COUNT;
    (r.iter().map(|v| v / den).collect(), den)
}

/// Gradient of `r_k / (Σr + ε)` w.r.t. each `r_n`, given upstream `g_k`.
fn normalize_counts_backward(r: &[f64], den: f64, g: &[f64]) -> Vec<f64> {
    let dot: f64 = g.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / (den * den);
    g.iter().map(|gk| gk / den - dot).collect()
}

impl Graph {
    /// Cosine similarity of each pixel of `a: [C×H×W]` to `g: [C]`, flattened to `[HW]`.
    pub fn similarity_map(&mut self, a: Var, g: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3("similarity_map")?;
        if c == 0 {
            return Err(Error::EmptyInput("similarity_map"));
        }
        if self.shape(g) != [c] {
            return Err(Error::shape("similarity_map", self.shape(a), self.shape(g)));
        }
        let hw = h * w;
        let (av, gv) = (self.value(a).data(), self.value(g).data());
        let g_norm = gv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut out = vec![0.0; hw];
        for (i, o) in out.iter_mut().enumerate() {
            let (mut dot, mut sq) = (0.0, 0.0);
            for ch in 0..c {
                let x = av[ch * hw + i];
                dot += gv[ch] * x;
                sq += x * x;
            }
            *o = dot / (g_norm * sq.sqrt() + EPS_NORM);
        }
        let out = Tensor::from_vec(out);
        Ok(self.push(out, &[a, g], move |ctx| {
            let (av, gv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let g_norm = gv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut ga = ctx.needs[0].then(|| vec![0.0; av.len()]);
            let mut gg = vec![0.0; c];
            for i in 0..hw {
                let up = ctx.grad[i];
                if up == 0.0 {
                    continue;
                }
                let (mut dot, mut sq) = (0.0, 0.0);
                for ch in 0..c {
                    let x = av[ch * hw + i];
                    dot += gv[ch] * x;
                    sq += x * x;
                }
                let a_norm = sq.sqrt();
                let den = g_norm * a_norm + EPS_NORM;
                let k = dot / (den * den);
                // d/dA_i: g/den - k * |g| * A_i/|A_i|
                let ca = if a_norm > 0.0 { k * g_norm / a_norm } else { 0.0 };
                // d/dg: A_i/den - k * |A_i| * g/|g|
                let cg = if g_norm > 0.0 { k * a_norm / g_norm } else { 0.0 };
                for ch in 0..c {
                    let x = av[ch * hw + i];
                    if let Some(ga) = ga.as_mut() {
                        ga[ch * hw + i] += up * (gv[ch] / den - ca * x);
                    }
                    gg[ch] += up * (x / den - cg * gv[ch]);
                }
            }
            Ok(vec![ga, Some(gg)])
        }))
    }

    /// `N` levels equally dividing `(min(S), max(S)]`; `L_N = max(S)`.
    pub fn quantization_levels(&mut self, s: Var, n_levels: usize) -> Result<Var> {
        if n_levels < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 quantization levels, got {n_levels}"
            )));
        }
        let sv = self.value(s);
        if sv.rank() != 1 || sv.numel() == 0 {
            return Err(Error::EmptyInput("quantization_levels"));
        }
        let (lo_i, hi_i) = argmin_argmax(sv.data());
        let (lo, step, _) = level_frame(sv.data()[lo_i], sv.data()[hi_i], n_levels);
        let out = Tensor::from_fn(&[n_levels], |k| lo + step * (k + 1) as f64);
        Ok(self.push(out, &[s], move |ctx| {
            let sv = ctx.inputs[0].data();
            let (_, _, degenerate) = level_frame(sv[lo_i], sv[hi_i], n_levels);
            let mut gs = vec![0.0; sv.len()];
            let (mut g_min, mut g_max) = (0.0, 0.0);
            for (k, g) in ctx.grad.iter().enumerate() {
                let t = if degenerate {
                    0.5
                } else {
                    (k + 1) as f64 / n_levels as f64
                };
                g_max += g * t;
                g_min += g * (1.0 - t);
            }
            gs[lo_i] += g_min;
            gs[hi_i] += g_max;
            Ok(vec![Some(gs)])
        }))
    }

    /// Windowed soft assignment `E[n, i] = 1 - |L_n - S_i|` inside the window, else 0.
    pub fn quantize_encode(&mut self, s: Var, levels: Var) -> Result<Var> {
        let (sv, lv) = (self.value(s), self.value(levels));
        if sv.rank() != 1 || lv.rank() != 1 {
            return Err(Error::shape("quantize_encode", sv.shape(), lv.shape()));
        }
        let (hw, n) = (sv.numel(), lv.numel());
        let half = window_half_width(n);
        let mut out = vec![0.0; n * hw];
        for (k, &l) in lv.data().iter().enumerate() {
            for (i, &x) in sv.data().iter().enumerate() {
                let d = l - x;
                if in_window(d, half) {
                    out[k * hw + i] = 1.0 - d.abs();
                }
            }
        }
        let out = Tensor::new(vec![n, hw], out)?;
        Ok(self.push(out, &[s, levels], move |ctx| {
            let (sv, lv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut gs = vec![0.0; hw];
            let mut gl = vec![0.0; n];
            for (k, &l) in lv.iter().enumerate() {
                for (i, &x) in sv.iter().enumerate() {
                    let d = l - x;
                    if in_window(d, half) {
                        let up = ctx.grad[k * hw + i] * sign(d);
                        gl[k] -= up;
                        gs[i] += up;
                    }
                }
            }
            Ok(vec![Some(gs), Some(gl)])
        }))
    }

    /// `[N × 2]` map of (level, normalized count).
    pub fn count_1d(&mut self, encoding: Var, levels: Var) -> Result<Var> {
        let (n, hw) = self.value(encoding).dims2("count_1d")?;
        if self.shape(levels) != [n] {
            return Err(Error::shape("count_1d", self.shape(encoding), self.shape(levels)));
        }
        let r: Vec<f64> = self
            .value(encoding)
            .data()
            .chunks(hw.max(1))
            .take(n)
            .map(|row| row.iter().sum())
            .collect();
        let r = if hw == 0 { vec![0.0; n] } else { r };
        let (counts, _) = normalize_counts(&r);
        let lv = self.value(levels).data();
        let mut out = Vec::with_capacity(2 * n);
        for k in 0..n {
            out.push(lv[k]);
            out.push(counts[k]);
        }
        let out = Tensor::new(vec![n, 2], out)?;
        Ok(self.push(out, &[encoding, levels], move |ctx| {
            let gl: Vec<f64> = (0..n).map(|k| ctx.grad[2 * k]).collect();
            let ge = ctx.needs[0].then(|| {
                let gc: Vec<f64> = (0..n).map(|k| ctx.grad[2 * k + 1]).collect();
                let (_, den) = normalize_counts(&r);
                let gr = normalize_counts_backward(&r, den, &gc);
                gr.iter()
                    .flat_map(|&v| std::iter::repeat_n(v, hw))
                    .collect()
            });
            Ok(vec![ge, Some(gl)])
        }))
    }

    /// `[C1 × N]` statistical feature: MLP over counting rows, concatenated with `g`.
    pub fn encode_average_1d(&mut self, counting: Var, g: Var, mlp: &Mlp<Var>) -> Result<Var> {
        let (n, width) = self.value(counting).dims2("encode_average_1d")?;
        if width != 2 {
            return Err(Error::shape("encode_average_1d", &[n, 2], self.shape(counting)));
        }
        let rows = self.encode_average_rows(counting, g, mlp, n)?;
        self.transpose(rows)
    }

    fn encode_average_rows(&mut self, rows: Var, g: Var, mlp: &Mlp<Var>, cells: usize) -> Result<Var> {
        let lifted = mlp.forward(self, rows)?;
        let g_up = self.broadcast_rows(g, cells)?;
        self.concat(&[lifted, g_up], 1)
    }

    /// Horizontal right-neighbour outer products of `E: [N×H×W]`.
    pub fn cooccurrence_encode(&mut self, encoding: Var) -> Result<Var> {
        let (n, h, w) = self.value(encoding).dims3("cooccurrence_encode")?;
        if w < 2 {
            return Err(Error::RegionTooSmall {
                op: "cooccurrence_encode",
                height: h,
                width: w,
            });
        }
        let pw = w - 1;
        let pairs = h * pw;
        let e = self.value(encoding).data();
        let at = |k: usize, i: usize, j: usize| e[(k * h + i) * w + j];
        let mut out = vec![0.0; n * n * pairs];
        for m in 0..n {
            for q in 0..n {
                let dst = &mut out[(m * n + q) * pairs..(m * n + q + 1) * pairs];
                for i in 0..h {
                    for j in 0..pw {
                        dst[i * pw + j] = at(m, i, j) * at(q, i, j + 1);
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, n, h, pw], out)?;
        Ok(self.push(out, &[encoding], move |ctx| {
            let e = ctx.inputs[0].data();
            let at = |k: usize, i: usize, j: usize| e[(k * h + i) * w + j];
            let mut ge = vec![0.0; e.len()];
            for m in 0..n {
                for q in 0..n {
                    let g = &ctx.grad[(m * n + q) * pairs..(m * n + q + 1) * pairs];
                    for i in 0..h {
                        for j in 0..pw {
                            let up = g[i * pw + j];
                            if up == 0.0 {
                                continue;
                            }
                            ge[(m * h + i) * w + j] += up * at(q, i, j + 1);
                            ge[(q * h + i) * w + j + 1] += up * at(m, i, j);
                        }
                    }
                }
            }
            Ok(vec![Some(ge)])
        }))
    }

    /// `[N × N × 3]` map of (L_m, L_n, normalized co-occurrence count).
    pub fn count_2d(&mut self, cooc: Var, levels: Var) -> Result<Var> {
        let shape = self.shape(cooc).to_vec();
        let [n, n2, h, pw] = shape[..] else {
            return Err(Error::rank("count_2d", 4, &shape));
        };
        if n != n2 || self.shape(levels) != [n] {
            return Err(Error::shape("count_2d", &shape, self.shape(levels)));
        }
        let pairs = h * pw;
        let r: Vec<f64> = (0..n * n)
            .map(|cell| self.value(cooc).data()[cell * pairs..(cell + 1) * pairs].iter().sum())
            .collect();
        let (counts, _) = normalize_counts(&r);
        let lv = self.value(levels).data();
        let mut out = Vec::with_capacity(3 * n * n);
        for m in 0..n {
            for q in 0..n {
                out.extend([lv[m], lv[q], counts[m * n + q]]);
            }
        }
        let out = Tensor::new(vec![n, n, 3], out)?;
        Ok(self.push(out, &[cooc, levels], move |ctx| {
            let mut gl = vec![0.0; n];
            let mut gc = vec![0.0; n * n];
            for m in 0..n {
                for q in 0..n {
                    let base = (m * n + q) * 3;
                    gl[m] += ctx.grad[base];
                    gl[q] += ctx.grad[base + 1];
                    gc[m * n + q] = ctx.grad[base + 2];
                }
            }
            let gcooc = ctx.needs[0].then(|| {
                let (_, den) = normalize_counts(&r);
                normalize_counts_backward(&r, den, &gc)
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, pairs))
                    .collect()
            });
            Ok(vec![gcooc, Some(gl)])
        }))
    }

    /// `[N² × C']` rows and `[C' × N × N]` statistical feature of a 2-d counting map.
    pub fn encode_average_2d(&mut self, counting: Var, g: Var, mlp: &Mlp<Var>) -> Result<(Var, Var)> {
        let shape = self.shape(counting).to_vec();
        let [n, n2, 3] = shape[..] else {
            return Err(Error::shape("encode_average_2d", &[0, 0, 3], &shape));
        };
        if n != n2 {
            return Err(Error::shape("encode_average_2d", &[n, n, 3], &shape));
        }
        let flat = self.reshape(counting, &[n * n, 3])?;
        let rows = self.encode_average_rows(flat, g, mlp, n * n)?;
        let cols = self.transpose(rows)?;
        let width = self.shape(cols)[0];
        let statfeat = self.reshape(cols, &[width, n, n])?;
        Ok((rows, statfeat))
    }

    /// Shared front end: average feature, similarity, levels and encoding.
    fn quantize_front(&mut self, a: Var, n_levels: usize) -> Result<[Var; 4]> {
        let g = self.global_avg_pool(a)?;
        let s = self.similarity_map(a, g)?;
        let levels = self.quantization_levels(s, n_levels)?;
        let e = self.quantize_encode(s, levels)?;
        let sv = self.value(s).data();
        let margin = window_margin(sv, self.value(levels).data()).min(extreme_gap(sv));
        self.note_kink_margin(margin);
        Ok([g, s, levels, e])
    }

    pub fn qco1d(&mut self, a: Var, n_levels: usize, mlp: &Mlp<Var>) -> Result<QuantVars1D> {
        let [g, s, levels, e] = self.quantize_front(a, n_levels)?;
        let counting = self.count_1d(e, levels)?;
        let statfeat = self.encode_average_1d(counting, g, mlp)?;
        Ok(QuantVars1D {
            mean_feature: g,
            similarity: s,
            levels,
            encoding: e,
            counting,
            statfeat,
        })
    }

    pub fn qco2d(&mut self, a: Var, n_levels: usize, mlp: &Mlp<Var>) -> Result<QuantVars2D> {
        let (_, h, w) = self.value(a).dims3("qco2d")?;
        if w < 2 {
            return Err(Error::RegionTooSmall {
                op: "qco2d",
                height: h,
                width: w,
            });
        }
        let [g, s, levels, e] = self.quantize_front(a, n_levels)?;
        let e_map = self.reshape(e, &[n_levels, h, w])?;
        let cooc = self.cooccurrence_encode(e_map)?;
        let counting = self.count_2d(cooc, levels)?;
        let (statfeat_rows, statfeat) = self.encode_average_2d(counting, g, mlp)?;
        Ok(QuantVars2D {
            mean_feature: g,
            similarity: s,
            levels,
            encoding: e,
            cooc_encoding: cooc,
            counting,
            statfeat_rows,
            statfeat,
        })
    }
}

/// Evaluate a graph function on constant inputs and return its value.
fn eval(inputs: &[&Tensor], f: impl FnOnce(&mut Graph, &[Var]) -> Result<Var>) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant((*t).clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).clone())
}

pub fn similarity_map(a: &Tensor, g: &Tensor) -> Result<Tensor> {
    eval(&[a, g], |gr, v| gr.similarity_map(v[0], v[1]))
}

pub fn quantization_levels(s: &Tensor, n_levels: usize) -> Result<Tensor> {
    eval(&[s], |gr, v| gr.quantization_levels(v[0], n_levels))
}

pub fn quantize_encode(s: &Tensor, levels: &Tensor) -> Result<Tensor> {
    eval(&[s, levels], |gr, v| gr.quantize_encode(v[0], v[1]))
}

pub fn count_1d(encoding: &Tensor, levels: &Tensor) -> Result<Tensor> {
    eval(&[encoding, levels], |gr, v| gr.count_1d(v[0], v[1]))
}

pub fn encode_average_1d(counting: &Tensor, g: &Tensor, mlp: &Mlp) -> Result<Tensor> {
    if mlp.in_dim() != 2 {
        return Err(Error::shape("encode_average_1d mlp", &[2], &[mlp.in_dim()]));
    }
    eval(&[counting, g], |gr, v| {
        let mlp = bind_constants(mlp, gr);
        gr.encode_average_1d(v[0], v[1], &mlp)
    })
}

pub fn cooccurrence_encode(encoding: &Tensor) -> Result<Tensor> {
    eval(&[encoding], |gr, v| gr.cooccurrence_encode(v[0]))
}

pub fn count_2d(cooc: &Tensor, levels: &Tensor) -> Result<Tensor> {
    eval(&[cooc, levels], |gr, v| gr.count_2d(v[0], v[1]))
}

pub fn encode_average_2d(counting: &Tensor, g: &Tensor, mlp: &Mlp) -> Result<Tensor> {
    if mlp.in_dim() != 3 {
        return Err(Error::shape("encode_average_2d mlp", &[3], &[mlp.in_dim()]));
    }
    eval(&[counting, g], |gr, v| {
        let mlp = bind_constants(mlp, gr);
        Ok(gr.encode_average_2d(v[0], v[1], &mlp)?.1)
    })
}

/// `[2 × N × N]` level pairs, cell `(m, n)` = `(L_m, L_n)`.
pub fn pair_levels(levels: &Tensor) -> Tensor {
    let n = levels.numel();
    let l = levels.data();
    Tensor::from_fn(&[2, n, n], |i| {
        let (plane, cell) = (i / (n * n), i % (n * n));
        if plane == 0 {
            l[cell / n]
        } else {
            l[cell % n]
        }
    })
}

pub fn qco1d(a: &Tensor, n_levels: usize, mlp: &Mlp) -> Result<QuantOutput1D> {
    if mlp.in_dim() != 2 {
        return Err(Error::shape("qco1d mlp", &[2], &[mlp.in_dim()]));
    }
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let mlp = bind_constants(mlp, &mut g);
    let v = g.qco1d(av, n_levels, &mlp)?;
    Ok(QuantOutput1D {
        mean_feature: g.value(v.mean_feature).clone(),
        similarity: g.value(v.similarity).clone(),
        levels: g.value(v.levels).clone(),
        encoding: g.value(v.encoding).clone(),
        counting: g.value(v.counting).clone(),
        statfeat: g.value(v.statfeat).clone(),
    })
}

pub fn qco2d(a: &Tensor, n_levels: usize, mlp: &Mlp) -> Result<QuantOutput2D> {
    if mlp.in_dim() != 3 {
        return Err(Error::shape("qco2d mlp", &[3], &[mlp.in_dim()]));
    }
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let mlp = bind_constants(mlp, &mut g);
    let v = g.qco2d(av, n_levels, &mlp)?;
    let levels = g.value(v.levels).clone();
    Ok(QuantOutput2D {
        mean_feature: g.value(v.mean_feature).clone(),
        similarity: g.value(v.similarity).clone(),
        pair_levels: pair_levels(&levels),
        levels,
        encoding: g.value(v.encoding).clone(),
        cooc_encoding: g.value(v.cooc_encoding).clone(),
        counting: g.value(v.counting).clone(),
        statfeat: g.value(v.statfeat).clone(),
    })
}

impl QuantOutput1D {
    pub fn window_margin(&self) -> f64 {
        window_margin(self.similarity.data(), self.levels.data())
    }
}

impl QuantOutput2D {
    pub fn window_margin(&self) -> f64 {
        window_margin(self.similarity.data(), self.levels.data())
    }
}
