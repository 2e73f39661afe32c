//! Seeded finite-difference checks of every differentiable operator.
//!
//! Each point draws random inputs and parameters, rejecting draws where a
//! perturbation could cross a quantization window edge, swap the extreme
//! similarity, or change the hard-mined pixel set. The checked scalar is a
//! fixed random projection of the operator output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::data::IGNORE_LABEL;
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, rebind, GradCheck, GradReport};
use crate::nn::{bind_constants, leaves, Mlp, ParamTree};
use crate::ptfem::{PtfemDims, PtfemParams};
use crate::stlnet::{true_class_probs, Flags, ForwardOpts, StlnetParams, TrainConfig, Widths};
use crate::tem::{TemDims, TemParams};
use crate::tensor::Tensor;

/// Minimum distance from any discontinuity for a point to count as interior.
pub const INTERIOR_MARGIN: f64 = 1e-4;
const MAX_ATTEMPTS: usize = 500;
const CHANNELS: usize = 3;
const SIDE: usize = 8;
const LEVELS: usize = 4;
const CLASSES: usize = 3;
const OHEM_THETA: f64 = 0.7;
const OHEM_KEEP: usize = 16;
const ALPHA: f64 = 0.4;
/// Denominator floor of the relative error. Difference quotients carry about
/// 1e-10 of rounding noise, which swamps gradients near zero (a bias ahead of
/// a softmax has exactly zero gradient).
pub const ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradOp {
    Qco1d,
    Qco2d,
    Tem,
    Ptfem,
    TotalLoss,
    /// Hard-mined loss of the whole network w.r.t. a parameter subset.
    /// Even points enable SLF+TEM, odd points SLF+PTFEM: at random init the
    /// TEM output is nearly collinear, so PTFEM on top of it sits on a
    /// degenerate quantization where no interior point exists.
    Stlnet,
}

impl GradOp {
    pub const ALL: [GradOp; 6] = [
        GradOp::Qco1d,
        GradOp::Qco2d,
        GradOp::Tem,
        GradOp::Ptfem,
        GradOp::TotalLoss,
        GradOp::Stlnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Qco1d => "qco1d",
            GradOp::Qco2d => "qco2d",
            GradOp::Tem => "tem_forward",
            GradOp::Ptfem => "ptfem_forward",
            GradOp::TotalLoss => "total_loss",
            GradOp::Stlnet => "stlnet_forward",
        }
    }

    pub fn parse(s: &str) -> Option<GradOp> {
        GradOp::ALL.into_iter().find(|op| op.name() == s || op.name().trim_end_matches("_forward") == s)
    }

    /// Pass threshold on the max relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            GradOp::TotalLoss | GradOp::Stlnet => 1e-3,
            _ => 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointCheck {
    pub op: GradOp,
    pub point: usize,
    /// Draws needed to find an interior point.
    pub attempts: usize,
    pub report: GradReport,
}

impl PointCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.op.tolerance()
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Feature map whose pixel vectors all have norm >= 0.2.
fn feature_map(rng: &mut ChaCha8Rng) -> Tensor {
    let hw = SIDE * SIDE;
    loop {
        let a = uniform(&[CHANNELS, SIDE, SIDE], -1.0, 1.0, rng);
        let d = a.data();
        let ok = (0..hw).all(|i| (0..CHANNELS).map(|c| d[c * hw + i].powi(2)).sum::<f64>() >= 0.04);
        if ok {
            return a;
        }
    }
}

/// Quantization margin of a forward pass built from constants.
fn margin_of(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(&mut g, &vars)?;
    Ok(g.kink_margin().unwrap_or(f64::INFINITY))
}

/// `Σ w ⊙ out` for a fixed random `w`.
fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let w = g.reshape(w, g.shape(out).to_vec().as_slice())?;
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn params_with<P: ParamTree<Elem = Tensor>>(input: Tensor, params: &P) -> Vec<Tensor> {
    let mut v = vec![input];
    v.extend(leaves(params));
    v
}

/// Smallest distance of any true-class probability from `theta` or of the
/// kept/discarded boundary in hard mining.
fn ohem_margin(logits: &Tensor, labels: &[u8], theta: f64, keep: usize) -> Result<f64> {
    let p = true_class_probs(logits, labels)?;
    let mut valid: Vec<f64> = p.iter().copied().filter(|v| !v.is_nan()).collect();
    valid.sort_by(f64::total_cmp);
    let mut margin = valid.iter().map(|v| (v - theta).abs()).fold(f64::INFINITY, f64::min);
    let hard = valid.iter().filter(|&&v| v < theta).count();
    let kept = hard.max(keep.min(valid.len()));
    if kept > 0 && kept < valid.len() {
        margin = margin.min(valid[kept] - valid[kept - 1]);
    }
    Ok(margin)
}

type Objective = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One random draw: inputs, the scalar objective, and its discontinuity margin.
fn draw(op: GradOp, point: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Objective, f64, GradCheck)> {
    let opts = GradCheck {
        floor: ERROR_FLOOR,
        ..GradCheck::default()
    };
    match op {
        GradOp::Qco1d | GradOp::Qco2d => {
            let two_d = op == GradOp::Qco2d;
            let a = feature_map(rng);
            let mlp = Mlp::init(if two_d { 3 } else { 2 }, 4, 4, rng);
            let out_len = if two_d { (4 + CHANNELS) * LEVELS * LEVELS } else { (4 + CHANNELS) * LEVELS };
            let w = uniform(&[out_len], -1.0, 1.0, rng);
            let inputs = params_with(a, &mlp);
            let f: Objective = Box::new(move |g, v| {
                let p = rebind(&mlp, &v[1..]);
                let out = if two_d {
                    g.qco2d(v[0], LEVELS, &p)?.statfeat
                } else {
                    g.qco1d(v[0], LEVELS, &p)?.statfeat
                };
                project(g, out, &w)
            });
            let m = margin_of(&inputs, &f)?;
            Ok((inputs, f, m, opts))
        }
        GradOp::Tem => {
            let a = feature_map(rng);
            let dims = TemDims {
                in_channels: CHANNELS,
                qco_hidden: 4,
                qco_out: 4,
                key: 4,
                out_channels: 4,
            };
            let params = TemParams::init(dims, rng);
            let w = uniform(&[4 * SIDE * SIDE], -1.0, 1.0, rng);
            let inputs = params_with(a, &params);
            let f: Objective = Box::new(move |g, v| {
                let p = rebind(&params, &v[1..]);
                let out = g.tem_forward(v[0], LEVELS, &p, true)?.output;
                project(g, out, &w)
            });
            let m = margin_of(&inputs, &f)?;
            Ok((inputs, f, m, opts))
        }
        GradOp::Ptfem => {
            let a = feature_map(rng);
            let dims = PtfemDims {
                in_channels: CHANNELS,
                qco_hidden: 4,
                qco_out: 4,
                desc_hidden: 4,
                desc_out: 4,
            };
            let params = PtfemParams::init(dims, &[1, 2, 4], rng)?;
            let w = uniform(&[12 * SIDE * SIDE], -1.0, 1.0, rng);
            let inputs = params_with(a, &params);
            let f: Objective = Box::new(move |g, v| {
                let p = rebind(&params, &v[1..]);
                let out = g.ptfem_forward(v[0], LEVELS, &p)?;
                project(g, out, &w)
            });
            let m = margin_of(&inputs, &f)?;
            Ok((inputs, f, m, opts))
        }
        GradOp::TotalLoss => {
            let p = SIDE * SIDE;
            let fin = uniform(&[CLASSES, p], -2.0, 2.0, rng);
            let aux = uniform(&[CLASSES, p], -2.0, 2.0, rng);
            let labels: Vec<u8> = (0..p)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        IGNORE_LABEL
                    } else {
                        rng.gen_range(0..CLASSES as u8)
                    }
                })
                .collect();
            let m = ohem_margin(&fin, &labels, OHEM_THETA, OHEM_KEEP)?;
            let f: Objective = Box::new(move |g, v| {
                g.total_loss(v[0], v[1], &labels, ALPHA, OHEM_THETA, OHEM_KEEP)
            });
            Ok((vec![fin, aux], f, m, opts))
        }
        GradOp::Stlnet => {
            let side = 4 * SIDE;
            let cfg = TrainConfig {
                seed: rng.gen(),
                n_levels_1d: LEVELS,
                n_levels_2d: LEVELS,
                scales: vec![1, 2],
                flags: Flags {
                    use_tem: point.is_multiple_of(2),
                    use_ptfem: point % 2 == 1,
                    ..Flags::FULL
                },
                widths: Widths {
                    stages: [4, 4, 4, 4],
                    context: 4,
                    tem_qco_hidden: 4,
                    tem_qco_out: 4,
                    tem_key: 4,
                    tem_out: 4,
                    ptfem_qco_hidden: 4,
                    ptfem_qco_out: 4,
                    ptfem_desc_hidden: 4,
                    ptfem_desc_out: 4,
                },
                ..TrainConfig::default()
            };
            let params = StlnetParams::init(CLASSES, &cfg)?;
            let img = uniform(&[3, side, side], 0.0, 1.0, rng);
            let labels: Vec<u8> = (0..side * side).map(|_| rng.gen_range(0..CLASSES as u8)).collect();
            let fwd = ForwardOpts::from(&cfg);
            let logits = {
                let mut g = Graph::new();
                let x = g.constant(img.clone());
                let p = bind_constants(&params, &mut g);
                let out = g.stlnet_forward(x, &p, fwd)?;
                g.value(out.logits).clone()
            };
            let keep = OHEM_KEEP;
            let om = ohem_margin(&logits, &labels, OHEM_THETA, keep)?;
            let inputs = params_with(img, &params);
            let f: Objective = Box::new(move |g, v| {
                let p = rebind(&params, &v[1..]);
                let out = g.stlnet_forward(v[0], &p, fwd)?;
                g.total_loss(out.logits, out.aux_logits, &labels, ALPHA, OHEM_THETA, keep)
            });
            let m = margin_of(&inputs, &f)?.min(om);
            let opts = GradCheck {
                max_coords: Some(4),
                ..opts
            };
            Ok((inputs, f, m, opts))
        }
    }
}

/// Check `op` at the interior point with index `point` of the stream seeded by `seed`.
pub fn check_point(op: GradOp, seed: u64, point: usize) -> Result<PointCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point as u64);
    for attempt in 1..=MAX_ATTEMPTS {
        let (inputs, f, margin, opts) = draw(op, point, &mut rng)?;
        if margin < INTERIOR_MARGIN {
            continue;
        }
        let opts = GradCheck {
            seed: seed ^ point as u64,
            ..opts
        };
        let report = check_gradients(|g, v| f(g, v), &inputs, opts)?;
        return Ok(PointCheck {
            op,
            point,
            attempts: attempt,
            report,
        });
    }
    Err(Error::InvalidArgument(format!(
        "{}: no interior point found in {MAX_ATTEMPTS} draws",
        op.name()
    )))
}

pub fn run_suite(ops: &[GradOp], points: usize, seed: u64) -> Result<Vec<PointCheck>> {
    let mut out = Vec::with_capacity(ops.len() * points);
    for &op in ops {
        for p in 0..points {
            out.push(check_point(op, seed, p)?);
        }
    }
    Ok(out)
}
