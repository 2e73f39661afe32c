//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ParamTree;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Half-width of the central difference.
    pub eps: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Check at most this many coordinates per input (seeded sample); all when `None`.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-8,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Max relative error between the analytic gradient of scalar `f` at `x` and
/// its central difference with step `eps`.
pub fn check_gradient<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let opts = GradCheck {
        eps,
        ..GradCheck::default()
    };
    check_gradients(|g, vars| f(g, vars[0]), std::slice::from_ref(x), opts)
        .map(|r| r.max_rel_error)
}

/// Multi-input form: every tensor in `inputs` is perturbed and checked.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], opts: GradCheck) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if opts.eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps {} must be > 0", opts.eps)));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    check_finite(g.value(out), "gradcheck forward")?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();
    drop(g);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        check_finite(v, "gradcheck perturbed forward")?;
        Ok(v.data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    for (k, grad) in analytic.iter().enumerate() {
        let n = inputs[k].numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + opts.eps;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - opts.eps;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            if !numeric.is_finite() || !grad[i].is_finite() {
                return Err(Error::NonFinite(format!("gradient of input {k} at {i}")));
            }
            let err = relative_error(grad[i], numeric, opts.floor);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.coords_checked == 1 {
                report.max_rel_error = err;
                report.worst = (k, i);
                report.analytic = grad[i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Rebuild a bound parameter tree from a flat slice of vars in traversal order.
pub fn rebind<P: ParamTree>(template: &P, vars: &[Var]) -> P::Mapped<Var> {
    let mut it = vars.iter().copied();
    template.map_named("", &mut |name, _| {
        it.next()
            .unwrap_or_else(|| panic!("rebind: no var left for {name}"))
    })
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.numel() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{what}: function must return a scalar, got {:?}",
            t.shape()
        )));
    }
    if !t.all_finite() {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}
