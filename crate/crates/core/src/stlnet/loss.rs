//! Pixel-wise cross-entropy, hard-example mining and the learning-rate schedule.

use crate::autograd::{Graph, Var};
use crate::data::IGNORE_LABEL;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `base · (1 − iter/max_iter)^power`, clamped at zero past the end.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if max_iter == 0 {
        return base;
    }
    let frac = 1.0 - iter as f64 / max_iter as f64;
    base * frac.max(0.0).powf(power)
}

/// Indices of pixels kept by hard-example mining, ascending.
///
/// Valid pixels with `p_true < theta` are kept; if there are fewer than
/// `min_keep` of them, the `min_keep` lowest-probability valid pixels are
/// kept instead. Ties are broken by pixel index.
pub fn ohem_select(p_true: &[f64], valid: &[bool], theta: f64, min_keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p_true.len()).filter(|&i| valid[i]).collect();
    order.sort_by(|&a, &b| p_true[a].total_cmp(&p_true[b]).then(a.cmp(&b)));
    let hard = order.iter().take_while(|&&i| p_true[i] < theta).count();
    let keep = hard.max(min_keep.min(order.len()));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    kept
}

/// Per-pixel log-softmax pieces of `[K × P]` logits.
struct PixelSoftmax {
    /// `[K × P]` class probabilities.
    probs: Vec<f64>,
    /// `ln p_true` per pixel; 0 for ignored pixels.
    log_p_true: Vec<f64>,
    valid: Vec<bool>,
}

fn pixel_softmax(logits: &Tensor, labels: &[u8]) -> Result<(usize, usize, PixelSoftmax)> {
    let k = logits.shape().first().copied().unwrap_or(0);
    if logits.rank() < 2 || k == 0 {
        return Err(Error::rank("pixel loss", 2, logits.shape()));
    }
    let p = logits.numel() / k;
    if labels.len() != p {
        return Err(Error::shape("pixel loss", &[k, p], &[labels.len()]));
    }
    let z = logits.data();
    let mut probs = vec![0.0; k * p];
    let mut log_p_true = vec![0.0; p];
    let mut valid = vec![false; p];
    for i in 0..p {
        let y = labels[i];
        if y == IGNORE_LABEL {
            continue;
        }
        if usize::from(y) >= k {
            return Err(Error::InvalidArgument(format!(
                "label {y} at pixel {i} out of range for {k} classes"
            )));
        }
        let max = (0..k).map(|c| z[c * p + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..k {
            let e = (z[c * p + i] - max).exp();
            probs[c * p + i] = e;
            sum += e;
        }
        for c in 0..k {
            probs[c * p + i] /= sum;
        }
        log_p_true[i] = z[usize::from(y) * p + i] - max - sum.ln();
        valid[i] = true;
    }
    Ok((k, p, PixelSoftmax {
        probs,
        log_p_true,
        valid,
    }))
}

impl Graph {
    /// Mean cross-entropy over the pixels chosen by `select`.
    fn selected_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[u8],
        select: impl FnOnce(&[f64], &[bool]) -> Vec<usize>,
    ) -> Result<Var> {
        let (k, p, sm) = pixel_softmax(self.value(logits), labels)?;
        let p_true: Vec<f64> = sm.log_p_true.iter().map(|l| l.exp()).collect();
        let kept = select(&p_true, &sm.valid);
        if kept.is_empty() {
            return Err(Error::NoValidPixels);
        }
        let n = kept.len() as f64;
        let loss = -kept.iter().map(|&i| sm.log_p_true[i]).sum::<f64>() / n;
        let labels = labels.to_vec();
        let probs = sm.probs;
        Ok(self.push(Tensor::scalar(loss), &[logits], move |ctx| {
            let scale = ctx.grad[0] / n;
            let mut g = vec![0.0; k * p];
            for &i in &kept {
                for c in 0..k {
                    g[c * p + i] = probs[c * p + i] * scale;
                }
                g[usize::from(labels[i]) * p + i] -= scale;
            }
            Ok(vec![Some(g)])
        }))
    }

    /// Mean cross-entropy over all non-ignored pixels of `[K × ...]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        self.selected_cross_entropy(logits, labels, |_, valid| {
            (0..valid.len()).filter(|&i| valid[i]).collect()
        })
    }

    /// Cross-entropy restricted to hard pixels, see [`ohem_select`].
    pub fn ohem_loss(&mut self, logits: Var, labels: &[u8], theta: f64, min_keep: usize) -> Result<Var> {
        if !(theta > 0.0 && theta < 1.0) || min_keep == 0 {
            return Err(Error::InvalidArgument(format!(
                "ohem needs theta in (0,1) and min_keep >= 1, got {theta}, {min_keep}"
            )));
        }
        self.selected_cross_entropy(logits, labels, |p, valid| {
            ohem_select(p, valid, theta, min_keep)
        })
    }

    /// Hard-mined loss on the final logits plus `alpha` times plain cross-entropy on the auxiliary ones.
    pub fn total_loss(
        &mut self,
        final_logits: Var,
        aux_logits: Var,
        labels: &[u8],
        alpha: f64,
        theta: f64,
        min_keep: usize,
    ) -> Result<Var> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        let lf = self.ohem_loss(final_logits, labels, theta, min_keep)?;
        let la = self.cross_entropy(aux_logits, labels)?;
        self.axpy(lf, alpha, la)
    }
}

pub fn cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let l = g.cross_entropy(z, labels)?;
    Ok(g.value(l).data()[0])
}

pub fn ohem_loss(logits: &Tensor, labels: &[u8], theta: f64, min_keep: usize) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let l = g.ohem_loss(z, labels, theta, min_keep)?;
    Ok(g.value(l).data()[0])
}

/// True-class probability of every pixel; `NaN` for ignored ones.
pub fn true_class_probs(logits: &Tensor, labels: &[u8]) -> Result<Vec<f64>> {
    let (_, _, sm) = pixel_softmax(logits, labels)?;
    Ok(sm
        .log_p_true
        .iter()
        .zip(&sm.valid)
        .map(|(l, &v)| if v { l.exp() } else { f64::NAN })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};

    /// Two-class logits whose class-0 probability is exactly `p` per pixel.
    fn logits_for(p0: &[f64]) -> Tensor {
        let n = p0.len();
        let mut d = vec![0.0; 2 * n];
        for (i, &p) in p0.iter().enumerate() {
            d[i] = (p / (1.0 - p)).ln();
        }
        Tensor::new(vec![2, n], d).unwrap()
    }

    #[test]
    fn poly_examples() {
        assert_eq!(poly_lr(0.01, 0, 100, 0.9), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100, 0.9), 0.0);
        assert!((poly_lr(0.01, 50, 100, 0.9) - 0.005359).abs() < 5e-7);
        assert_eq!(poly_lr(0.01, 150, 100, 0.9), 0.0);
    }

    #[test]
    fn ohem_keeps_hard_pixels() {
        let z = logits_for(&[0.9, 0.6, 0.5]);
        let l = ohem_loss(&z, &[0, 0, 0], 0.7, 1).unwrap();
        let want = -(0.6f64.ln() + 0.5f64.ln()) / 2.0;
        assert!((l - want).abs() < 1e-12, "{l} vs {want}");
    }

    #[test]
    fn ohem_falls_back_to_lowest() {
        let p = [0.95, 0.8, 0.9, 0.85];
        assert_eq!(ohem_select(&p, &[true; 4], 0.7, 2), vec![1, 3]);
        let z = logits_for(&p);
        let l = ohem_loss(&z, &[0; 4], 0.7, 2).unwrap();
        let want = -(0.8f64.ln() + 0.85f64.ln()) / 2.0;
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_prediction_single_pixel() {
        let z = Tensor::new(vec![2, 1], vec![30.0, 0.0]).unwrap();
        let l = ohem_loss(&z, &[0], 0.7, 1).unwrap();
        assert!(l > 0.0 && l < 1e-12);
    }

    #[test]
    fn ignored_pixels_excluded() {
        let z = logits_for(&[0.1, 0.6]);
        let l = ohem_loss(&z, &[IGNORE_LABEL, 0], 0.7, 1).unwrap();
        assert!((l + 0.6f64.ln()).abs() < 1e-12);
        assert!(matches!(
            ohem_loss(&z, &[IGNORE_LABEL; 2], 0.7, 1),
            Err(Error::NoValidPixels)
        ));
        assert!(ohem_loss(&z, &[2, 0], 0.7, 1).is_err());
    }

    #[test]
    fn total_loss_weights_aux() {
        // Final: single pixel with p_true = e^-1 -> L_f = 1. Aux: p_true = e^-0.5 -> L_a = 0.5.
        let fin = logits_for(&[(-1.0f64).exp()]);
        let aux = logits_for(&[(-0.5f64).exp()]);
        let mut g = Graph::new();
        let (f, a) = (g.constant(fin), g.constant(aux));
        let t = g.total_loss(f, a, &[0], 0.4, 0.7, 1).unwrap();
        assert!((g.value(t).data()[0] - 1.2).abs() < 1e-12);
        let t0 = g.total_loss(f, a, &[0], 0.0, 0.7, 1).unwrap();
        assert!((g.value(t0).data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_reaches_both_heads() {
        let mut g = Graph::new();
        let f = g.param(Tensor::from_fn(&[3, 4], |i| (i as f64).sin()));
        let a = g.param(Tensor::from_fn(&[3, 4], |i| (i as f64).cos()));
        let t = g.total_loss(f, a, &[0, 1, 2, 1], 0.4, 0.7, 2).unwrap();
        g.backward(t).unwrap();
        assert!(g.grad(a).unwrap().iter().any(|&v| v != 0.0));
        assert!(g.grad(f).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let z = Tensor::from_fn(&[3, 5], |i| ((i * 7) as f64 * 0.37).sin());
        let labels = [0u8, 2, 1, IGNORE_LABEL, 2];
        let r = check_gradients(|g, v| g.cross_entropy(v[0], &labels), &[z], GradCheck::default()).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
