//! SGD training, mIoU evaluation, checkpoints and ablation sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{poly_lr, Flags, ForwardOpts, StlnetParams, TrainConfig};
use crate::autograd::{Graph, Var};
use crate::data::{read_json, write_json, Dataset, SegSample, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::nn::{bind_params, leaves, named_tensors, replace_tensors};
use crate::tensor::Tensor;
use crate::tsr::{load_tsr, save_tsr};

pub const METRICS_HEADER: &str = "iter,lr,loss,val_miou";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_miou: Option<f64>,
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        let miou = self.val_miou.map(|m| m.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.iter, self.lr, self.loss, miou)
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Row = ground truth, column = prediction.
    pub confusion: Vec<u64>,
    /// `None` for classes absent from the ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: StlnetParams,
    pub metrics: Vec<MetricRow>,
    /// Validation report of the final parameters.
    pub val: EvalReport,
}

pub fn confusion_matrix(pred: &[u8], labels: &[u8], num_classes: usize) -> Result<Vec<u64>> {
    if pred.len() != labels.len() {
        return Err(Error::shape("confusion_matrix", &[pred.len()], &[labels.len()]));
    }
    let k = num_classes;
    let mut conf = vec![0u64; k * k];
    for (&p, &y) in pred.iter().zip(labels) {
        if y == IGNORE_LABEL {
            continue;
        }
        let (p, y) = (usize::from(p), usize::from(y));
        if p >= k || y >= k {
            return Err(Error::InvalidArgument(format!(
                "class index {} out of range for {k} classes",
                p.max(y)
            )));
        }
        conf[y * k + p] += 1;
    }
    Ok(conf)
}

/// Per-class IoU and their mean over classes present in the ground truth.
pub fn miou_from_confusion(conf: &[u64], num_classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    let k = num_classes;
    if conf.len() != k * k {
        return Err(Error::shape("miou_from_confusion", &[k, k], &[conf.len()]));
    }
    let ious: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let gt: u64 = conf[c * k..(c + 1) * k].iter().sum();
            if gt == 0 {
                return None;
            }
            let tp = conf[c * k + c];
            let pred: u64 = (0..k).map(|r| conf[r * k + c]).sum();
            Some(tp as f64 / (gt + pred - tp) as f64)
        })
        .collect();
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyInput("miou: no labelled pixels"));
    }
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok((ious, miou))
}

fn argmax_classes(logits: &Tensor) -> Vec<u8> {
    let k = logits.shape()[0];
    let p = logits.numel() / k;
    let z = logits.data();
    (0..p)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if z[c * p + i] > z[best * p + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Per-pixel argmax class of one image.
pub fn predict(params: &StlnetParams, img: &Tensor, opts: ForwardOpts) -> Result<Vec<u8>> {
    let (logits, _) = super::stlnet_forward(img, params, opts)?;
    Ok(argmax_classes(&logits))
}

pub fn evaluate<'a>(
    params: &StlnetParams,
    samples: impl IntoIterator<Item = &'a SegSample>,
    opts: ForwardOpts,
) -> Result<EvalReport> {
    let k = params.num_classes();
    let mut confusion = vec![0u64; k * k];
    let mut seen = false;
    for s in samples {
        seen = true;
        let pred = predict(params, &s.image, opts)?;
        for (acc, c) in confusion.iter_mut().zip(confusion_matrix(&pred, &s.labels.data, k)?) {
            *acc += c;
        }
    }
    if !seen {
        return Err(Error::EmptyInput("evaluate"));
    }
    let (per_class_iou, miou) = miou_from_confusion(&confusion, k)?;
    Ok(EvalReport {
        confusion,
        per_class_iou,
        miou,
    })
}

/// Loss of one mini-batch, with hard mining over all of its pixels jointly.
fn batch_loss(
    g: &mut Graph,
    params: &StlnetParams<Var>,
    batch: &[&SegSample],
    cfg: &TrainConfig,
) -> Result<Var> {
    let opts = ForwardOpts::from(cfg);
    let mut finals = Vec::with_capacity(batch.len());
    let mut auxes = Vec::with_capacity(batch.len());
    let mut labels = Vec::new();
    for s in batch {
        let x = g.constant(s.image.clone());
        let out = g.stlnet_forward(x, params, opts)?;
        let k = g.shape(out.logits)[0];
        let hw = s.labels.data.len();
        finals.push(g.reshape(out.logits, &[k, hw])?);
        auxes.push(g.reshape(out.aux_logits, &[k, hw])?);
        labels.extend_from_slice(&s.labels.data);
    }
    let f = g.concat(&finals, 1)?;
    let a = g.concat(&auxes, 1)?;
    g.total_loss(f, a, &labels, cfg.alpha, cfg.ohem_theta, cfg.ohem_min_keep)
}

#[derive(Serialize)]
struct NanDiagnostic<'a> {
    iter: usize,
    lr: f64,
    loss: String,
    batch: &'a [usize],
    non_finite_params: Vec<String>,
}

fn dump_non_finite(
    dir: &Path,
    iter: usize,
    lr: f64,
    loss: f64,
    batch: &[usize],
    params: &StlnetParams,
    cfg: &TrainConfig,
) -> Result<()> {
    let dump = dir.join("nan_dump");
    save_checkpoint(params, cfg, &dump)?;
    let diag = NanDiagnostic {
        iter,
        lr,
        loss: loss.to_string(),
        batch,
        non_finite_params: named_tensors(params)
            .into_iter()
            .filter(|(_, t)| !t.all_finite())
            .map(|(n, _)| n)
            .collect(),
    };
    write_json(&diag, dump.join("diagnostic.json"))
}

/// Train on `ds.train` with seeded batch order, logging validation mIoU.
///
/// With `out_dir`, writes `metrics.csv` and a `checkpoint/` bundle there; on a
/// non-finite loss a `nan_dump/` is written before the error is returned.
pub fn train(ds: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::EmptyInput("train: no training samples"));
    }
    if ds.val.is_empty() {
        return Err(Error::EmptyInput("train: no validation samples"));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let opts = ForwardOpts::from(cfg);
    let mut params = StlnetParams::init(ds.num_classes, cfg)?;
    let mut velocity: Vec<Vec<f64>> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order = ds.train.clone();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut metrics = Vec::with_capacity(cfg.iters);

    let result = (|| -> Result<()> {
        for it in 0..cfg.iters {
            let lr = poly_lr(cfg.lr, it, cfg.iters, cfg.lr_power);
            let mut batch_idx = Vec::with_capacity(cfg.batch);
            while batch_idx.len() < cfg.batch {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch_idx.push(order[cursor]);
                cursor += 1;
            }
            let batch: Vec<&SegSample> = batch_idx.iter().map(|&i| &ds.samples[i]).collect();

            let mut g = Graph::new();
            let bound = bind_params(&params, &mut g);
            let loss_var = batch_loss(&mut g, &bound, &batch, cfg)?;
            let loss = g.value(loss_var).data()[0];
            if !loss.is_finite() {
                if let Some(dir) = out_dir {
                    dump_non_finite(dir, it, lr, loss, &batch_idx, &params, cfg)?;
                }
                return Err(Error::NonFiniteLoss { iter: it });
            }
            g.backward(loss_var)?;

            let vars = leaves(&bound);
            let current = leaves(&params);
            if velocity.is_empty() {
                velocity = current.iter().map(|t| vec![0.0; t.numel()]).collect();
            }
            let mut updated = Vec::with_capacity(current.len());
            for ((t, &v), vel) in current.into_iter().zip(&vars).zip(&mut velocity) {
                let grad = g.grad(v);
                let mut data = t.into_data();
                for (i, w) in data.iter_mut().enumerate() {
                    let gi = grad.map_or(0.0, |gr| gr[i]) + cfg.weight_decay * *w;
                    vel[i] = cfg.momentum * vel[i] + gi;
                    *w -= lr * vel[i];
                }
                updated.push(data);
            }
            drop(g);
            let shapes: Vec<Vec<usize>> = leaves(&params).iter().map(|t| t.shape().to_vec()).collect();
            let tensors = shapes
                .into_iter()
                .zip(updated)
                .map(|(s, d)| Tensor::new(s, d))
                .collect::<Result<Vec<_>>>()?;
            params = replace_tensors(&params, tensors)?;

            let last = it + 1 == cfg.iters;
            let due = cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0;
            let val_miou = if due || last {
                Some(evaluate(&params, ds.val_samples(), opts)?.miou)
            } else {
                None
            };
            metrics.push(MetricRow {
                iter: it,
                lr,
                loss,
                val_miou,
            });
        }
        Ok(())
    })();

    if let Some(dir) = out_dir {
        let path = dir.join("metrics.csv");
        fs::write(&path, metrics_csv(&metrics)).map_err(|e| Error::io(&path, e))?;
    }
    result?;
    let val = evaluate(&params, ds.val_samples(), opts)?;
    if let Some(dir) = out_dir {
        save_checkpoint(&params, cfg, dir.join("checkpoint"))?;
    }
    Ok(TrainOutcome {
        params,
        metrics,
        val,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    shape: Vec<usize>,
}

/// Writes one TSR1 file per tensor, `manifest.json` and the `config.json` that shapes them.
pub fn save_checkpoint(params: &StlnetParams, cfg: &TrainConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = BTreeMap::new();
    for (name, t) in named_tensors(params) {
        let file = format!("{name}.tsr");
        save_tsr(&t, dir.join(&file))?;
        manifest.insert(
            name,
            ManifestEntry {
                file,
                shape: t.shape().to_vec(),
            },
        );
    }
    write_json(&manifest, dir.join("manifest.json"))?;
    write_json(cfg, dir.join("config.json"))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(StlnetParams, TrainConfig)> {
    let dir = dir.as_ref();
    let cfg: TrainConfig = read_json(dir.join("config.json"))?;
    let manifest: BTreeMap<String, ManifestEntry> = read_json(dir.join("manifest.json"))?;
    let num_classes = manifest
        .get("fuse_head.weight")
        .and_then(|e| e.shape.first().copied())
        .ok_or_else(|| Error::InvalidArgument("manifest lacks fuse_head.weight".into()))?;
    let template = StlnetParams::init(num_classes, &cfg)?;
    let tensors = named_tensors(&template)
        .into_iter()
        .map(|(name, _)| {
            let entry = manifest
                .get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("manifest lacks {name}")))?;
            let t = load_tsr(dir.join(&entry.file))?;
            if t.shape() != entry.shape.as_slice() {
                return Err(Error::shape("checkpoint tensor", &entry.shape, t.shape()));
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((replace_tensors(&template, tensors)?, cfg))
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub label: String,
    pub cfg: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub flags: Flags,
    pub n_levels_1d: usize,
    pub n_levels_2d: usize,
    pub scales: Vec<usize>,
    pub seed: u64,
    pub miou: Option<f64>,
    pub error: Option<String>,
}

/// Named sweeps: `components` (component lattice), `levels` (1-d levels of TEM),
/// `graph` (TEM with and without the level graph), `scales` (pyramid prefixes).
pub fn ablation_grid(kind: &str, base: &TrainConfig, levels: &[usize]) -> Result<Vec<AblationRun>> {
    let with = |label: String, f: &dyn Fn(&mut TrainConfig)| {
        let mut cfg = base.clone();
        f(&mut cfg);
        AblationRun { label, cfg }
    };
    let flags = |slf, tem, ptfem| Flags {
        use_slf: slf,
        use_tem: tem,
        use_ptfem: ptfem,
        use_graph: true,
    };
    let runs = match kind {
        "components" => [
            flags(false, false, false),
            flags(true, false, false),
            flags(true, true, false),
            flags(true, false, true),
            flags(true, true, true),
        ]
        .into_iter()
        .map(|f| with(f.label(), &|c| c.flags = f))
        .collect(),
        "levels" => {
            if levels.is_empty() {
                return Err(Error::InvalidArgument("level sweep needs at least one level".into()));
            }
            levels
                .iter()
                .map(|&n| {
                    with(format!("n_levels_1d={n}"), &|c| {
                        c.flags = Flags::FULL;
                        c.n_levels_1d = n;
                    })
                })
                .collect()
        }
        "graph" => [true, false]
            .into_iter()
            .map(|on| {
                let f = Flags {
                    use_graph: on,
                    ..flags(true, true, false)
                };
                with(f.label(), &|c| c.flags = f)
            })
            .collect(),
        "scales" => (1..=base.scales.len())
            .map(|n| {
                let s = base.scales[..n].to_vec();
                let label = format!("scales={}", join_scales(&s));
                with(label, &|c| {
                    c.flags = Flags::FULL;
                    c.scales = s.clone();
                })
            })
            .collect(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown grid {other:?}; expected components, levels, graph or scales"
            )))
        }
    };
    Ok(runs)
}

fn join_scales(s: &[usize]) -> String {
    s.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

/// Train and evaluate every run in order; a failed run is recorded and the sweep continues.
pub fn ablate(
    ds: &Dataset,
    runs: &[AblationRun],
    mut on_row: impl FnMut(&AblationRow),
) -> Vec<AblationRow> {
    runs.iter()
        .map(|run| {
            let outcome = train(ds, &run.cfg, None);
            let row = AblationRow {
                label: run.label.clone(),
                flags: run.cfg.flags,
                n_levels_1d: run.cfg.n_levels_1d,
                n_levels_2d: run.cfg.n_levels_2d,
                scales: run.cfg.scales.clone(),
                seed: run.cfg.seed,
                miou: outcome.as_ref().ok().map(|o| o.val.miou),
                error: outcome.err().map(|e| e.to_string()),
            };
            on_row(&row);
            row
        })
        .collect()
}

pub fn write_ablation_csv(rows: &[AblationRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("writing ablation csv: {e}"));
    w.write_record([
        "label", "use_slf", "use_tem", "use_ptfem", "use_graph", "n_levels_1d", "n_levels_2d",
        "scales", "seed", "miou", "error",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.flags.use_slf.to_string(),
            r.flags.use_tem.to_string(),
            r.flags.use_ptfem.to_string(),
            r.flags.use_graph.to_string(),
            r.n_levels_1d.to_string(),
            r.n_levels_2d.to_string(),
            join_scales(&r.scales),
            r.seed.to_string(),
            r.miou.map(|m| m.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("ablation csv", e))
}
