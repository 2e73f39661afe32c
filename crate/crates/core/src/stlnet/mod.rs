//! Desk-scale segmentation network: a small convolutional backbone with a
//! context head, plus the shallow-feature texture branch (TEM then PTFEM).

mod config;
mod loss;
mod train;

pub use config::{Flags, TrainConfig, Widths};
pub use loss::{cross_entropy, ohem_loss, ohem_select, poly_lr, true_class_probs};
pub use train::{
    ablate, ablation_grid, confusion_matrix, evaluate, load_checkpoint, miou_from_confusion,
    predict, save_checkpoint, train, write_ablation_csv, AblationRow, AblationRun, EvalReport,
    metrics_csv, MetricRow, TrainOutcome, METRICS_HEADER,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{bind_constants, join, pointwise, Conv, Linear, ParamTree};
use crate::ptfem::{PtfemDims, PtfemParams};
use crate::tem::{TemDims, TemParams};
use crate::tensor::{ConvSpec, Tensor};

/// Total downsampling of the backbone.
pub const OUTPUT_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct StlnetParams<T = Tensor> {
    /// Stages 1-3 halve the resolution; stage 4 keeps it with dilation 2.
    pub backbone: Vec<Conv<T>>,
    pub context_head: Conv<T>,
    pub tem: Option<TemParams<T>>,
    pub ptfem: Option<PtfemParams<T>>,
    pub fuse_head: Linear<T>,
    pub aux_head: Linear<T>,
}

impl<T> ParamTree for StlnetParams<T> {
    type Elem = T;
    type Mapped<U> = StlnetParams<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> StlnetParams<U> {
        StlnetParams {
            backbone: self.backbone.map_named(&join(prefix, "backbone"), f),
            context_head: self.context_head.map_named(&join(prefix, "context_head"), f),
            tem: self.tem.map_named(&join(prefix, "tem"), f),
            ptfem: self.ptfem.map_named(&join(prefix, "ptfem"), f),
            fuse_head: self.fuse_head.map_named(&join(prefix, "fuse_head"), f),
            aux_head: self.aux_head.map_named(&join(prefix, "aux_head"), f),
        }
    }
}

/// Input channels of the fusion head: context, TEM, PTFEM and SLF, each when enabled.
pub fn fuse_channels(widths: &Widths, flags: Flags, n_scales: usize) -> usize {
    let mut c = widths.context;
    if flags.use_tem {
        c += widths.tem_out;
    }
    if flags.use_ptfem {
        c += n_scales * widths.ptfem_desc_out;
    }
    if flags.use_slf {
        c += widths.slf();
    }
    c
}

fn stage_spec(i: usize) -> ConvSpec {
    if i < 3 {
        ConvSpec {
            stride: 2,
            padding: 1,
            dilation: 1,
        }
    } else {
        dilated_spec()
    }
}

fn dilated_spec() -> ConvSpec {
    ConvSpec {
        stride: 1,
        padding: 2,
        dilation: 2,
    }
}

impl StlnetParams<Tensor> {
    /// Seeded initialization for `cfg`'s widths, flags and scales.
    pub fn init(num_classes: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!("need >= 2 classes, got {num_classes}")));
        }
        let w = &cfg.widths;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut in_ch = 3;
        let mut backbone = Vec::with_capacity(4);
        for (i, &out) in w.stages.iter().enumerate() {
            backbone.push(Conv::init(in_ch, out, 3, stage_spec(i), &mut rng));
            in_ch = out;
        }
        let context_head = Conv::init(in_ch, w.context, 3, dilated_spec(), &mut rng);
        let tem = cfg.flags.use_tem.then(|| {
            TemParams::init(
                TemDims {
                    in_channels: w.slf(),
                    qco_hidden: w.tem_qco_hidden,
                    qco_out: w.tem_qco_out,
                    key: w.tem_key,
                    out_channels: w.tem_out,
                },
                &mut rng,
            )
        });
        let ptfem = if cfg.flags.use_ptfem {
            let in_channels = if cfg.flags.use_tem { w.tem_out } else { w.slf() };
            let dims = PtfemDims {
                in_channels,
                qco_hidden: w.ptfem_qco_hidden,
                qco_out: w.ptfem_qco_out,
                desc_hidden: w.ptfem_desc_hidden,
                desc_out: w.ptfem_desc_out,
            };
            Some(PtfemParams::init(dims, &cfg.scales, &mut rng)?)
        } else {
            None
        };
        let fuse_in = fuse_channels(w, cfg.flags, cfg.scales.len());
        Ok(Self {
            backbone,
            context_head,
            tem,
            ptfem,
            fuse_head: Linear::init(fuse_in, num_classes, &mut rng),
            aux_head: Linear::init(w.stages[2], num_classes, &mut rng),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.fuse_head.out_dim()
    }
}

/// Backbone products at output stride 8.
#[derive(Debug, Clone, Copy)]
pub struct BackboneVars {
    /// Stage-1 and stage-2 features average-pooled to stride 8 and concatenated.
    pub slf: Var,
    pub stage3: Var,
    pub context: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StlnetVars {
    /// `[K × H × W]`
    pub logits: Var,
    /// `[K × H × W]`, upsampled from stage 3.
    pub aux_logits: Var,
}

/// Forward-pass settings taken from a [`TrainConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOpts {
    pub flags: Flags,
    pub n_levels_1d: usize,
    pub n_levels_2d: usize,
}

impl From<&TrainConfig> for ForwardOpts {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            flags: cfg.flags,
            n_levels_1d: cfg.n_levels_1d,
            n_levels_2d: cfg.n_levels_2d,
        }
    }
}

impl Graph {
    pub fn backbone_forward(&mut self, img: Var, params: &StlnetParams<Var>) -> Result<BackboneVars> {
        let (_, h, w) = self.value(img).dims3("backbone_forward")?;
        if h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {h}x{w} is not a positive multiple of {OUTPUT_STRIDE}"
            )));
        }
        if params.backbone.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "backbone needs 4 stages, got {}",
                params.backbone.len()
            )));
        }
        let mut stages = Vec::with_capacity(4);
        let mut x = img;
        for conv in &params.backbone {
            let y = conv.forward(self, x)?;
            x = self.relu(y);
            stages.push(x);
        }
        let ctx = params.context_head.forward(self, stages[3])?;
        let context = self.relu(ctx);
        let s1 = self.avg_pool(stages[0], 4)?;
        let s2 = self.avg_pool(stages[1], 2)?;
        let slf = self.concat(&[s1, s2], 0)?;
        Ok(BackboneVars {
            slf,
            stage3: stages[2],
            context,
        })
    }

    pub fn stlnet_forward(
        &mut self,
        img: Var,
        params: &StlnetParams<Var>,
        opts: ForwardOpts,
    ) -> Result<StlnetVars> {
        let flags = opts.flags;
        if flags.use_tem != params.tem.is_some() || flags.use_ptfem != params.ptfem.is_some() {
            return Err(Error::InvalidArgument(format!(
                "flags {} do not match the parameter set (tem: {}, ptfem: {})",
                flags.label(),
                params.tem.is_some(),
                params.ptfem.is_some()
            )));
        }
        let (_, h, w) = self.value(img).dims3("stlnet_forward")?;
        let bb = self.backbone_forward(img, params)?;
        let mut parts = vec![bb.context];
        let mut texture_in = bb.slf;
        if let Some(tem) = &params.tem {
            let out = self.tem_forward(bb.slf, opts.n_levels_1d, tem, flags.use_graph)?;
            parts.push(out.output);
            texture_in = out.output;
        }
        if let Some(ptfem) = &params.ptfem {
            parts.push(self.ptfem_forward(texture_in, opts.n_levels_2d, ptfem)?);
        }
        if flags.use_slf {
            parts.push(bb.slf);
        }
        let fused = self.concat(&parts, 0)?;
        let channels = self.shape(fused)[0];
        let expected = self.shape(params.fuse_head.weight)[1];
        if channels != expected {
            return Err(Error::shape("fuse_head", &[expected], &[channels]));
        }
        let coarse = pointwise(self, &params.fuse_head, fused)?;
        let logits = self.nearest_upsample(coarse, h, w)?;
        let aux = pointwise(self, &params.aux_head, bb.stage3)?;
        let aux_logits = self.nearest_upsample(aux, h, w)?;
        Ok(StlnetVars { logits, aux_logits })
    }
}

/// `(slf, stage3, context)` of one image.
pub fn backbone_forward(img: &Tensor, params: &StlnetParams) -> Result<(Tensor, Tensor, Tensor)> {
    let mut g = Graph::new();
    let x = g.constant(img.clone());
    let p = bind_constants(params, &mut g);
    let b = g.backbone_forward(x, &p)?;
    Ok((g.value(b.slf).clone(), g.value(b.stage3).clone(), g.value(b.context).clone()))
}

/// `(logits, aux_logits)` of one image, both `[K × H × W]`.
pub fn stlnet_forward(img: &Tensor, params: &StlnetParams, opts: ForwardOpts) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let x = g.constant(img.clone());
    let p = bind_constants(params, &mut g);
    let out = g.stlnet_forward(x, &p, opts)?;
    Ok((g.value(out.logits).clone(), g.value(out.aux_logits).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{named_tensors, replace_tensors};

    fn small_cfg(flags: Flags) -> TrainConfig {
        TrainConfig {
            flags,
            n_levels_1d: 8,
            n_levels_2d: 4,
            scales: vec![1, 2],
            ..TrainConfig::default()
        }
    }

    fn image(seed: u64) -> Tensor {
        Tensor::from_fn(&[3, 32, 32], |i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 97.0)
    }

    #[test]
    fn zero_image_zero_params_gives_zero_features() {
        let cfg = small_cfg(Flags::BASELINE);
        let p = StlnetParams::init(3, &cfg).unwrap();
        let zeros: Vec<Tensor> = named_tensors(&p).iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let p = replace_tensors(&p, zeros).unwrap();
        let (slf, s3, ctx) = backbone_forward(&Tensor::zeros(&[3, 32, 32]), &p).unwrap();
        assert_eq!(slf.shape(), &[24, 4, 4]);
        assert_eq!(s3.shape(), &[32, 4, 4]);
        assert_eq!(ctx.shape(), &[32, 4, 4]);
        for t in [slf, s3, ctx] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_sizes_not_divisible_by_eight() {
        let p = StlnetParams::init(3, &small_cfg(Flags::BASELINE)).unwrap();
        assert!(backbone_forward(&Tensor::zeros(&[3, 20, 32]), &p).is_err());
    }

    #[test]
    fn full_model_channel_arithmetic() {
        let cfg = small_cfg(Flags::FULL);
        let w = &cfg.widths;
        assert_eq!(fuse_channels(w, cfg.flags, 2), 32 + 16 + 2 * 8 + 24);
        let p = StlnetParams::init(3, &cfg).unwrap();
        assert_eq!(p.fuse_head.in_dim(), 88);
        let (logits, aux) = stlnet_forward(&image(1), &p, (&cfg).into()).unwrap();
        assert_eq!(logits.shape(), &[3, 32, 32]);
        assert_eq!(aux.shape(), &[3, 32, 32]);
    }

    #[test]
    fn every_flag_combination_runs() {
        for bits in 0..16u8 {
            let flags = Flags {
                use_slf: bits & 1 != 0,
                use_tem: bits & 2 != 0,
                use_ptfem: bits & 4 != 0,
                use_graph: bits & 8 != 0,
            };
            let cfg = small_cfg(flags);
            let p = StlnetParams::init(2, &cfg).unwrap();
            let (logits, _) = stlnet_forward(&image(2), &p, (&cfg).into()).unwrap();
            assert!(logits.all_finite(), "{}", flags.label());
        }
    }

    #[test]
    fn mismatched_flags_rejected() {
        let cfg = small_cfg(Flags::FULL);
        let p = StlnetParams::init(3, &cfg).unwrap();
        let opts = ForwardOpts::from(&small_cfg(Flags::BASELINE));
        assert!(stlnet_forward(&image(0), &p, opts).is_err());
    }

    #[test]
    fn forward_is_reproducible() {
        let cfg = small_cfg(Flags::FULL);
        let a = stlnet_forward(&image(3), &StlnetParams::init(3, &cfg).unwrap(), (&cfg).into()).unwrap();
        let b = stlnet_forward(&image(3), &StlnetParams::init(3, &cfg).unwrap(), (&cfg).into()).unwrap();
        assert_eq!(a.0.data(), b.0.data());
    }

    #[test]
    fn graph_flag_changes_logits() {
        let on = small_cfg(Flags::FULL);
        let off = small_cfg(Flags { use_graph: false, ..Flags::FULL });
        let p = StlnetParams::init(3, &on).unwrap();
        let a = stlnet_forward(&image(4), &p, (&on).into()).unwrap().0;
        let b = stlnet_forward(&image(4), &p, (&off).into()).unwrap().0;
        assert_ne!(a.data(), b.data());
    }
}
