//! Pyramid texture features: per-region co-occurrence statistics summarized
//! by a learned descriptor, computed on several grid scales and fused.

use std::ops::Range;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{bind_constants, join, Mlp, ParamTree};
use crate::tensor::Tensor;

pub const DEFAULT_SCALES: [usize; 4] = [1, 2, 4, 8];

/// One pyramid branch; its MLPs are shared by every region of the branch.
#[derive(Debug, Clone, PartialEq)]
pub struct PtfemBranch<T = Tensor> {
    /// Lifts the `[N² × 3]` co-occurrence counting rows.
    pub qco_mlp: Mlp<T>,
    /// Maps each statistical-feature cell to the texture descriptor.
    pub descriptor: Mlp<T>,
}

impl<T> ParamTree for PtfemBranch<T> {
    type Elem = T;
    type Mapped<U> = PtfemBranch<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> PtfemBranch<U> {
        PtfemBranch {
            qco_mlp: self.qco_mlp.map_named(&join(prefix, "qco_mlp"), f),
            descriptor: self.descriptor.map_named(&join(prefix, "descriptor"), f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PtfemParams<T = Tensor> {
    /// One branch per entry of `scales`.
    pub branches: Vec<PtfemBranch<T>>,
    pub scales: Vec<usize>,
}

impl<T> ParamTree for PtfemParams<T> {
    type Elem = T;
    type Mapped<U> = PtfemParams<U>;

    fn map_named<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> PtfemParams<U> {
        PtfemParams {
            branches: self.branches.map_named(&join(prefix, "branches"), f),
            scales: self.scales.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PtfemDims {
    pub in_channels: usize,
    pub qco_hidden: usize,
    pub qco_out: usize,
    pub desc_hidden: usize,
    /// `C'`, channels contributed by each branch.
    pub desc_out: usize,
}

impl PtfemParams<Tensor> {
    pub fn init(dims: PtfemDims, scales: &[usize], rng: &mut impl Rng) -> Result<Self> {
        validate_scales(scales)?;
        let stat_width = dims.qco_out + dims.in_channels;
        let branches = scales
            .iter()
            .map(|_| PtfemBranch {
                qco_mlp: Mlp::init(3, dims.qco_hidden, dims.qco_out, rng),
                descriptor: Mlp::init(stat_width, dims.desc_hidden, dims.desc_out, rng),
            })
            .collect();
        Ok(Self {
            branches,
            scales: scales.to_vec(),
        })
    }

    pub fn branch_channels(&self) -> usize {
        self.branches.first().map_or(0, |b| b.descriptor.out_dim())
    }

    pub fn out_channels(&self) -> usize {
        self.scales.len() * self.branch_channels()
    }
}

fn validate_scales(scales: &[usize]) -> Result<()> {
    if scales.is_empty() || scales.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "pyramid scales must be nonempty and positive, got {scales:?}"
        )));
    }
    Ok(())
}

/// Split `0..len` into `parts` runs of `len / parts`; the last run takes the remainder.
pub fn partition(len: usize, parts: usize) -> Result<Vec<Range<usize>>> {
    if parts == 0 || len < parts {
        return Err(Error::InvalidArgument(format!(
            "cannot split {len} into {parts} regions"
        )));
    }
    let step = len / parts;
    Ok((0..parts)
        .map(|i| {
            let end = if i + 1 == parts { len } else { (i + 1) * step };
            i * step..end
        })
        .collect())
}

/// Brute-force normalized horizontal co-occurrence matrix of an integer image.
pub fn glcm_oracle(img: &Tensor, n_levels: usize) -> Result<Tensor> {
    let (h, w) = img.dims2("glcm_oracle")?;
    let mut levels = Vec::with_capacity(img.numel());
    for (i, &v) in img.data().iter().enumerate() {
        if v.fract() != 0.0 || v < 0.0 || v >= n_levels as f64 {
            return Err(Error::InvalidArgument(format!(
                "gray value {v} at {i} outside 0..{n_levels}"
            )));
        }
        levels.push(v as usize);
    }
    let mut tally = vec![0u64; n_levels * n_levels];
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            tally[levels[y * w + x] * n_levels + levels[y * w + x + 1]] += 1;
        }
    }
    let total: u64 = tally.iter().sum();
    let data = tally
        .iter()
        .map(|&t| if total == 0 { 0.0 } else { t as f64 / total as f64 })
        .collect();
    Tensor::new(vec![n_levels, n_levels], data)
}

impl Graph {
    /// Texture descriptor `[C']` of one region: mean over level-pair cells of the descriptor MLP.
    pub fn texture_unit(&mut self, region: Var, n_levels: usize, branch: &PtfemBranch<Var>) -> Result<Var> {
        let q = self.qco2d(region, n_levels, &branch.qco_mlp)?;
        let lifted = branch.descriptor.forward(self, q.statfeat_rows)?;
        self.mean_rows(lifted)
    }

    /// One branch: `[C' × H × W]`, piecewise constant over the `scale × scale` partition.
    pub fn ptfem_branch(&mut self, a: Var, scale: usize, n_levels: usize, branch: &PtfemBranch<Var>) -> Result<Var> {
        let (_, h, w) = self.value(a).dims3("ptfem")?;
        let rows = partition(h, scale)?;
        let cols = partition(w, scale)?;
        if cols.iter().any(|c| c.len() < 2) {
            return Err(Error::RegionTooSmall {
                op: "ptfem",
                height: h / scale,
                width: w / scale,
            });
        }
        let mut units = Vec::with_capacity(scale * scale);
        for r in &rows {
            for c in &cols {
                let region = self.crop(a, r.clone(), c.clone())?;
                let t = self.texture_unit(region, n_levels, branch)?;
                let width = self.shape(t)[0];
                units.push(self.reshape(t, &[1, width])?);
            }
        }
        let stacked = self.concat(&units, 0)?;
        let channels = self.shape(stacked)[1];
        let grid = self.transpose(stacked)?;
        let grid = self.reshape(grid, &[channels, scale, scale])?;
        self.region_broadcast(grid, &rows, &cols)
    }

    /// All branches concatenated channel-wise: `[len(scales)·C' × H × W]`.
    pub fn ptfem_forward(&mut self, a: Var, n_levels: usize, params: &PtfemParams<Var>) -> Result<Var> {
        validate_scales(&params.scales)?;
        if params.branches.len() != params.scales.len() {
            return Err(Error::InvalidArgument(format!(
                "{} branches for {} scales",
                params.branches.len(),
                params.scales.len()
            )));
        }
        let maps = params
            .scales
            .iter()
            .zip(&params.branches)
            .map(|(&s, b)| self.ptfem_branch(a, s, n_levels, b))
            .collect::<Result<Vec<_>>>()?;
        self.concat(&maps, 0)
    }
}

pub fn texture_unit(region: &Tensor, n_levels: usize, branch: &PtfemBranch) -> Result<Tensor> {
    let mut g = Graph::new();
    let r = g.constant(region.clone());
    let b = bind_constants(branch, &mut g);
    let t = g.texture_unit(r, n_levels, &b)?;
    Ok(g.value(t).clone())
}

/// Per-branch maps, in `params.scales` order.
pub fn ptfem_branches(a: &Tensor, n_levels: usize, params: &PtfemParams) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let p = bind_constants(params, &mut g);
    p.scales
        .iter()
        .zip(&p.branches)
        .map(|(&s, b)| g.ptfem_branch(av, s, n_levels, b).map(|v| g.value(v).clone()))
        .collect()
}

pub fn ptfem_forward(a: &Tensor, n_levels: usize, params: &PtfemParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let p = bind_constants(params, &mut g);
    let out = g.ptfem_forward(av, n_levels, &p)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> PtfemDims {
        PtfemDims {
            in_channels: 2,
            qco_hidden: 4,
            qco_out: 3,
            desc_hidden: 4,
            desc_out: 3,
        }
    }

    #[test]
    fn glcm_examples() {
        let img = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(glcm_oracle(&img, 2).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
        let img = Tensor::full(&[3, 3], 2.0);
        let m = glcm_oracle(&img, 3).unwrap();
        assert_eq!(m.at(&[2, 2]), 1.0);
        assert_eq!(m.sum(), 1.0);
        let img = Tensor::new(vec![2, 3], vec![0., 0., 1., 1., 1., 1.]).unwrap();
        assert_eq!(glcm_oracle(&img, 2).unwrap().data(), &[0.25, 0.25, 0.0, 0.5]);
        assert!(glcm_oracle(&Tensor::full(&[1, 2], 2.0), 2).is_err());
        assert!(glcm_oracle(&Tensor::full(&[1, 2], 0.5), 2).is_err());
    }

    #[test]
    fn partition_absorbs_remainder() {
        assert_eq!(partition(8, 4).unwrap(), vec![0..2, 2..4, 4..6, 6..8]);
        assert_eq!(partition(7, 2).unwrap(), vec![0..3, 3..7]);
        assert!(partition(3, 4).is_err());
    }

    #[test]
    fn constant_descriptor_gives_constant_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PtfemParams::init(dims(), &[1], &mut rng).unwrap();
        let c = Tensor::from_vec(vec![0.5, -1.5, 2.0]);
        p.branches[0].descriptor.second = Linear::new(Tensor::zeros(&[3, 4]), c.clone()).unwrap();
        let region = Tensor::from_fn(&[2, 4, 4], |i| (i as f64 * 0.9).sin());
        let t = texture_unit(&region, 3, &p.branches[0]).unwrap();
        assert_eq!(t.data(), c.data());
    }

    #[test]
    fn texture_unit_hand_trace() {
        // C=1 region [1, 1, -1] with zero 2-d MLP: F rows are [0, 0, g] per cell,
        // descriptor = identity-ish linear so T is the mean of F'.
        let branch = PtfemBranch {
            qco_mlp: Mlp::zeros(3, 2, 2),
            descriptor: Mlp::new(Linear::identity(3), Linear::identity(3)).unwrap(),
        };
        let region = Tensor::new(vec![1, 1, 3], vec![1.0, 1.0, -1.0]).unwrap();
        let t = texture_unit(&region, 2, &branch).unwrap();
        let g = 1.0 / 3.0;
        assert_eq!(t.shape(), &[3]);
        assert!((t.data()[2] - g).abs() < 1e-15);
        assert_eq!(&t.data()[..2], &[0.0, 0.0]);
    }

    #[test]
    fn single_scale_broadcasts_whole_map_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PtfemParams::init(dims(), &[1], &mut rng).unwrap();
        let a = Tensor::from_fn(&[2, 4, 6], |i| ((i * 5) as f64).cos());
        let out = ptfem_forward(&a, 3, &p).unwrap();
        let unit = texture_unit(&a, 3, &p.branches[0]).unwrap();
        assert_eq!(out.shape(), &[3, 4, 6]);
        for c in 0..3 {
            assert!(out.data()[c * 24..(c + 1) * 24].iter().all(|&v| v == unit.data()[c]));
        }
    }

    #[test]
    fn output_channels_and_region_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PtfemParams::init(dims(), &[1, 2, 4], &mut rng).unwrap();
        assert_eq!(p.out_channels(), 9);
        let a = Tensor::from_fn(&[2, 8, 8], |i| ((i * 3) as f64).sin());
        assert_eq!(ptfem_forward(&a, 3, &p).unwrap().shape(), &[9, 8, 8]);
        let small = Tensor::from_fn(&[2, 4, 4], |i| i as f64);
        assert!(matches!(
            ptfem_forward(&small, 3, &p),
            Err(Error::RegionTooSmall { .. })
        ));
        assert!(PtfemParams::init(dims(), &[], &mut rng).is_err());
    }
}
