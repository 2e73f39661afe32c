use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    pub use_slf: bool,
    pub use_tem: bool,
    pub use_ptfem: bool,
    pub use_graph: bool,
}

impl Flags {
    pub const BASELINE: Flags = Flags {
        use_slf: false,
        use_tem: false,
        use_ptfem: false,
        use_graph: true,
    };
    pub const FULL: Flags = Flags {
        use_slf: true,
        use_tem: true,
        use_ptfem: true,
        use_graph: true,
    };

    /// Short label such as `slf+tem+ptfem`, `baseline` when all branches are off.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_slf {
            parts.push("slf");
        }
        if self.use_tem {
            parts.push(if self.use_graph { "tem" } else { "tem(no-graph)" });
        }
        if self.use_ptfem {
            parts.push("ptfem");
        }
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}

impl Default for Flags {
    fn default() -> Self {
        Flags::FULL
    }
}

/// Channel widths of the default network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Widths {
    /// Output channels of the four backbone stages.
    pub stages: [usize; 4],
    pub context: usize,
    pub tem_qco_hidden: usize,
    pub tem_qco_out: usize,
    pub tem_key: usize,
    /// `C2`
    pub tem_out: usize,
    pub ptfem_qco_hidden: usize,
    pub ptfem_qco_out: usize,
    pub ptfem_desc_hidden: usize,
    /// `C'` per pyramid branch.
    pub ptfem_desc_out: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            stages: [8, 16, 32, 32],
            context: 32,
            tem_qco_hidden: 16,
            tem_qco_out: 16,
            tem_key: 16,
            tem_out: 16,
            ptfem_qco_hidden: 16,
            ptfem_qco_out: 8,
            ptfem_desc_hidden: 16,
            ptfem_desc_out: 8,
        }
    }
}

impl Widths {
    /// Channels of the shallow-layer features (stage 1 ++ stage 2).
    pub fn slf(&self) -> usize {
        self.stages[0] + self.stages[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    /// Poly schedule exponent.
    pub lr_power: f64,
    pub iters: usize,
    pub batch: usize,
    pub n_levels_1d: usize,
    pub n_levels_2d: usize,
    /// Weight of the auxiliary loss.
    pub alpha: f64,
    pub ohem_theta: f64,
    pub ohem_min_keep: usize,
    pub scales: Vec<usize>,
    pub flags: Flags,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Validation mIoU is logged every this many iterations and after the last one; 0 logs only the last.
    pub eval_every: usize,
    pub widths: Widths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 0.01,
            lr_power: 0.9,
            iters: 300,
            batch: 4,
            n_levels_1d: 128,
            n_levels_2d: 8,
            alpha: 0.4,
            ohem_theta: 0.7,
            ohem_min_keep: 64,
            scales: vec![1, 2, 4],
            flags: Flags::FULL,
            momentum: 0.0,
            weight_decay: 0.0,
            eval_every: 50,
            widths: Widths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.lr_power.is_finite() && self.lr_power >= 0.0) {
            return bad(format!("lr_power must be >= 0, got {}", self.lr_power));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.ohem_theta > 0.0 && self.ohem_theta < 1.0) {
            return bad(format!("ohem_theta must be in (0, 1), got {}", self.ohem_theta));
        }
        if self.ohem_min_keep == 0 {
            return bad("ohem_min_keep must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.n_levels_1d == 0 || self.n_levels_2d == 0 {
            return bad("quantization level counts must be >= 1".into());
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad(format!("scales must be nonempty and positive, got {:?}", self.scales));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        let w = &self.widths;
        if w.stages.contains(&0) || w.context == 0 || w.tem_out == 0 || w.ptfem_desc_out == 0 {
            return bad("channel widths must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = TrainConfig::from_json(r#"{"iters": 7, "flags": {"use_slf": true, "use_tem": false, "use_ptfem": false, "use_graph": true}}"#).unwrap();
        assert_eq!(cfg.iters, 7);
        assert!(!cfg.flags.use_tem);
        assert_eq!(cfg.alpha, 0.4);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(TrainConfig::from_json(r#"{"iterations": 7}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"widths": {"stage": 1}}"#).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let mut cfg = TrainConfig { alpha: -0.1, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.0;
        cfg.validate().unwrap();
        for theta in [0.0, 1.0, f64::NAN] {
            let c = TrainConfig { ohem_theta: theta, ..TrainConfig::default() };
            assert!(c.validate().is_err());
        }
        let c = TrainConfig { ohem_min_keep: 0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn flag_labels() {
        assert_eq!(Flags::BASELINE.label(), "baseline");
        assert_eq!(Flags::FULL.label(), "slf+tem+ptfem");
        let f = Flags { use_graph: false, ..Flags::FULL };
        assert_eq!(f.label(), "slf+tem(no-graph)+ptfem");
    }
}
