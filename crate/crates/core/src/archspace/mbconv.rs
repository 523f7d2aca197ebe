//! Resource accounting for the MobileNetV2-style CNN space (BigNAS layout).
//!
//! Only the closed-form parameter and multiply-accumulate counts live here;
//! there is no CNN forward pass. Batch-norm layers contribute a scale and a
//! shift per channel.

use serde::{Deserialize, Serialize};

use super::{FactorRange, SpaceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageOp {
    /// Plain convolution + BN.
    Conv,
    /// Inverted bottleneck with the given expansion ratio.
    MbConv(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnStage {
    pub op: StageOp,
    pub channels: FactorRange,
    pub layers: FactorRange,
    pub kernels: Vec<usize>,
    /// Stride of the first layer of the stage.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnSpaceSpec {
    pub resolution: FactorRange,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Stem, seven MBConv stages, final 1x1 conv, in order.
    pub stages: Vec<CnnStage>,
}

/// One concrete CNN: input resolution plus per-stage width, depth and kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArch {
    pub resolution: usize,
    pub stages: Vec<CnnStageConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnStageConfig {
    pub channels: usize,
    /// Kernel size of each layer; its length is the stage depth.
    pub kernels: Vec<usize>,
}

impl CnnSpaceSpec {
    /// The MobileNetV2-based space: stem, MBConv1, six MBConv6 stages, head conv.
    pub fn mobilenet_v2() -> Self {
        let r = |lo: f64, hi: f64, step: f64| FactorRange::new(lo, hi, step).expect("preset");
        let stage = |op, ch: (f64, f64), layers: (f64, f64), kernels: Vec<usize>, stride| CnnStage {
            op,
            channels: r(ch.0, ch.1, 8.0),
            layers: r(layers.0, layers.1, 1.0),
            kernels,
            stride,
        };
        Self {
            resolution: r(192.0, 320.0, 32.0),
            in_channels: 3,
            num_classes: 1000,
            stages: vec![
                stage(StageOp::Conv, (32.0, 40.0), (1.0, 1.0), vec![3], 2),
                stage(StageOp::MbConv(1), (16.0, 24.0), (1.0, 2.0), vec![3], 1),
                stage(StageOp::MbConv(6), (24.0, 32.0), (2.0, 3.0), vec![3], 2),
                stage(StageOp::MbConv(6), (40.0, 48.0), (2.0, 3.0), vec![3, 5], 2),
                stage(StageOp::MbConv(6), (80.0, 88.0), (2.0, 4.0), vec![3, 5], 2),
                stage(StageOp::MbConv(6), (112.0, 128.0), (2.0, 6.0), vec![3, 5], 1),
                stage(StageOp::MbConv(6), (192.0, 216.0), (2.0, 6.0), vec![3, 5], 2),
                stage(StageOp::MbConv(6), (320.0, 352.0), (1.0, 2.0), vec![3, 5], 1),
                stage(StageOp::Conv, (1280.0, 1408.0), (1.0, 1.0), vec![1], 1),
            ],
        }
    }

    pub fn validate_arch(&self, arch: &CnnArch) -> Result<(), SpaceError> {
        let bad = |m: String| Err(SpaceError::InvalidArch(m));
        if !self.resolution.contains(arch.resolution as f64) {
            return bad(format!("resolution {} is outside the space", arch.resolution));
        }
        if arch.stages.len() != self.stages.len() {
            return bad(format!("expected {} stages, got {}", self.stages.len(), arch.stages.len()));
        }
        for (i, (s, c)) in self.stages.iter().zip(&arch.stages).enumerate() {
            if !s.channels.contains(c.channels as f64) {
                return bad(format!("stage {i}: {} channels is outside the space", c.channels));
            }
            if !s.layers.contains(c.kernels.len() as f64) {
                return bad(format!("stage {i}: {} layers is outside the space", c.kernels.len()));
            }
            if let Some(k) = c.kernels.iter().find(|k| !s.kernels.contains(k)) {
                return bad(format!("stage {i}: kernel {k} is not offered"));
            }
        }
        Ok(())
    }

    pub fn minimal(&self) -> CnnArch {
        self.extreme(false)
    }

    pub fn maximal(&self) -> CnnArch {
        self.extreme(true)
    }

    fn extreme(&self, max: bool) -> CnnArch {
        let pick = |r: &FactorRange| if max { r.hi() } else { r.lo() }.round() as usize;
        CnnArch {
            resolution: pick(&self.resolution),
            stages: self
                .stages
                .iter()
                .map(|s| {
                    let k =
                        if max { *s.kernels.iter().max().unwrap() } else { *s.kernels.iter().min().unwrap() };
                    CnnStageConfig { channels: pick(&s.channels), kernels: vec![k; pick(&s.layers)] }
                })
                .collect(),
        }
    }

    /// `(params, macs)` of a CNN architecture.
    pub fn resources(&self, arch: &CnnArch) -> Result<(u64, u64), SpaceError> {
        self.validate_arch(arch)?;
        let mut params = 0u64;
        let mut macs = 0u64;
        let mut cin = self.in_channels as u64;
        let mut side = arch.resolution as u64;
        for (stage, cfg) in self.stages.iter().zip(&arch.stages) {
            let cout = cfg.channels as u64;
            for (layer, &k) in cfg.kernels.iter().enumerate() {
                let k = k as u64;
                let stride = if layer == 0 { stage.stride as u64 } else { 1 };
                let out_side = side.div_ceil(stride);
                let pixels = out_side * out_side;
                match stage.op {
                    StageOp::Conv => {
                        params += k * k * cin * cout + 2 * cout;
                        macs += k * k * cin * cout * pixels;
                    }
                    StageOp::MbConv(expand) => {
                        let mid = cin * expand as u64;
                        if expand != 1 {
                            params += cin * mid + 2 * mid;
                            macs += cin * mid * side * side;
                        }
                        params += k * k * mid + 2 * mid;
                        macs += k * k * mid * pixels;
                        params += mid * cout + 2 * cout;
                        macs += mid * cout * pixels;
                    }
                }
                cin = cout;
                side = out_side;
            }
        }
        let classes = self.num_classes as u64;
        params += cin * classes + classes;
        macs += cin * classes;
        Ok((params, macs))
    }
}
