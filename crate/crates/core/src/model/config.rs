use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub out_channels: usize,
    pub stride: usize,
}

/// Shape of the network. The default is the full-size plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub joints: usize,
    pub bodies: usize,
    pub embed_channels: usize,
    pub blocks: Vec<BlockConfig>,
    pub temporal_kernel: usize,
    pub stcn_kernel: [usize; 2],
    pub hops: usize,
    pub classes: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 25,
            bodies: 2,
            embed_channels: 64,
            blocks: vec![
                BlockConfig {
                    out_channels: 96,
                    stride: 1,
                },
                BlockConfig {
                    out_channels: 144,
                    stride: 2,
                },
                BlockConfig {
                    out_channels: 192,
                    stride: 2,
                },
            ],
            temporal_kernel: 9,
            stcn_kernel: [3, 3],
            hops: 3,
            classes: 2,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// A narrow variant for quick CPU runs.
    pub fn desk() -> Self {
        ModelConfig {
            bodies: 1,
            embed_channels: 8,
            blocks: vec![
                BlockConfig {
                    out_channels: 8,
                    stride: 1,
                },
                BlockConfig {
                    out_channels: 12,
                    stride: 2,
                },
                BlockConfig {
                    out_channels: 16,
                    stride: 2,
                },
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.joints == 0 || self.bodies == 0 || self.embed_channels == 0 || self.classes < 2 {
            return bad("joints, bodies and embed_channels must be positive, classes ≥ 2".into());
        }
        if self.blocks.len() != 3 {
            return bad(format!("exactly 3 basic blocks required, got {}", self.blocks.len()));
        }
        if self.blocks.iter().any(|b| b.out_channels == 0 || b.stride == 0) {
            return bad("block widths and strides must be positive".into());
        }
        if self.temporal_kernel % 2 == 0 {
            return bad(format!("temporal kernel must be odd, got {}", self.temporal_kernel));
        }
        if self.stcn_kernel.iter().any(|k| k % 2 == 0) {
            return bad(format!("STCN kernel must be odd, got {:?}", self.stcn_kernel));
        }
        if self.hops == 0 {
            return bad("hop limit must be ≥ 1".into());
        }
        Ok(())
    }
}
