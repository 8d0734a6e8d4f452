//! Named embedding architectures.
//!
//! `paper` on a 1x155x220 input:
//!
//! | layer                         | output          |
//! |-------------------------------|-----------------|
//! | conv 96 @ 11x11 s1 + ReLU     | 96 x 145 x 210  |
//! | LRN, max-pool 3x3 s2          | 96 x 72 x 104   |
//! | conv 256 @ 5x5 s1 + ReLU      | 256 x 68 x 100  |
//! | LRN, max-pool 3x3 s2, drop 0.3| 256 x 33 x 49   |
//! | conv 384 @ 3x3 s1 + ReLU      | 384 x 31 x 47   |
//! | conv 256 @ 3x3 s1 + ReLU      | 256 x 29 x 45   |
//! | max-pool 3x3 s2, drop 0.3     | 256 x 14 x 22   |
//! | flatten                       | 78848           |
//! | dense 1024 + ReLU, drop 0.5   | 1024            |
//! | dense 128                     | 128             |
//!
//! `tiny` on 1x32x44 is a desk-scale stand-in:
//! conv 8 @ 3x3 → pool → conv 16 @ 3x3 → pool → dense 64 → dense 16.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Tiny,
}

pub const LRN_DEFAULT: LayerSpec = LayerSpec::Lrn { k: 2.0, n: 5, alpha: 1e-4, beta: 0.75 };

const POOL: LayerSpec = LayerSpec::MaxPool { kh: 3, kw: 3, stride: 2 };

impl Preset {
    /// Per-sample input shape `[C, H, W]`.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Preset::Paper => [1, 155, 220],
            Preset::Tiny => [1, 32, 44],
        }
    }

    pub fn embedding_dim(self) -> usize {
        match self {
            Preset::Paper => 128,
            Preset::Tiny => 16,
        }
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        use LayerSpec::*;
        match self {
            Preset::Paper => vec![
                Conv { out_ch: 96, kh: 11, kw: 11, stride: 1 },
                Relu,
                LRN_DEFAULT,
                POOL,
                Conv { out_ch: 256, kh: 5, kw: 5, stride: 1 },
                Relu,
                LRN_DEFAULT,
                POOL,
                Dropout { rate: 0.3 },
                Conv { out_ch: 384, kh: 3, kw: 3, stride: 1 },
                Relu,
                Conv { out_ch: 256, kh: 3, kw: 3, stride: 1 },
                Relu,
                POOL,
                Dropout { rate: 0.3 },
                Flatten,
                Dense { out: 1024 },
                Relu,
                Dropout { rate: 0.5 },
                Dense { out: 128 },
            ],
            Preset::Tiny => vec![
                Conv { out_ch: 8, kh: 3, kw: 3, stride: 1 },
                Relu,
                POOL,
                Conv { out_ch: 16, kh: 3, kw: 3, stride: 1 },
                Relu,
                POOL,
                Flatten,
                Dense { out: 64 },
                Relu,
                Dense { out: 16 },
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Tiny => "tiny",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            other => Err(NnError::Config(format!("unknown preset {other:?} (expected paper or tiny)"))),
        }
    }
}
