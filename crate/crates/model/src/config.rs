use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backup {
    /// `Σ xᵢ·softmax(x/τ)ᵢ`.
    Softmax,
    /// `max x`.
    Hardmax,
}

/// Where latent states are projected onto the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    /// Encoder output and every transition output are normalized when created,
    /// so all heads see unit vectors.
    AtCreation,
    /// Only the input of each transition is normalized.
    BeforeTransition,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub backup: Backup,
    pub temperature: f64,
    pub norm: NormPlacement,
}

impl TreeConfig {
    pub fn new(depth: usize) -> Self {
        TreeConfig {
            depth,
            ..TreeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=3).contains(&self.depth) {
            return Err(format!("tree depth must be 1, 2 or 3, got {}", self.depth));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.temperature > 0.0) {
            return Err(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        Ok(())
    }
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            depth: 1,
            lambda: 0.8,
            gamma: 0.99,
            backup: Backup::Softmax,
            temperature: 1.0,
            norm: NormPlacement::AtCreation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Layer sizes shared by all architectures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub convs: Vec<ConvSpec>,
    /// Embedding width `k`.
    pub embed: usize,
    /// Hidden width `m` of the reward head.
    pub reward_hidden: usize,
    pub actions: usize,
}

impl ModelDims {
    /// conv-3x3-1-24, conv-3x3-1-24, conv-4x4-1-48, fc-128 on 5×8×8 inputs.
    pub fn boxworld() -> Self {
        let conv = |out_channels, kernel| ConvSpec {
            out_channels,
            kernel,
            stride: 1,
        };
        ModelDims {
            in_channels: 5,
            height: 8,
            width: 8,
            convs: vec![conv(24, 3), conv(24, 3), conv(48, 4)],
            embed: 128,
            reward_hidden: 64,
            actions: 4,
        }
    }

    /// Tiny network for exhaustive finite-difference checks.
    pub fn small() -> Self {
        ModelDims {
            in_channels: 2,
            height: 5,
            width: 5,
            convs: vec![
                ConvSpec {
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                },
                ConvSpec {
                    out_channels: 2,
                    kernel: 2,
                    stride: 1,
                },
            ],
            embed: 6,
            reward_hidden: 5,
            actions: 4,
        }
    }

    pub fn obs_shape(&self) -> [usize; 3] {
        [self.in_channels, self.height, self.width]
    }

    /// `(channels, height, width)` after each conv layer.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (self.in_channels, self.height, self.width);
        self.convs
            .iter()
            .map(|s| {
                h = (h - s.kernel) / s.stride + 1;
                w = (w - s.kernel) / s.stride + 1;
                c = s.out_channels;
                (c, h, w)
            })
            .collect()
    }

    pub fn flat_features(&self) -> usize {
        let (c, h, w) = self.conv_shapes().last().copied().unwrap_or((
            self.in_channels,
            self.height,
            self.width,
        ));
        c * h * w
    }
}
