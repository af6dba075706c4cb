//! Encoder-decoder network for lidar and radar feature grids.
//!
//! Encoder: five blocks of two conv-BN-ReLU layers, each followed by 2×2
//! average pooling (the fifth pooling only when `pool_last` is set).
//! Decoder: five blocks of three conv-BN-ReLU layers; the last `pools`
//! decoder blocks are preceded by 2× upsampling, so the output is back at
//! input resolution. The activation of encoder block 4 (before its pooling)
//! is concatenated onto the input of decoder block 2, which runs at the same
//! resolution. A 1×1 conv produces 3 classes × 5 horizons, followed by a
//! softmax over classes.

use serde::{Deserialize, Serialize};

use super::layers::{grouped_softmax, Conv, ConvBn, Init, Weights};
use super::ModelError;
use crate::grid::{NUM_CLASSES, NUM_HORIZONS};
use crate::tensor::{BnMode, Scalar, Tape, Var};

pub const OUT_CHANNELS: usize = NUM_CLASSES * NUM_HORIZONS;
const SKIP_SOURCE: usize = 3;
const SKIP_TARGET: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    /// Pool after the fifth encoder block as well (needs dims divisible by 32).
    pub pool_last: bool,
    pub seed: u64,
}

impl Default for GridNetConfig {
    fn default() -> Self {
        Self {
            in_channels: crate::featurize::LIDAR_INPUT_CHANNELS,
            base_width: 8,
            pool_last: false,
            seed: 0,
        }
    }
}

impl GridNetConfig {
    pub fn pools(&self) -> usize {
        if self.pool_last {
            5
        } else {
            4
        }
    }

    fn encoder_widths(&self) -> [usize; 5] {
        let b = self.base_width;
        [b, 2 * b, 4 * b, 4 * b, 4 * b]
    }

    fn decoder_widths(&self) -> [usize; 5] {
        let b = self.base_width;
        [4 * b, 4 * b, 4 * b, 2 * b, b]
    }

    pub fn check_dims(&self, rows: usize, cols: usize) -> Result<(), ModelError> {
        let div = 1 << self.pools();
        if !rows.is_multiple_of(div) || !cols.is_multiple_of(div) || rows == 0 || cols == 0 {
            return Err(ModelError::Config(format!("grid {rows}×{cols} is not divisible by {div}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridNet<T> {
    pub config: GridNetConfig,
    pub weights: Weights<T>,
    encoder: Vec<[ConvBn; 2]>,
    decoder: Vec<[ConvBn; 3]>,
    head: Conv,
    /// When set, the skip activation is replaced by zeros (liveness tests).
    pub(crate) ablate_skip: bool,
}

impl<T: Scalar> GridNet<T> {
    pub fn new(config: GridNetConfig) -> Result<Self, ModelError> {
        if config.in_channels == 0 || config.base_width == 0 {
            return Err(ModelError::Config("channel counts must be positive".into()));
        }
        let mut init = Init::new(config.seed);
        let mut w = Weights::new();
        let mut encoder = Vec::new();
        let mut ch = config.in_channels;
        let mut skip_ch = 0;
        for (i, &width) in config.encoder_widths().iter().enumerate() {
            let a = w.conv_bn(&mut init, &format!("enc{}.0", i + 1), width, ch);
            let b = w.conv_bn(&mut init, &format!("enc{}.1", i + 1), width, width);
            encoder.push([a, b]);
            ch = width;
            if i == SKIP_SOURCE {
                skip_ch = width;
            }
        }
        let mut decoder = Vec::new();
        for (i, &width) in config.decoder_widths().iter().enumerate() {
            let input = if i == SKIP_TARGET { ch + skip_ch } else { ch };
            let a = w.conv_bn(&mut init, &format!("dec{}.0", i + 1), width, input);
            let b = w.conv_bn(&mut init, &format!("dec{}.1", i + 1), width, width);
            let c = w.conv_bn(&mut init, &format!("dec{}.2", i + 1), width, width);
            decoder.push([a, b, c]);
            ch = width;
        }
        let head = w.conv(&mut init, "head", OUT_CHANNELS, ch, 1, true);
        Ok(Self {
            config,
            weights: w,
            encoder,
            decoder,
            head,
            ablate_skip: false,
        })
    }

    /// `input` is `[N, in_channels, rows, cols]`; returns class
    /// probabilities `[N, 15, rows, cols]` (channel = horizon·3 + class).
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: BnMode) -> Result<Var, ModelError> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(ModelError::Input(format!("expected [N, {}, H, W], got {shape:?}", self.config.in_channels)));
        }
        self.config.check_dims(shape[2], shape[3])?;
        let pools = self.config.pools();
        let w = &mut self.weights;
        let mut x = input;
        let mut skip = None;
        for (i, block) in self.encoder.iter().enumerate() {
            for l in block {
                x = w.apply_conv_bn(tape, l, x, mode, true)?;
            }
            if i == SKIP_SOURCE {
                skip = Some(x);
            }
            if i < pools {
                x = tape.avg_pool2d(x)?;
            }
        }
        let n_dec = self.decoder.len();
        for (i, block) in self.decoder.iter().enumerate() {
            if i >= n_dec - pools {
                x = tape.upsample2d(x)?;
            }
            if i == SKIP_TARGET {
                let mut s = skip.expect("encoder ran");
                if self.ablate_skip {
                    let zeros = crate::tensor::Tensor::zeros(tape.shape(s));
                    s = tape.leaf(zeros);
                }
                x = tape.concat(&[x, s], 1)?;
            }
            for l in block {
                x = w.apply_conv_bn(tape, l, x, mode, true)?;
            }
        }
        let logits = w.apply_conv(tape, &self.head, x)?;
        Ok(grouped_softmax(tape, logits, NUM_CLASSES)?)
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.num_parameters()
    }

    pub fn cast<U: Scalar>(&self) -> GridNet<U> {
        GridNet {
            config: self.config.clone(),
            weights: self.weights.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            head: self.head,
            ablate_skip: self.ablate_skip,
        }
    }
}
