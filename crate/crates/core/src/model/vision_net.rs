//! Camera network: shared residual encoder, per-camera orthographic
//! projection, residual decoder.
//!
//! Every camera's image stack (timesteps stacked along channels) goes through
//! the same encoder. The orthographic transform then maps each channel's
//! flattened `h·w` perspective map to a flattened top-down map through a
//! stack of unbiased dense layers (ReLU between layers, none after the last).
//! Dense weights are shared across channels but distinct per camera. The
//! projected maps are summed over cameras and decoded to the output grid.
//!
//! Input batches are camera-major: camera `k` of sample `n` sits at batch
//! index `k·N + n`.

use serde::{Deserialize, Serialize};

use super::layers::{grouped_softmax, Conv, ConvBn, Init, Weights};
use super::ModelError;
use crate::grid::{NUM_CLASSES, NUM_HORIZONS};
use crate::sim::NUM_PAST;
use crate::tensor::{BnMode, ParamId, ParamStore, Scalar, Tape, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrthoConfig {
    /// Widths of hidden dense layers; empty means a single layer.
    pub hidden: Vec<usize>,
    /// Upper bound on weights per camera, checked at construction.
    pub max_weights: usize,
}

impl Default for OrthoConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            max_weights: 1 << 22,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionNetConfig {
    pub in_channels: usize,
    pub cameras: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub base_width: usize,
    /// Residual blocks in the encoder and in the decoder.
    pub blocks: usize,
    /// Encoder blocks followed by 2×2 pooling (the first `pools` blocks);
    /// the last `pools` decoder blocks are preceded by upsampling.
    pub pools: usize,
    pub ortho: OrthoConfig,
    pub seed: u64,
}

impl Default for VisionNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3 * NUM_PAST,
            cameras: 4,
            image_height: 48,
            image_width: 80,
            grid_rows: 48,
            grid_cols: 80,
            base_width: 8,
            blocks: 4,
            pools: 2,
            ortho: OrthoConfig::default(),
            seed: 0,
        }
    }
}

impl VisionNetConfig {
    fn widths(&self) -> Vec<usize> {
        (0..self.blocks).map(|i| self.base_width << i.min(2)).collect()
    }

    pub fn encoder_hw(&self) -> (usize, usize) {
        (self.image_height >> self.pools, self.image_width >> self.pools)
    }

    pub fn topdown_hw(&self) -> (usize, usize) {
        (self.grid_rows >> self.pools, self.grid_cols >> self.pools)
    }

    pub fn ortho_dims(&self) -> Vec<usize> {
        let (eh, ew) = self.encoder_hw();
        let (th, tw) = self.topdown_hw();
        let mut dims = vec![eh * ew];
        dims.extend(&self.ortho.hidden);
        dims.push(th * tw);
        dims
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels == 0 || self.cameras == 0 || self.base_width == 0 || self.blocks == 0 {
            return Err(ModelError::Config("vision net sizes must be positive".into()));
        }
        if self.pools > self.blocks {
            return Err(ModelError::Config(format!("{} pools but only {} blocks", self.pools, self.blocks)));
        }
        let div = 1 << self.pools;
        for (name, v) in [
            ("image height", self.image_height),
            ("image width", self.image_width),
            ("grid rows", self.grid_rows),
            ("grid cols", self.grid_cols),
        ] {
            if v == 0 || v % div != 0 {
                return Err(ModelError::Config(format!("{name} {v} is not a positive multiple of {div}")));
            }
        }
        let dims = self.ortho_dims();
        let weights: usize = dims.windows(2).map(|d| d[0] * d[1]).sum();
        if weights > self.ortho.max_weights || dims.contains(&0) {
            return Err(ModelError::Config(format!(
                "orthographic layer needs {weights} weights per camera, budget {}",
                self.ortho.max_weights
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ResBlock {
    a: ConvBn,
    b: ConvBn,
    c: ConvBn,
    proj: Option<Conv>,
}

impl ResBlock {
    fn new<T: Scalar>(w: &mut Weights<T>, init: &mut Init, name: &str, out: usize, inp: usize) -> Self {
        let block = Self {
            a: w.conv_bn(init, &format!("{name}.0"), out, inp),
            b: w.conv_bn(init, &format!("{name}.1"), out, out),
            c: w.conv_bn(init, &format!("{name}.2"), out, out),
            proj: (inp != out).then(|| w.conv(init, &format!("{name}.proj"), out, inp, 1, false)),
        };
        // The residual branch starts switched off so that stacked blocks do
        // not inflate activations at initialization.
        let gamma = w.bn[block.c.bn].gamma;
        w.store.value_mut(gamma).data_mut().fill(T::zero());
        block
    }

    fn forward<T: Scalar>(&self, w: &mut Weights<T>, tape: &mut Tape<T>, x: Var, mode: BnMode) -> Result<Var, TensorError> {
        let y = w.apply_conv_bn(tape, &self.a, x, mode, true)?;
        let y = w.apply_conv_bn(tape, &self.b, y, mode, true)?;
        let y = w.apply_conv_bn(tape, &self.c, y, mode, false)?;
        let s = match &self.proj {
            Some(p) => w.apply_conv(tape, p, x)?,
            None => x,
        };
        let sum = tape.add(y, s)?;
        Ok(tape.relu(sum))
    }
}

/// Projects per-camera maps `[N, C, h, w]` to top-down maps `[N, C, th, tw]`
/// and sums them. `layers[k]` lists camera `k`'s dense weights in order.
pub fn ortho_transform<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    maps: &[Var],
    layers: &[Vec<ParamId>],
    out_hw: (usize, usize),
) -> Result<Var, TensorError> {
    if maps.is_empty() || maps.len() != layers.len() {
        return Err(TensorError::Shape(format!("{} camera maps, {} weight stacks", maps.len(), layers.len())));
    }
    let shape = tape.shape(maps[0]).to_vec();
    let [n, c, h, w] = shape[..] else {
        return Err(TensorError::Shape(format!("camera map must be [N, C, h, w], got {shape:?}")));
    };
    let mut total: Option<Var> = None;
    for (&map, stack) in maps.iter().zip(layers) {
        if tape.shape(map) != shape.as_slice() {
            return Err(TensorError::Shape(format!("camera maps differ: {:?} vs {shape:?}", tape.shape(map))));
        }
        let mut x = tape.reshape(map, vec![n * c, h * w])?;
        for (i, &id) in stack.iter().enumerate() {
            if i > 0 {
                x = tape.relu(x);
            }
            let wv = tape.param(store, id);
            x = tape.dense_unbiased(x, wv)?;
        }
        let projected = tape.reshape(x, vec![n, c, out_hw.0, out_hw.1])?;
        total = Some(match total {
            None => projected,
            Some(t) => tape.add(t, projected)?,
        });
    }
    Ok(total.expect("at least one camera"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionNet<T> {
    pub config: VisionNetConfig,
    pub weights: Weights<T>,
    encoder: Vec<ResBlock>,
    /// `ortho[camera][layer]`.
    ortho: Vec<Vec<ParamId>>,
    decoder: Vec<ResBlock>,
    head: Conv,
}

impl<T: Scalar> VisionNet<T> {
    pub fn new(config: VisionNetConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut init = Init::new(config.seed);
        let mut w = Weights::new();
        let widths = config.widths();
        let mut ch = config.in_channels;
        let mut encoder = Vec::new();
        for (i, &width) in widths.iter().enumerate() {
            encoder.push(ResBlock::new(&mut w, &mut init, &format!("enc{}", i + 1), width, ch));
            ch = width;
        }
        let dims = config.ortho_dims();
        let ortho = (0..config.cameras)
            .map(|k| {
                dims.windows(2)
                    .enumerate()
                    .map(|(l, d)| w.store.add(format!("ortho.cam{k}.{l}"), init.he_uniform(&[d[0], d[1]], d[0])))
                    .collect()
            })
            .collect();
        let mut decoder = Vec::new();
        for (i, &width) in widths.iter().rev().enumerate() {
            decoder.push(ResBlock::new(&mut w, &mut init, &format!("dec{}", i + 1), width, ch));
            ch = width;
        }
        let head = w.conv(&mut init, "head", NUM_CLASSES * NUM_HORIZONS, ch, 1, true);
        Ok(Self {
            config,
            weights: w,
            encoder,
            ortho,
            decoder,
            head,
        })
    }

    /// Dense weights of camera `k`'s orthographic stack.
    pub fn ortho_params(&self, k: usize) -> &[ParamId] {
        &self.ortho[k]
    }

    /// `input` is `[cameras·N, in_channels, H, W]`, camera-major; returns
    /// `[N, 15, rows, cols]` probabilities.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: BnMode) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let shape = tape.shape(input).to_vec();
        let ok = shape.len() == 4
            && shape[0].is_multiple_of(cfg.cameras)
            && shape[0] > 0
            && shape[1] == cfg.in_channels
            && (shape[2], shape[3]) == (cfg.image_height, cfg.image_width);
        if !ok {
            return Err(ModelError::Input(format!(
                "expected [{}·N, {}, {}, {}], got {shape:?}",
                cfg.cameras, cfg.in_channels, cfg.image_height, cfg.image_width
            )));
        }
        let n = shape[0] / cfg.cameras;
        let pools = cfg.pools;
        let out_hw = cfg.topdown_hw();
        let w = &mut self.weights;
        let mut x = input;
        for (i, block) in self.encoder.iter().enumerate() {
            x = block.forward(w, tape, x, mode)?;
            if i < pools {
                x = tape.avg_pool2d(x)?;
            }
        }
        let maps = (0..self.ortho.len()).map(|k| tape.slice0(x, k * n, n)).collect::<Result<Vec<_>, _>>()?;
        x = ortho_transform(tape, &w.store, &maps, &self.ortho, out_hw)?;
        let n_dec = self.decoder.len();
        for (i, block) in self.decoder.iter().enumerate() {
            if i >= n_dec - pools {
                x = tape.upsample2d(x)?;
            }
            x = block.forward(w, tape, x, mode)?;
        }
        let logits = w.apply_conv(tape, &self.head, x)?;
        Ok(grouped_softmax(tape, logits, NUM_CLASSES)?)
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.num_parameters()
    }

    pub fn cast<U: Scalar>(&self) -> VisionNet<U> {
        VisionNet {
            config: self.config.clone(),
            weights: self.weights.cast(),
            encoder: self.encoder.clone(),
            ortho: self.ortho.clone(),
            decoder: self.decoder.clone(),
            head: self.head,
        }
    }
}
