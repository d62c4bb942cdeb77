//! Single-view 2D encoder-decoder network and its Dice training loss.
//!
//! The encoder has `pool_stages` resolution levels of `convs_per_block`
//! 3x3 conv + ReLU layers separated by 2x2 max pooling, followed by a
//! bottleneck block at the coarsest resolution. The decoder mirrors it: each
//! level upsamples 2x (nearest neighbour), concatenates the matching encoder
//! output, and applies another block. A final 1x1 conv maps the
//! `channel_widths[0]` features to `num_classes` logits and a softmax turns
//! them into per-pixel class probabilities.

mod adam;
mod checkpoint;
mod layers;
mod loss;
mod network;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{dice_loss, dice_loss_and_grad, dice_loss_grad};
pub use network::{Network, SampleCache, Workspace};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::views::{Slice2, ViewAxis};

/// Parameter count of the default configuration at 180x180 input.
pub const DEFAULT_PARAM_COUNT: usize = 2_841_154;
/// Trainable-parameter count reported for the original model.
pub const REPORTED_PARAM_COUNT: usize = 4_641_209;

/// Index of the foreground class in the network output.
pub const FOREGROUND: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    pub in_channels: usize,
    pub num_classes: usize,
    pub pool_stages: usize,
    pub convs_per_block: usize,
    /// One width per resolution level, finest first; the last is the bottleneck.
    pub channel_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: (180, 180),
            in_channels: 1,
            num_classes: 2,
            pool_stages: 2,
            convs_per_block: 3,
            channel_widths: vec![64, 128, 256],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let factor = 1usize << self.pool_stages;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by 2^{} = {factor}",
                self.pool_stages
            )));
        }
        if self.channel_widths.len() != self.pool_stages + 1 {
            return Err(Error::Config(format!(
                "{} pooling stages need {} channel widths, got {:?}",
                self.pool_stages,
                self.pool_stages + 1,
                self.channel_widths
            )));
        }
        if self.channel_widths.contains(&0) || self.in_channels == 0 || self.convs_per_block == 0 {
            return Err(Error::Config("channel counts and block depth must be positive".into()));
        }
        if self.num_classes <= FOREGROUND {
            return Err(Error::Config(format!(
                "need at least two classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Number of conv layers including the final 1x1.
    pub fn conv_layer_count(&self) -> usize {
        (2 * self.pool_stages + 1) * self.convs_per_block + 1
    }

    pub fn layer_plan(&self) -> Vec<ConvSpec> {
        let widths = &self.channel_widths;
        let stages = self.pool_stages;
        let mut plan = Vec::with_capacity(self.conv_layer_count());
        let mut c_prev = self.in_channels;
        for level in 0..=stages {
            let name = if level < stages {
                format!("enc{level}")
            } else {
                "bottleneck".to_string()
            };
            for c in 0..self.convs_per_block {
                plan.push(ConvSpec {
                    name: format!("{name}.conv{c}"),
                    c_in: c_prev,
                    c_out: widths[level],
                    kernel: 3,
                });
                c_prev = widths[level];
            }
        }
        for level in (0..stages).rev() {
            for c in 0..self.convs_per_block {
                let c_in = if c == 0 {
                    c_prev + widths[level]
                } else {
                    widths[level]
                };
                plan.push(ConvSpec {
                    name: format!("dec{level}.conv{c}"),
                    c_in,
                    c_out: widths[level],
                    kernel: 3,
                });
                c_prev = widths[level];
            }
        }
        plan.push(ConvSpec {
            name: "head".into(),
            c_in: c_prev,
            c_out: self.num_classes,
            kernel: 1,
        });
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.c_in, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.c_in * self.c_out + self.c_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named tensors; conv `i` owns entries `2i` (weight) and `2i + 1` (bias).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn zeros_for(layers: &[ConvSpec]) -> Self {
        let tensors = layers
            .iter()
            .flat_map(|l| {
                [
                    Tensor {
                        name: format!("{}.weight", l.name),
                        shape: l.weight_shape(),
                        data: vec![0.0; l.kernel * l.kernel * l.c_in * l.c_out],
                    },
                    Tensor {
                        name: format!("{}.bias", l.name),
                        shape: vec![l.c_out],
                        data: vec![0.0; l.c_out],
                    },
                ]
            })
            .collect();
        ParamStore { tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub(crate) fn pair_mut(&mut self, conv: usize) -> (&mut [f32], &mut [f32]) {
        let (w, b) = self.tensors[2 * conv..2 * conv + 2].split_at_mut(1);
        (&mut w[0].data, &mut b[0].data)
    }

    pub fn fill(&mut self, value: f32) {
        for t in &mut self.tensors {
            t.data.fill(value);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub weights: ParamStore,
    pub param_count: usize,
    pub view: ViewAxis,
    layers: Vec<ConvSpec>,
}

/// Builds the network with seeded He (fan-in) normal weights and zero biases.
pub fn build_model(cfg: &ModelConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let layers = cfg.layer_plan();
    let mut weights = ParamStore::zeros_for(&layers);
    let mut rng = rng::stream(cfg.seed, rng::tag("weights"));
    for (i, layer) in layers.iter().enumerate() {
        let fan_in = (layer.c_in * layer.kernel * layer.kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for x in &mut weights.tensors[2 * i].data {
            *x = normal.sample(&mut rng) as f32;
        }
    }
    let param_count = layers.iter().map(ConvSpec::param_count).sum();
    Ok(TrainedModel {
        config: cfg.clone(),
        weights,
        param_count,
        view: ViewAxis::Axial,
        layers,
    })
}

impl TrainedModel {
    pub fn with_view(mut self, view: ViewAxis) -> Self {
        self.view = view;
        self
    }

    pub(crate) fn from_parts(config: ModelConfig, weights: ParamStore, view: ViewAxis) -> Result<Self> {
        let mut model = build_model(&ModelConfig { seed: 0, ..config.clone() })?;
        if weights.tensors.len() != model.weights.tensors.len() {
            return Err(Error::Contract(format!(
                "weight store has {} tensors, architecture needs {}",
                weights.tensors.len(),
                model.weights.tensors.len()
            )));
        }
        for (have, want) in weights.tensors.iter().zip(&model.weights.tensors) {
            if have.name != want.name || have.shape != want.shape || have.data.len() != want.data.len() {
                return Err(Error::Contract(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    have.name, have.shape, want.name, want.shape
                )));
            }
        }
        model.weights = weights;
        model.config = config;
        model.view = view;
        Ok(model)
    }

    pub fn layers(&self) -> &[ConvSpec] {
        &self.layers
    }

    /// Counts parameters by walking the weight store.
    pub fn enumerate_params(&self) -> usize {
        self.weights.len()
    }

    pub fn network(&self) -> Network<'_> {
        Network::new(&self.config, &self.layers, &self.weights)
    }

    fn check_batch(&self, batch: &[f32], n: usize) -> Result<()> {
        let (h, w) = self.config.input_size;
        let expected = n * self.config.in_channels * h * w;
        if batch.len() != expected {
            return Err(Error::Contract(format!(
                "batch of {n} needs {expected} values ({}x{h}x{w} each), got {}",
                self.config.in_channels,
                batch.len()
            )));
        }
        Ok(())
    }

    /// Class probabilities for `n` samples laid out `n x C_in x H x W`.
    /// Output layout is `n x H x W x num_classes`.
    pub fn forward(&self, batch: &[f32], n: usize) -> Result<Vec<f32>> {
        self.check_batch(batch, n)?;
        let (h, w) = self.config.input_size;
        let hw = h * w;
        let classes = self.config.num_classes;
        let sample = self.config.in_channels * hw;
        let net = self.network();
        let mut ws = Workspace::default();
        let mut out = vec![0f32; n * hw * classes];
        for s in 0..n {
            let cache = net.forward(&batch[s * sample..(s + 1) * sample], &mut ws);
            let probs = cache.probs();
            let dst = &mut out[s * hw * classes..(s + 1) * hw * classes];
            for p in 0..hw {
                for c in 0..classes {
                    dst[p * classes + c] = probs[c * hw + p];
                }
            }
        }
        Ok(out)
    }

    /// Foreground probability map for each single-channel slice.
    pub fn predict_slices(&self, slices: &[Slice2]) -> Result<Vec<Slice2>> {
        let (h, w) = self.config.input_size;
        if self.config.in_channels != 1 {
            return Err(Error::Contract("slice prediction needs a single-channel model".into()));
        }
        if let Some(bad) = slices.iter().find(|s| s.rows != h || s.cols != w) {
            return Err(Error::Contract(format!(
                "slice is {}x{}, model expects {h}x{w}",
                bad.rows, bad.cols
            )));
        }
        let net = self.network();
        let mut ws = Workspace::default();
        Ok(slices
            .iter()
            .map(|s| {
                let cache = net.forward(&s.data, &mut ws);
                let probs = cache.probs();
                let hw = h * w;
                Slice2 {
                    rows: h,
                    cols: w,
                    data: probs[FOREGROUND * hw..(FOREGROUND + 1) * hw]
                        .iter()
                        .map(|&p| p.clamp(0.0, 1.0))
                        .collect(),
                }
            })
            .collect())
    }
}
