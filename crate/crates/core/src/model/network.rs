//! Encoder-decoder forward and backward passes for one sample.

use super::layers::{
    conv_backward, conv_forward, maxpool_backward, maxpool_forward, softmax_channels,
    upsample_backward, upsample_forward,
};
use super::{ConvSpec, ModelConfig, ParamStore};

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Default, Clone)]
pub struct SampleCache {
    pub input: Vec<f32>,
    /// Output of every conv (post-ReLU; the head holds softmax probabilities).
    pub acts: Vec<Vec<f32>>,
    pub pooled: Vec<Vec<f32>>,
    pub concat: Vec<Vec<f32>>,
}

impl SampleCache {
    pub fn probs(&self) -> &[f32] {
        self.acts.last().expect("forward ran")
    }

    pub fn floats(&self) -> usize {
        self.input.len()
            + self.acts.iter().map(Vec::len).sum::<usize>()
            + self.pooled.iter().map(Vec::len).sum::<usize>()
            + self.concat.iter().map(Vec::len).sum::<usize>()
    }
}

/// Scratch buffers reused across samples.
#[derive(Debug, Default)]
pub struct Workspace {
    col: Vec<f32>,
    dcol: Vec<f32>,
}

pub struct Network<'a> {
    cfg: &'a ModelConfig,
    layers: &'a [ConvSpec],
    params: &'a ParamStore,
}

impl<'a> Network<'a> {
    pub fn new(cfg: &'a ModelConfig, layers: &'a [ConvSpec], params: &'a ParamStore) -> Self {
        Network {
            cfg,
            layers,
            params,
        }
    }

    fn size_at(&self, level: usize) -> (usize, usize) {
        (self.cfg.input_size.0 >> level, self.cfg.input_size.1 >> level)
    }

    fn conv(&self, idx: usize, input: &[f32], level: usize, relu: bool, ws: &mut Workspace) -> Vec<f32> {
        let spec = &self.layers[idx];
        let (h, w) = self.size_at(level);
        let mut out = vec![0f32; spec.c_out * h * w];
        conv_forward(
            input,
            spec.c_in,
            h,
            w,
            &self.params.tensors[2 * idx].data,
            &self.params.tensors[2 * idx + 1].data,
            spec.c_out,
            spec.kernel,
            relu,
            &mut out,
            &mut ws.col,
        );
        out
    }

    /// Forward pass of one `in_channels x H x W` sample. The head output is
    /// the per-class softmax, channel-major.
    pub fn forward(&self, input: &[f32], ws: &mut Workspace) -> SampleCache {
        let stages = self.cfg.pool_stages;
        let per_block = self.cfg.convs_per_block;
        let mut cache = SampleCache {
            input: input.to_vec(),
            acts: Vec::with_capacity(self.layers.len()),
            pooled: Vec::with_capacity(stages),
            concat: vec![Vec::new(); stages],
        };
        let mut idx = 0;
        for level in 0..stages {
            for c in 0..per_block {
                let out = {
                    let x: &[f32] = match (level, c) {
                        (0, 0) => &cache.input,
                        (_, 0) => &cache.pooled[level - 1],
                        _ => &cache.acts[idx - 1],
                    };
                    self.conv(idx, x, level, true, ws)
                };
                cache.acts.push(out);
                idx += 1;
            }
            let (h, w) = self.size_at(level);
            let ch = self.layers[idx - 1].c_out;
            let mut pooled = vec![0f32; ch * (h / 2) * (w / 2)];
            maxpool_forward(&cache.acts[idx - 1], ch, h, w, &mut pooled);
            cache.pooled.push(pooled);
        }
        for c in 0..per_block {
            let out = {
                let x: &[f32] = if c == 0 {
                    &cache.pooled[stages - 1]
                } else {
                    &cache.acts[idx - 1]
                };
                self.conv(idx, x, stages, true, ws)
            };
            cache.acts.push(out);
            idx += 1;
        }
        for level in (0..stages).rev() {
            let (h, w) = self.size_at(level);
            let deep_ch = self.layers[idx - 1].c_out;
            let skip_idx = self.skip_conv(level);
            let skip_ch = self.layers[skip_idx].c_out;
            let mut cat = vec![0f32; (deep_ch + skip_ch) * h * w];
            upsample_forward(&cache.acts[idx - 1], deep_ch, h / 2, w / 2, &mut cat[..deep_ch * h * w]);
            cat[deep_ch * h * w..].copy_from_slice(&cache.acts[skip_idx]);
            cache.concat[level] = cat;
            for c in 0..per_block {
                let out = {
                    let x: &[f32] = if c == 0 {
                        &cache.concat[level]
                    } else {
                        &cache.acts[idx - 1]
                    };
                    self.conv(idx, x, level, true, ws)
                };
                cache.acts.push(out);
                idx += 1;
            }
        }
        let mut logits = self.conv(idx, &cache.acts[idx - 1], 0, false, ws);
        let (h, w) = self.size_at(0);
        softmax_channels(&mut logits, self.cfg.num_classes, h * w);
        cache.acts.push(logits);
        cache
    }

    /// Index of the last encoder conv at `level` (the skip source).
    fn skip_conv(&self, level: usize) -> usize {
        (level + 1) * self.cfg.convs_per_block - 1
    }

    /// Backpropagates `dprobs` (gradient w.r.t. the softmax output, C x HW)
    /// and accumulates parameter gradients into `grads`.
    pub fn backward(&self, cache: &SampleCache, dprobs: &[f32], grads: &mut ParamStore, ws: &mut Workspace) {
        let stages = self.cfg.pool_stages;
        let per_block = self.cfg.convs_per_block;
        let n_layers = self.layers.len();
        let classes = self.cfg.num_classes;
        let (h0, w0) = self.size_at(0);
        let hw0 = h0 * w0;

        // softmax backward: dz_c = p_c (dp_c - sum_k p_k dp_k)
        let probs = cache.probs();
        let mut dlogits = vec![0f32; classes * hw0];
        for p in 0..hw0 {
            let dot: f32 = (0..classes).map(|c| probs[c * hw0 + p] * dprobs[c * hw0 + p]).sum();
            for c in 0..classes {
                dlogits[c * hw0 + p] = probs[c * hw0 + p] * (dprobs[c * hw0 + p] - dot);
            }
        }

        let mut idx = n_layers - 1;
        let mut dx = self.conv_back(idx, &cache.acts[idx - 1], 0, &dlogits, grads, ws, true);
        let mut dskip: Vec<Vec<f32>> = vec![Vec::new(); stages];

        for level in 0..stages {
            for c in (0..per_block).rev() {
                idx -= 1;
                relu_mask(&mut dx, &cache.acts[idx]);
                let input: &[f32] = if c == 0 {
                    &cache.concat[level]
                } else {
                    &cache.acts[idx - 1]
                };
                dx = self.conv_back(idx, input, level, &dx, grads, ws, true);
            }
            let (h, w) = self.size_at(level);
            let skip_ch = self.layers[self.skip_conv(level)].c_out;
            let deep_ch = self.layers[idx].c_in - skip_ch;
            dskip[level] = dx[deep_ch * h * w..].to_vec();
            let mut ddeep = vec![0f32; deep_ch * (h / 2) * (w / 2)];
            upsample_backward(&dx[..deep_ch * h * w], deep_ch, h / 2, w / 2, &mut ddeep);
            dx = ddeep;
        }

        for c in (0..per_block).rev() {
            idx -= 1;
            relu_mask(&mut dx, &cache.acts[idx]);
            let input: &[f32] = if c == 0 {
                &cache.pooled[stages - 1]
            } else {
                &cache.acts[idx - 1]
            };
            dx = self.conv_back(idx, input, stages, &dx, grads, ws, true);
        }

        for level in (0..stages).rev() {
            let (h, w) = self.size_at(level);
            let ch = self.layers[self.skip_conv(level)].c_out;
            let mut dact = std::mem::take(&mut dskip[level]);
            maxpool_backward(&cache.acts[self.skip_conv(level)], ch, h, w, &dx, &mut dact);
            dx = dact;
            for c in (0..per_block).rev() {
                idx -= 1;
                relu_mask(&mut dx, &cache.acts[idx]);
                let input: &[f32] = match (level, c) {
                    (0, 0) => &cache.input,
                    (_, 0) => &cache.pooled[level - 1],
                    _ => &cache.acts[idx - 1],
                };
                let need_input_grad = !(level == 0 && c == 0);
                dx = self.conv_back(idx, input, level, &dx, grads, ws, need_input_grad);
            }
        }
        debug_assert_eq!(idx, 0);
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_back(
        &self,
        idx: usize,
        input: &[f32],
        level: usize,
        dout: &[f32],
        grads: &mut ParamStore,
        ws: &mut Workspace,
        input_grad: bool,
    ) -> Vec<f32> {
        let spec = &self.layers[idx];
        let (h, w) = self.size_at(level);
        let mut dinput = if input_grad {
            vec![0f32; spec.c_in * h * w]
        } else {
            Vec::new()
        };
        let (dw, db) = grads.pair_mut(idx);
        conv_backward(
            input,
            spec.c_in,
            h,
            w,
            &self.params.tensors[2 * idx].data,
            spec.c_out,
            spec.kernel,
            dout,
            dw,
            db,
            if input_grad { Some(&mut dinput) } else { None },
            &mut ws.col,
            &mut ws.dcol,
        );
        dinput
    }
}

fn relu_mask(grad: &mut [f32], act: &[f32]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
