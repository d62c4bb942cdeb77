//! Per-view training, inference, multi-view fusion and post-processing,
//! plus the experiment protocols built on them.

mod experiment;
mod train;

pub use experiment::{
    run_experiment, run_kind, CombinationReport, Comparison, EvalReport, ExperimentKind, ExperimentOptions,
    FoldSummary, MetricSummary, ScoreSummary,
};
pub use train::{
    prepare_subject, train_view, write_curve, EpochRecord, PreparedSubject, TrainOutcome,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AdamConfig, ModelConfig, TrainedModel};
use crate::preprocess::{
    crop_pad_inplane, invert_crop_pad, masked_stats, preprocess_image, PreprocessConfig,
};
use crate::views::{from_view, to_view, ViewAxis};
use crate::volume::{Anatomical, AxisOrder, Volume, VolumeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SliceSampling {
    /// Every slice of every training subject, every epoch.
    All,
    /// Every slice containing foreground, plus `background_ratio` times as
    /// many label-free slices drawn afresh each epoch.
    Foreground { background_ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub fusion_lambda: f64,
    pub threshold: f64,
    pub postproc_fraction: f64,
    pub views: Vec<ViewAxis>,
    pub dice_smooth: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Halve the two-view weighted sum.
    pub literal_half_prefactor: bool,
    pub slice_sampling: SliceSampling,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            batch_size: 30,
            learning_rate: 2e-4,
            max_epochs: 200,
            fusion_lambda: 0.5,
            threshold: 0.5,
            postproc_fraction: 0.2,
            views: vec![ViewAxis::Axial, ViewAxis::Coronal],
            dice_smooth: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            literal_half_prefactor: false,
            slice_sampling: SliceSampling::All,
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.fusion_lambda) {
            return bad(format!("fusion lambda {} outside [0, 1]", self.fusion_lambda));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if !(0.0..0.5).contains(&self.postproc_fraction) {
            return bad(format!("post-processing fraction {} outside [0, 0.5)", self.postproc_fraction));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch count must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.dice_smooth > 0.0) {
            return bad("learning rate and dice smoothing must be positive".into());
        }
        if self.views.is_empty() {
            return bad("at least one view is required".into());
        }
        if let SliceSampling::Foreground { background_ratio } = self.slice_sampling {
            if !(background_ratio >= 0.0) {
                return bad(format!("background ratio {background_ratio} must be non-negative"));
            }
        }
        self.model.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TrainSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Serde(m) => Error::format(path, m),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub subject_id: String,
    pub prob_fused: Volume,
    pub mask: Volume,
    pub per_view_probs: BTreeMap<ViewAxis, Volume>,
}

static NORMALIZATION_WARNING: std::sync::Once = std::sync::Once::new();

/// Foreground probability volume aligned with `image` (already normalized).
pub fn predict_view(model: &TrainedModel, image: &Volume) -> Result<Volume> {
    let floor = image.data().iter().copied().fold(f32::INFINITY, f32::min);
    let head = image.with_data(
        VolumeKind::Mask,
        image.data().iter().map(|&x| (x > floor) as u8 as f32).collect(),
    )?;
    if head.count_nonzero() > 1 {
        let (_, std) = masked_stats(image, &head);
        if (std - 1.0).abs() > 0.1 {
            NORMALIZATION_WARNING.call_once(|| {
                log::warn!("input does not look z-score normalized (std {std:.3} within the head)");
            });
        }
    }
    let view = model.view;
    let (padded, record) = crop_pad_inplane(image, model.config.input_size, view)?;
    let mut stack = to_view(&padded, view)?;
    stack.slices = model.predict_slices(&stack.slices)?;
    stack.kind = VolumeKind::Probability;
    let prob = from_view(&stack)?;
    invert_crop_pad(&prob, &record)
}

/// `lambda * P_a + (1 - lambda) * P_c` for an axial/coronal pair, the plain
/// mean otherwise. A single volume passes through unchanged.
pub fn fuse_views(probs: &BTreeMap<ViewAxis, Volume>, lambda: f64) -> Result<Volume> {
    fuse_views_with(probs, lambda, false)
}

pub fn fuse_views_with(probs: &BTreeMap<ViewAxis, Volume>, lambda: f64, literal_half: bool) -> Result<Volume> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("fusion lambda {lambda} outside [0, 1]")));
    }
    let mut vols = probs.values();
    let first = vols
        .next()
        .ok_or_else(|| Error::Config("no view probabilities to fuse".into()))?;
    if let Some(bad) = vols.find(|v| v.shape() != first.shape()) {
        return Err(Error::Contract(format!(
            "cannot fuse volumes of shape {:?} and {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    if probs.len() == 1 {
        return first.with_data(VolumeKind::Probability, first.data().to_vec());
    }
    let n = first.len();
    let data: Vec<f32> = match (probs.get(&ViewAxis::Axial), probs.get(&ViewAxis::Coronal), probs.len()) {
        (Some(a), Some(c), 2) => {
            let scale = if literal_half { 0.5 } else { 1.0 };
            (0..n)
                .map(|i| {
                    let v = lambda * a.data()[i] as f64 + (1.0 - lambda) * c.data()[i] as f64;
                    (scale * v) as f32
                })
                .collect()
        }
        _ => {
            let k = probs.len() as f64;
            (0..n)
                .map(|i| (probs.values().map(|v| v.data()[i] as f64).sum::<f64>() / k) as f32)
                .collect()
        }
    };
    first.with_data(VolumeKind::Probability, data)
}

/// Thresholds at `prob >= tau`, then clears the lowest and highest
/// `floor(fraction * n_axial)` axial slices.
pub fn postprocess(prob: &Volume, tau: f64, fraction: f64) -> Result<Volume> {
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::Config(format!("post-processing fraction {fraction} outside [0, 0.5)")));
    }
    let order = prob.axis_order().unwrap_or(AxisOrder::CANONICAL);
    let axial = order.dim_of(Anatomical::InferiorSuperior);
    let shape = prob.shape();
    let n_axial = shape[axial];
    let slab = (fraction * n_axial as f64).floor() as usize;
    let mut data: Vec<f32> = prob
        .data()
        .iter()
        .map(|&p| (p as f64 >= tau) as u8 as f32)
        .collect();
    if slab > 0 {
        for (idx, v) in data.iter_mut().enumerate() {
            let c = prob.coords(idx)[axial];
            if c < slab || c >= n_axial - slab {
                *v = 0.0;
            }
        }
    }
    prob.with_data(VolumeKind::Mask, data)
}

/// Preprocesses a raw image, then predicts, fuses and post-processes.
pub fn segment_subject(
    subject_id: &str,
    models: &BTreeMap<ViewAxis, TrainedModel>,
    image: &Volume,
    spec: &TrainSpec,
) -> Result<SegmentationResult> {
    let (normalized, _) = preprocess_image(image, &spec.preprocess)?;
    segment_normalized(subject_id, models, &normalized, spec)
}

/// Like [`segment_subject`] for an image that is already normalized.
pub fn segment_normalized(
    subject_id: &str,
    models: &BTreeMap<ViewAxis, TrainedModel>,
    normalized: &Volume,
    spec: &TrainSpec,
) -> Result<SegmentationResult> {
    if models.is_empty() {
        return Err(Error::Config("segmentation needs at least one model".into()));
    }
    let mut per_view_probs = BTreeMap::new();
    for (&view, model) in models {
        if model.view != view {
            return Err(Error::Config(format!("model registered as {view} was trained on {}", model.view)));
        }
        per_view_probs.insert(view, predict_view(model, normalized)?);
    }
    fuse_and_finish(subject_id, per_view_probs, spec)
}

pub(crate) fn fuse_and_finish(
    subject_id: &str,
    per_view_probs: BTreeMap<ViewAxis, Volume>,
    spec: &TrainSpec,
) -> Result<SegmentationResult> {
    let prob_fused = fuse_views_with(&per_view_probs, spec.fusion_lambda, spec.literal_half_prefactor)?;
    let mask = postprocess(&prob_fused, spec.threshold, spec.postproc_fraction)?;
    Ok(SegmentationResult {
        subject_id: subject_id.to_string(),
        prob_fused,
        mask,
        per_view_probs,
    })
}
