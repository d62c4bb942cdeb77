use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{postprocess, predict_view, SliceSampling, TrainSpec};
use crate::data_io::{load_image, load_mask, Manifest, SubjectRecord};
use crate::error::{Error, Result};
use crate::metrics::{dice_coefficient, volumetric_similarity};
use crate::model::{
    build_model, dice_loss_and_grad, Adam, ParamStore, SampleCache, TrainedModel, Workspace,
    FOREGROUND,
};
use crate::preprocess::{crop_pad_inplane, preprocess_image, PreprocessConfig};
use crate::rng;
use crate::views::{to_view, Slice2, ViewAxis};
use crate::volume::Volume;

/// Batches whose activation caches would exceed this many floats are
/// forwarded twice instead of being held in memory.
const CACHE_BUDGET_FLOATS: usize = 300_000_000;

/// A subject after brain masking and z-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSubject {
    pub subject_id: String,
    pub scanner_id: String,
    pub image: Volume,
    pub label: Option<Volume>,
}

pub fn prepare_subject(
    manifest: &Manifest,
    record: &SubjectRecord,
    cfg: &PreprocessConfig,
) -> Result<PreparedSubject> {
    let raw = load_image(manifest.resolve(&record.image_path))?;
    let (image, _) = preprocess_image(&raw, cfg)?;
    let label = if record.has_label() {
        let label = load_mask(manifest.resolve(&record.label_path))?;
        if label.shape() != image.shape() {
            return Err(Error::Contract(format!(
                "{}: label shape {:?} differs from image shape {:?}",
                record.subject_id,
                label.shape(),
                image.shape()
            )));
        }
        Some(label)
    } else {
        None
    };
    Ok(PreparedSubject {
        subject_id: record.subject_id.clone(),
        scanner_id: record.scanner_id.clone(),
        image,
        label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_vs: Option<f64>,
    pub val_dsc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best mean validation DSC.
    pub model: TrainedModel,
    pub curve: Vec<EpochRecord>,
    /// 1-based.
    pub best_epoch: usize,
}

pub fn write_curve(curve: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in curve {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct TrainSlice {
    image: Slice2,
    label: Slice2,
    foreground: bool,
}

fn view_slices(s: &PreparedSubject, view: ViewAxis, size: (usize, usize)) -> Result<Vec<TrainSlice>> {
    let label = s
        .label
        .as_ref()
        .ok_or_else(|| Error::Config(format!("training subject {} has no label", s.subject_id)))?;
    let (img, _) = crop_pad_inplane(&s.image, size, view)?;
    let (lbl, _) = crop_pad_inplane(label, size, view)?;
    let imgs = to_view(&img, view)?;
    let lbls = to_view(&lbl, view)?;
    Ok(imgs
        .slices
        .into_iter()
        .zip(lbls.slices)
        .map(|(image, label)| {
            let foreground = label.data.iter().any(|&v| v != 0.0);
            TrainSlice { image, label, foreground }
        })
        .collect())
}

fn epoch_order(slices: &[TrainSlice], sampling: SliceSampling, r: &mut rng::SeededRng) -> Vec<usize> {
    let mut order: Vec<usize> = match sampling {
        SliceSampling::All => (0..slices.len()).collect(),
        SliceSampling::Foreground { background_ratio } => {
            let (mut fg, mut bg): (Vec<usize>, Vec<usize>) =
                (0..slices.len()).partition(|&i| slices[i].foreground);
            let take = ((fg.len() as f64 * background_ratio).round() as usize).min(bg.len());
            rng::shuffle(&mut bg, r);
            fg.extend_from_slice(&bg[..take]);
            fg
        }
    };
    rng::shuffle(&mut order, r);
    order
}

fn validate(model: &TrainedModel, val: &[PreparedSubject], spec: &TrainSpec) -> Result<(f64, f64)> {
    let (mut vs, mut dsc) = (0.0, 0.0);
    for s in val {
        let label = s
            .label
            .as_ref()
            .ok_or_else(|| Error::Config(format!("validation subject {} has no label", s.subject_id)))?;
        let prob = predict_view(model, &s.image)?;
        let mask = postprocess(&prob, spec.threshold, spec.postproc_fraction)?;
        vs += volumetric_similarity(label, &mask)?;
        dsc += dice_coefficient(label, &mask)?;
    }
    let n = val.len() as f64;
    Ok((vs / n, dsc / n))
}

/// Trains one single-view network on mixed, shuffled slices of all training
/// subjects and keeps the weights of the best validation epoch. With no
/// validation subjects the last epoch is kept.
pub fn train_view(
    view: ViewAxis,
    train: &[PreparedSubject],
    val: &[PreparedSubject],
    spec: &TrainSpec,
    seed: u64,
) -> Result<TrainOutcome> {
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut cfg = spec.model.clone();
    cfg.seed = rng::derive_seed(seed, rng::tag("init"));
    let mut model = build_model(&cfg)?.with_view(view);
    let (h, w) = cfg.input_size;
    let hw = h * w;
    let classes = cfg.num_classes;

    let mut slices = Vec::new();
    for s in train {
        slices.extend(view_slices(s, view, (h, w))?);
    }
    let layers = model.layers().to_vec();
    let mut grads = ParamStore::zeros_for(&layers);
    let mut adam = Adam::new(spec.adam(), &model.weights);
    let mut ws = Workspace::default();

    let mut curve = Vec::with_capacity(spec.max_epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=spec.max_epochs {
        let mut r = rng::stream(seed, rng::tag("epoch").wrapping_add(epoch as u64));
        let order = epoch_order(&slices, spec.slice_sampling, &mut r);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(spec.batch_size) {
            grads.fill(0.0);
            let net = model.network();
            let mut keep = true;
            let mut caches: Vec<SampleCache> = Vec::new();
            let mut pred = Vec::with_capacity(batch.len() * hw);
            let mut gt = Vec::with_capacity(batch.len() * hw);
            for (b, &i) in batch.iter().enumerate() {
                let cache = net.forward(&slices[i].image.data, &mut ws);
                pred.extend_from_slice(&cache.probs()[FOREGROUND * hw..(FOREGROUND + 1) * hw]);
                gt.extend_from_slice(&slices[i].label.data);
                if b == 0 {
                    keep = cache.floats().saturating_mul(batch.len()) <= CACHE_BUDGET_FLOATS;
                }
                if keep {
                    caches.push(cache);
                }
            }
            let (loss, grad) = dice_loss_and_grad(&pred, &gt, spec.dice_smooth)?;
            let mut dprobs = vec![0f32; classes * hw];
            for (b, &i) in batch.iter().enumerate() {
                let recomputed;
                let cache = if keep {
                    &caches[b]
                } else {
                    recomputed = net.forward(&slices[i].image.data, &mut ws);
                    &recomputed
                };
                for (d, g) in dprobs[FOREGROUND * hw..(FOREGROUND + 1) * hw]
                    .iter_mut()
                    .zip(&grad[b * hw..(b + 1) * hw])
                {
                    *d = *g as f32;
                }
                net.backward(cache, &dprobs, &mut grads, &mut ws);
            }
            drop(caches);
            adam.update(&mut model.weights, &grads);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        let (val_vs, val_dsc) = if val.is_empty() {
            (None, None)
        } else {
            let (vs, dsc) = validate(&model, val, spec)?;
            (Some(vs), Some(dsc))
        };
        log::info!(
            "{view} epoch {epoch}/{}: loss {train_loss:.4} val VS {} val DSC {}",
            spec.max_epochs,
            val_vs.map_or("-".into(), |v| format!("{v:.4}")),
            val_dsc.map_or("-".into(), |v| format!("{v:.4}")),
        );
        curve.push(EpochRecord { epoch, train_loss, val_vs, val_dsc });
        let score = val_dsc.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => val.is_empty() || score > *b,
        };
        if improved {
            best = Some((score, epoch, model.weights.clone()));
        }
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch");
    model.weights = weights;
    Ok(TrainOutcome { model, curve, best_epoch })
}
