//! Smoothed soft-Dice loss on the foreground probability channel.
//!
//! With `I = sum(p * g)` and `S = sum(p) + sum(g)` taken over every pixel of
//! every slice in the batch, the loss is `-(2I + s) / (S + s)`, which lies in
//! `(-1, 0]` and equals -1 for a perfect match (including the all-empty case).

use crate::error::{Error, Result};

fn check(pred: &[f32], gt: &[f32], smooth: f64) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "dice loss: prediction has {} entries, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if !(smooth > 0.0) {
        return Err(Error::Contract(format!("dice smoothing must be positive, got {smooth}")));
    }
    Ok(())
}

fn sums(pred: &[f32], gt: &[f32]) -> (f64, f64) {
    let (mut inter, mut total) = (0f64, 0f64);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += p as f64 * g as f64;
        total += p as f64 + g as f64;
    }
    (inter, total)
}

pub fn dice_loss(pred: &[f32], gt: &[f32], smooth: f64) -> Result<f64> {
    check(pred, gt, smooth)?;
    let (inter, total) = sums(pred, gt);
    Ok(-(2.0 * inter + smooth) / (total + smooth))
}

/// Loss value and its gradient with respect to each prediction entry:
/// `dL/dp_i = -(2 g_i (S + s) - (2I + s)) / (S + s)^2`.
pub fn dice_loss_and_grad(pred: &[f32], gt: &[f32], smooth: f64) -> Result<(f64, Vec<f64>)> {
    check(pred, gt, smooth)?;
    let (inter, total) = sums(pred, gt);
    let num = 2.0 * inter + smooth;
    let den = total + smooth;
    let inv_den2 = 1.0 / (den * den);
    let grad = gt
        .iter()
        .map(|&g| -(2.0 * g as f64 * den - num) * inv_den2)
        .collect();
    Ok((-num / den, grad))
}

pub fn dice_loss_grad(pred: &[f32], gt: &[f32], smooth: f64) -> Result<Vec<f64>> {
    dice_loss_and_grad(pred, gt, smooth).map(|(_, g)| g)
}
