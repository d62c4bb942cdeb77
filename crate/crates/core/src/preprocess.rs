//! Brain masking, z-score normalization and in-plane crop/pad.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::views::ViewAxis;
use crate::volume::{AxisOrder, Volume, VolumeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Foreground threshold as a fraction of the volume maximum.
    pub threshold_fraction: f64,
    /// Radius (voxels) of the ball used for binary closing.
    pub closing_radius: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            threshold_fraction: 0.05,
            closing_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrainMask {
    pub mask: Volume,
    pub voxel_count: usize,
}

pub fn compute_brain_mask(image: &Volume, cfg: &PreprocessConfig) -> Result<BrainMask> {
    let max = image.max_value();
    if !(max > 0.0) {
        return Err(Error::Preprocess("no brain voxels: image has no positive intensity".into()));
    }
    brain_mask_at(image, cfg.threshold_fraction * max as f64, cfg.closing_radius)
}

/// Threshold at an absolute intensity, close with a ball, keep the largest
/// 6-connected component.
pub fn brain_mask_at(image: &Volume, threshold: f64, closing_radius: usize) -> Result<BrainMask> {
    let shape = image.shape();
    let fg: Vec<bool> = image.data().iter().map(|&x| x as f64 > threshold).collect();
    let closed = binary_closing(&fg, shape, closing_radius);
    let largest = largest_component(&closed, shape);
    let voxel_count = largest.iter().filter(|&&b| b).count();
    if voxel_count == 0 {
        return Err(Error::Preprocess(
            "no brain voxels above the intensity threshold".into(),
        ));
    }
    let data = largest.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(BrainMask {
        mask: image.with_data(VolumeKind::Mask, data)?,
        voxel_count,
    })
}

fn ball_offsets(radius: usize) -> Vec<[isize; 3]> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Dilation then erosion, evaluated on a grid padded by the radius so the
/// volume border does not erode the result.
fn binary_closing(fg: &[bool], shape: [usize; 3], radius: usize) -> Vec<bool> {
    if radius == 0 {
        return fg.to_vec();
    }
    let pad = radius;
    let ps = shape.map(|d| d + 2 * pad);
    let pidx = |i: usize, j: usize, k: usize| i + ps[0] * (j + ps[1] * k);
    let ball = ball_offsets(radius);

    let mut dilated = vec![false; ps.iter().product()];
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            for i in 0..shape[0] {
                if !fg[i + shape[0] * (j + shape[1] * k)] {
                    continue;
                }
                let c = [i + pad, j + pad, k + pad];
                for o in &ball {
                    let p = [
                        (c[0] as isize + o[0]) as usize,
                        (c[1] as isize + o[1]) as usize,
                        (c[2] as isize + o[2]) as usize,
                    ];
                    dilated[pidx(p[0], p[1], p[2])] = true;
                }
            }
        }
    }

    let mut out = vec![false; fg.len()];
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            for i in 0..shape[0] {
                let c = [i + pad, j + pad, k + pad];
                let keep = ball.iter().all(|o| {
                    let p = [
                        c[0] as isize + o[0],
                        c[1] as isize + o[1],
                        c[2] as isize + o[2],
                    ];
                    (0..3).all(|d| p[d] >= 0 && (p[d] as usize) < ps[d])
                        && dilated[pidx(p[0] as usize, p[1] as usize, p[2] as usize)]
                });
                out[i + shape[0] * (j + shape[1] * k)] = keep;
            }
        }
    }
    out
}

/// Largest 6-connected component; ties go to the component found first in
/// voxel order.
pub(crate) fn largest_component(fg: &[bool], shape: [usize; 3]) -> Vec<bool> {
    let n = fg.len();
    let mut label = vec![0u32; n];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    let (sx, sy) = (shape[0], shape[0] * shape[1]);
    for start in 0..n {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(v) = queue.pop_front() {
            size += 1;
            let i = v % shape[0];
            let j = (v / sx) % shape[1];
            let k = v / sy;
            let mut visit = |u: usize| {
                if fg[u] && label[u] == 0 {
                    label[u] = next;
                    queue.push_back(u);
                }
            };
            if i > 0 {
                visit(v - 1);
            }
            if i + 1 < shape[0] {
                visit(v + 1);
            }
            if j > 0 {
                visit(v - sx);
            }
            if j + 1 < shape[1] {
                visit(v + sx);
            }
            if k > 0 {
                visit(v - sy);
            }
            if k + 1 < shape[2] {
                visit(v + sy);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    label.iter().map(|&l| l != 0 && l == best.0).collect()
}

/// Mean and population standard deviation over the mask.
pub fn masked_stats(image: &Volume, mask: &Volume) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0f64);
    for (&x, &m) in image.data().iter().zip(mask.data()) {
        if m != 0.0 {
            n += 1;
            sum += x as f64;
        }
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    let var = image
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m != 0.0)
        .map(|(&x, _)| (x as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}

/// `(x - mean) / std` over the whole volume, with statistics taken inside
/// the brain mask only.
pub fn zscore_normalize(image: &Volume, brain: &BrainMask) -> Result<Volume> {
    if !image.same_grid(&brain.mask) {
        return Err(Error::Contract(format!(
            "image shape {:?} differs from brain mask shape {:?}",
            image.shape(),
            brain.mask.shape()
        )));
    }
    if brain.voxel_count < 2 {
        return Err(Error::Preprocess(
            "brain mask needs at least two voxels for normalization".into(),
        ));
    }
    let (mean, std) = masked_stats(image, &brain.mask);
    if !(std > 0.0) || std <= mean.abs() * 1e-12 {
        return Err(Error::Preprocess("constant brain intensity".into()));
    }
    let data = image
        .data()
        .iter()
        .map(|&x| ((x as f64 - mean) / std) as f32)
        .collect();
    image.with_data(VolumeKind::Image, data)
}

/// Brain mask then z-score.
pub fn preprocess_image(image: &Volume, cfg: &PreprocessConfig) -> Result<(Volume, BrainMask)> {
    let brain = compute_brain_mask(image, cfg)?;
    let normalized = zscore_normalize(image, &brain)?;
    Ok((normalized, brain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropPadRecord {
    pub original_shape: [usize; 3],
    pub target_inplane: (usize, usize),
    pub axis: ViewAxis,
    pub axis_order: AxisOrder,
    /// Per voxel dim, (low, high) amounts: positive pads, negative crops.
    pub offsets: [[i64; 2]; 3],
}

impl CropPadRecord {
    pub fn target_shape(&self) -> [usize; 3] {
        std::array::from_fn(|d| {
            (self.original_shape[d] as i64 + self.offsets[d][0] + self.offsets[d][1]) as usize
        })
    }
}

/// Low/high amounts taking `from` to `to`; an odd difference puts the extra
/// voxel on the high side.
fn split_difference(from: usize, to: usize) -> [i64; 2] {
    let diff = to as i64 - from as i64;
    let low = if diff >= 0 { diff / 2 } else { -((-diff) / 2) };
    [low, diff - low]
}

/// Copies `src` into a grid of `dst_shape` with `dst[x] = src[x - low]`,
/// zero where the source is out of range.
fn shift_copy(src: &Volume, dst_shape: [usize; 3], low: [i64; 3]) -> Vec<f32> {
    let s = src.shape();
    let mut out = vec![0f32; dst_shape.iter().product()];
    let range = |d: usize| {
        let start = low[d].max(0) as usize;
        let end = ((s[d] as i64 + low[d]).min(dst_shape[d] as i64)).max(0) as usize;
        start..end.max(start)
    };
    let (ri, rj, rk) = (range(0), range(1), range(2));
    if ri.is_empty() {
        return out;
    }
    for k in rk {
        let sk = (k as i64 - low[2]) as usize;
        for j in rj.clone() {
            let sj = (j as i64 - low[1]) as usize;
            let si0 = (ri.start as i64 - low[0]) as usize;
            let src_row = src.index(si0, sj, sk);
            let dst_row = ri.start + dst_shape[0] * (j + dst_shape[1] * k);
            let len = ri.len();
            out[dst_row..dst_row + len].copy_from_slice(&src.data()[src_row..src_row + len]);
        }
    }
    out
}

pub fn crop_pad_inplane(
    v: &Volume,
    target: (usize, usize),
    axis: ViewAxis,
) -> Result<(Volume, CropPadRecord)> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::Config(format!("crop/pad target {target:?} must be positive")));
    }
    let order = v
        .axis_order()
        .ok_or_else(|| Error::Contract("volume has no axis-order metadata".into()))?;
    let shape = v.shape();
    let slicing = axis.slicing_dim(order);
    let mut in_plane = (0..3).filter(|&d| d != slicing);
    let (row_dim, col_dim) = (in_plane.next().unwrap(), in_plane.next().unwrap());
    let mut offsets = [[0i64; 2]; 3];
    offsets[row_dim] = split_difference(shape[row_dim], target.0);
    offsets[col_dim] = split_difference(shape[col_dim], target.1);
    let rec = CropPadRecord {
        original_shape: shape,
        target_inplane: target,
        axis,
        axis_order: order,
        offsets,
    };
    let out_shape = rec.target_shape();
    let data = shift_copy(v, out_shape, offsets.map(|o| o[0]));
    let out = Volume::new(out_shape, v.spacing(), v.kind(), data)?.with_axis_order(Some(order));
    Ok((out, rec))
}

pub fn invert_crop_pad(v: &Volume, rec: &CropPadRecord) -> Result<Volume> {
    if v.shape() != rec.target_shape() {
        return Err(Error::Contract(format!(
            "volume shape {:?} does not match crop/pad record target {:?}",
            v.shape(),
            rec.target_shape()
        )));
    }
    let data = shift_copy(v, rec.original_shape, rec.offsets.map(|o| -o[0]));
    Ok(Volume::new(rec.original_shape, v.spacing(), v.kind(), data)?
        .with_axis_order(Some(rec.axis_order)))
}
