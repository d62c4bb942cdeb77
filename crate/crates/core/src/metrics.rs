//! Overlap and distance metrics between binary masks.
//!
//! Conventions for empty inputs: VS and DSC are 1.0 when both masks are
//! empty; HD95 is an error whenever either mask is empty.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HdMode {
    /// Every foreground voxel takes part.
    #[default]
    Full,
    /// Only foreground voxels with a 6-neighbour outside the mask.
    Surface,
}

fn check_pair(g: &Volume, p: &Volume) -> Result<()> {
    if g.shape() != p.shape() {
        return Err(Error::Metric(format!(
            "shape mismatch: {:?} vs {:?}",
            g.shape(),
            p.shape()
        )));
    }
    Ok(())
}

fn counts(g: &Volume, p: &Volume) -> (usize, usize, usize) {
    let (mut vg, mut vp, mut both) = (0, 0, 0);
    for (&a, &b) in g.data().iter().zip(p.data()) {
        let (a, b) = (a != 0.0, b != 0.0);
        vg += a as usize;
        vp += b as usize;
        both += (a && b) as usize;
    }
    (vg, vp, both)
}

/// `1 - |V_G - V_P| / (V_G + V_P)`.
pub fn volumetric_similarity(g: &Volume, p: &Volume) -> Result<f64> {
    check_pair(g, p)?;
    let (vg, vp, _) = counts(g, p);
    if vg + vp == 0 {
        return Ok(1.0);
    }
    Ok(1.0 - (vg as f64 - vp as f64).abs() / (vg + vp) as f64)
}

/// `2 |G ∩ P| / (|G| + |P|)`.
pub fn dice_coefficient(g: &Volume, p: &Volume) -> Result<f64> {
    check_pair(g, p)?;
    let (vg, vp, both) = counts(g, p);
    if vg + vp == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (vg + vp) as f64)
}

pub fn hausdorff95(g: &Volume, p: &Volume) -> Result<f64> {
    hausdorff95_with(g, p, HdMode::Full)
}

/// Symmetric 95th-percentile Hausdorff distance in millimetres.
pub fn hausdorff95_with(g: &Volume, p: &Volume, mode: HdMode) -> Result<f64> {
    check_pair(g, p)?;
    if g.spacing() != p.spacing() {
        return Err(Error::Metric(format!(
            "spacing mismatch: {:?} vs {:?}",
            g.spacing(),
            p.spacing()
        )));
    }
    let gs = point_set(g, mode);
    let ps = point_set(p, mode);
    if gs.iter().all(|&b| !b) || ps.iter().all(|&b| !b) {
        return Err(Error::Metric("HD undefined for empty mask".into()));
    }
    let shape = g.shape();
    let spacing = g.spacing();
    let d_gp = directed_percentile(&gs, &squared_distance_map(&ps, shape, spacing));
    let d_pg = directed_percentile(&ps, &squared_distance_map(&gs, shape, spacing));
    Ok(d_gp.max(d_pg))
}

fn directed_percentile(from: &[bool], dist2: &[f64]) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .zip(dist2)
        .filter(|(&f, _)| f)
        .map(|(_, &d2)| d2.sqrt())
        .collect();
    d.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&d, 0.95)
}

fn point_set(v: &Volume, mode: HdMode) -> Vec<bool> {
    let fg: Vec<bool> = v.data().iter().map(|&x| x != 0.0).collect();
    if mode == HdMode::Full {
        return fg;
    }
    let [d0, d1, d2] = v.shape();
    let mut out = vec![false; fg.len()];
    for k in 0..d2 {
        for j in 0..d1 {
            for i in 0..d0 {
                let idx = i + d0 * (j + d1 * k);
                if !fg[idx] {
                    continue;
                }
                let interior = i > 0
                    && i + 1 < d0
                    && j > 0
                    && j + 1 < d1
                    && k > 0
                    && k + 1 < d2
                    && fg[idx - 1]
                    && fg[idx + 1]
                    && fg[idx - d0]
                    && fg[idx + d0]
                    && fg[idx - d0 * d1]
                    && fg[idx + d0 * d1];
                out[idx] = !interior;
            }
        }
    }
    out
}

/// Squared distance in mm from every voxel to the nearest `target` voxel.
///
/// Three separable passes; each adds one axis term in the order
/// `((dx sx)^2 + (dy sy)^2) + (dz sz)^2`, so the values are bit-identical to
/// evaluating that expression for the nearest voxel directly.
pub fn squared_distance_map(target: &[bool], shape: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let strides = [1, shape[0], shape[0] * shape[1]];
    let mut f: Vec<f64> = target
        .iter()
        .map(|&t| if t { 0.0 } else { f64::INFINITY })
        .collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let n = shape[axis];
        let stride = strides[axis];
        let s = spacing[axis];
        let steps: Vec<f64> = (0..n)
            .map(|d| {
                let a = d as f64 * s;
                a * a
            })
            .collect();
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for b in 0..shape[others[1]] {
            for a in 0..shape[others[0]] {
                let base = a * strides[others[0]] + b * strides[others[1]];
                line.clear();
                line.extend((0..n).map(|t| f[base + t * stride]));
                out.clear();
                out.resize(n, f64::INFINITY);
                for (x, o) in out.iter_mut().enumerate() {
                    let mut best = f64::INFINITY;
                    for (d, &step) in steps.iter().enumerate() {
                        if step > best {
                            break;
                        }
                        for y in [x.wrapping_sub(d), x + d] {
                            if y >= n || line[y].is_infinite() {
                                continue;
                            }
                            let cand = line[y] + step;
                            if cand < best {
                                best = cand;
                            }
                        }
                    }
                    *o = best;
                }
                for t in 0..n {
                    f[base + t * stride] = out[t];
                }
            }
        }
    }
    f
}

/// A metric value or the reason it could not be computed.
pub type MetricValue = std::result::Result<f64, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTriple {
    pub vs: MetricValue,
    pub hd95: MetricValue,
    pub dsc: MetricValue,
}

impl MetricTriple {
    pub fn is_complete(&self) -> bool {
        self.vs.is_ok() && self.hd95.is_ok() && self.dsc.is_ok()
    }

    /// Error markers joined for a status column; "ok" when complete.
    pub fn status(&self) -> String {
        let errs: Vec<String> = [("vs", &self.vs), ("hd95", &self.hd95), ("dsc", &self.dsc)]
            .iter()
            .filter_map(|(name, v)| v.as_ref().err().map(|e| format!("{name}: {e}")))
            .collect();
        if errs.is_empty() {
            "ok".into()
        } else {
            errs.join("; ")
        }
    }
}

pub fn evaluate_subject(g: &Volume, p: &Volume) -> MetricTriple {
    let s = |r: Result<f64>| r.map_err(|e| e.to_string());
    MetricTriple {
        vs: s(volumetric_similarity(g, p)),
        hd95: s(hausdorff95(g, p)),
        dsc: s(dice_coefficient(g, p)),
    }
}

/// One line of the per-subject metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub subject_id: String,
    pub scanner_id: String,
    pub fold: String,
    pub vs: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub dsc: Option<f64>,
    pub status: String,
}

impl MetricRow {
    pub fn from_triple(subject_id: &str, scanner_id: &str, fold: &str, t: &MetricTriple) -> Self {
        MetricRow {
            subject_id: subject_id.into(),
            scanner_id: scanner_id.into(),
            fold: fold.into(),
            vs: t.vs.as_ref().ok().copied(),
            hd95_mm: t.hd95.as_ref().ok().copied(),
            dsc: t.dsc.as_ref().ok().copied(),
            status: t.status(),
        }
    }

    pub fn failed(subject_id: &str, scanner_id: &str, fold: &str, reason: &str) -> Self {
        MetricRow {
            subject_id: subject_id.into(),
            scanner_id: scanner_id.into(),
            fold: fold.into(),
            vs: None,
            hd95_mm: None,
            dsc: None,
            status: format!("error: {reason}"),
        }
    }

    pub fn is_error(&self) -> bool {
        self.status.starts_with("error")
    }
}

pub fn write_metric_rows(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
