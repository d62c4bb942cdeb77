//! Slicing a volume into per-view 2D stacks and back.
//!
//! A view stack holds the slices perpendicular to one anatomical direction,
//! in ascending voxel order. Slice pixel `(r, c)` indexes the two remaining
//! voxel axes in ascending order, so for an axial stack of a canonical
//! `(i, j, k)` volume, voxel `(i, j, k)` is pixel `(i, j)` of slice `k`.
//! Both directions are pure index permutations.

use std::fmt;
use std::str::FromStr;
use std::sync::Once;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Anatomical, AxisOrder, Volume, VolumeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewAxis {
    Axial,
    Coronal,
    Sagittal,
}

impl ViewAxis {
    pub const ALL: [ViewAxis; 3] = [ViewAxis::Axial, ViewAxis::Coronal, ViewAxis::Sagittal];

    /// Direction the slices are perpendicular to.
    pub fn normal(self) -> Anatomical {
        match self {
            ViewAxis::Axial => Anatomical::InferiorSuperior,
            ViewAxis::Coronal => Anatomical::PosteriorAnterior,
            ViewAxis::Sagittal => Anatomical::LeftRight,
        }
    }

    pub fn letter(self) -> char {
        match self {
            ViewAxis::Axial => 'A',
            ViewAxis::Coronal => 'C',
            ViewAxis::Sagittal => 'S',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ViewAxis::Axial => "axial",
            ViewAxis::Coronal => "coronal",
            ViewAxis::Sagittal => "sagittal",
        }
    }

    /// Voxel dimension the view slices along, per the volume's axis order.
    pub fn slicing_dim(self, order: AxisOrder) -> usize {
        order.dim_of(self.normal())
    }
}

impl fmt::Display for ViewAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ViewAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "axial" => Ok(ViewAxis::Axial),
            "c" | "coronal" => Ok(ViewAxis::Coronal),
            "s" | "sagittal" => Ok(ViewAxis::Sagittal),
            other => Err(Error::Config(format!("unknown view '{other}'"))),
        }
    }
}

/// Formats a view combination as e.g. `A+C`.
pub fn combination_label(views: &[ViewAxis]) -> String {
    views
        .iter()
        .map(|v| v.letter().to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// Parses `A+C`, `axial,coronal` and similar.
pub fn parse_views(text: &str) -> Result<Vec<ViewAxis>> {
    let mut views: Vec<ViewAxis> = text
        .split([',', '+', ' '])
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    views.sort();
    views.dedup();
    if views.is_empty() {
        return Err(Error::Config("no views given".into()));
    }
    Ok(views)
}

/// Row-major 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Slice2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Slice2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewStack {
    pub axis: ViewAxis,
    pub slices: Vec<Slice2>,
    pub source_shape: [usize; 3],
    pub spacing: [f64; 3],
    pub kind: VolumeKind,
    pub axis_order: AxisOrder,
}

impl ViewStack {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// (slicing dim, row dim, col dim) of the source volume.
    pub fn dims(&self) -> (usize, usize, usize) {
        layout(self.axis.slicing_dim(self.axis_order))
    }
}

fn layout(slicing: usize) -> (usize, usize, usize) {
    let mut rest = (0..3).filter(|&d| d != slicing);
    let row = rest.next().expect("three dims");
    let col = rest.next().expect("three dims");
    (slicing, row, col)
}

static ANISOTROPY_WARNING: Once = Once::new();

pub fn to_view(v: &Volume, axis: ViewAxis) -> Result<ViewStack> {
    let order = v.axis_order().ok_or_else(|| {
        Error::Contract("volume has no axis-order metadata; cannot locate view axis".into())
    })?;
    let spacing = v.spacing();
    let (smin, smax) = spacing
        .iter()
        .fold((f64::INFINITY, 0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if smax > smin * 1.01 {
        ANISOTROPY_WARNING.call_once(|| {
            log::warn!("anisotropic voxels {spacing:?}: slicing without resampling");
        });
    }
    let shape = v.shape();
    let (a, p, q) = layout(axis.slicing_dim(order));
    let (rows, cols) = (shape[p], shape[q]);
    let mut slices = Vec::with_capacity(shape[a]);
    let mut idx = [0usize; 3];
    for s in 0..shape[a] {
        let mut slice = Slice2::zeros(rows, cols);
        idx[a] = s;
        for r in 0..rows {
            idx[p] = r;
            for c in 0..cols {
                idx[q] = c;
                slice.data[r * cols + c] = v.get(idx[0], idx[1], idx[2]);
            }
        }
        slices.push(slice);
    }
    Ok(ViewStack {
        axis,
        slices,
        source_shape: shape,
        spacing,
        kind: v.kind(),
        axis_order: order,
    })
}

pub fn from_view(stack: &ViewStack) -> Result<Volume> {
    let shape = stack.source_shape;
    let (a, p, q) = stack.dims();
    if stack.slices.len() != shape[a] {
        return Err(Error::Contract(format!(
            "{} stack has {} slices, source extent is {}",
            stack.axis,
            stack.slices.len(),
            shape[a]
        )));
    }
    let (rows, cols) = (shape[p], shape[q]);
    if let Some((i, bad)) = stack
        .slices
        .iter()
        .enumerate()
        .find(|(_, s)| s.rows != rows || s.cols != cols || s.data.len() != rows * cols)
    {
        return Err(Error::Contract(format!(
            "slice {i} is {}x{} ({} values), expected {rows}x{cols}",
            bad.rows,
            bad.cols,
            bad.data.len()
        )));
    }
    let mut out = Volume::zeros(shape, stack.spacing, VolumeKind::Image);
    let mut idx = [0usize; 3];
    for (s, slice) in stack.slices.iter().enumerate() {
        idx[a] = s;
        for r in 0..rows {
            idx[p] = r;
            for c in 0..cols {
                idx[q] = c;
                out.set(idx[0], idx[1], idx[2], slice.data[r * cols + c]);
            }
        }
    }
    let data = out.into_data();
    Volume::new(shape, stack.spacing, stack.kind, data)
        .map(|v| v.with_axis_order(Some(stack.axis_order)))
}
