//! The 3D voxel grid shared by images, masks and probability maps.
//!
//! Voxels are stored in NIfTI (Fortran) order: the first index varies
//! fastest, so `(i, j, k)` lives at `i + d1 * (j + d2 * k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Image,
    Mask,
    Probability,
}

/// World direction a voxel axis runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Anatomical {
    LeftRight,
    PosteriorAnterior,
    InferiorSuperior,
}

/// Anatomical direction of each of the three voxel axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisOrder(pub [Anatomical; 3]);

impl AxisOrder {
    /// `i` runs left-right, `j` posterior-anterior, `k` inferior-superior.
    pub const CANONICAL: AxisOrder = AxisOrder([
        Anatomical::LeftRight,
        Anatomical::PosteriorAnterior,
        Anatomical::InferiorSuperior,
    ]);

    pub fn new(axes: [Anatomical; 3]) -> Result<Self> {
        let distinct = axes[0] != axes[1] && axes[1] != axes[2] && axes[0] != axes[2];
        if !distinct {
            return Err(Error::Contract(format!(
                "axis order must name three distinct directions, got {axes:?}"
            )));
        }
        Ok(AxisOrder(axes))
    }

    /// Voxel dimension running along `direction`.
    pub fn dim_of(&self, direction: Anatomical) -> usize {
        self.0
            .iter()
            .position(|&a| a == direction)
            .expect("axis order holds all three directions")
    }
}

impl Default for AxisOrder {
    fn default() -> Self {
        AxisOrder::CANONICAL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    shape: [usize; 3],
    spacing: [f64; 3],
    kind: VolumeKind,
    axis_order: Option<AxisOrder>,
}

impl Volume {
    pub fn new(
        shape: [usize; 3],
        spacing: [f64; 3],
        kind: VolumeKind,
        data: Vec<f32>,
    ) -> Result<Self> {
        let v = Volume {
            data,
            shape,
            spacing,
            kind,
            axis_order: Some(AxisOrder::CANONICAL),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn zeros(shape: [usize; 3], spacing: [f64; 3], kind: VolumeKind) -> Self {
        Volume {
            data: vec![0.0; shape.iter().product()],
            shape,
            spacing,
            kind,
            axis_order: Some(AxisOrder::CANONICAL),
        }
    }

    /// Blank volume of the given kind with this volume's geometry.
    pub fn zeros_like(&self, kind: VolumeKind) -> Self {
        Volume {
            data: vec![0.0; self.data.len()],
            shape: self.shape,
            spacing: self.spacing,
            kind,
            axis_order: self.axis_order,
        }
    }

    /// Same geometry, new voxel values.
    pub fn with_data(&self, kind: VolumeKind, data: Vec<f32>) -> Result<Self> {
        let v = Volume {
            data,
            shape: self.shape,
            spacing: self.spacing,
            kind,
            axis_order: self.axis_order,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn with_axis_order(mut self, order: Option<AxisOrder>) -> Self {
        self.axis_order = order;
        self
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        self.spacing = spacing;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let expected: usize = self.shape.iter().product();
        if self.data.len() != expected {
            return Err(Error::Contract(format!(
                "volume data has {} voxels but shape {:?} needs {expected}",
                self.data.len(),
                self.shape
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Contract(format!(
                "voxel spacing must be strictly positive, got {:?}",
                self.spacing
            )));
        }
        match self.kind {
            VolumeKind::Mask => {
                if let Some(bad) = self.data.iter().find(|&&x| x != 0.0 && x != 1.0) {
                    return Err(Error::Contract(format!("mask voxel {bad} is not 0 or 1")));
                }
            }
            VolumeKind::Probability => {
                if let Some(bad) = self.data.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
                    return Err(Error::Contract(format!(
                        "probability voxel {bad} is outside [0, 1]"
                    )));
                }
            }
            VolumeKind::Image => {}
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn axis_order(&self) -> Option<AxisOrder> {
        self.axis_order
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Raw mutable access. Callers are responsible for keeping kind invariants.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.shape[0] * (j + self.shape[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.shape[0];
        let rest = idx / self.shape[0];
        [i, rest % self.shape[1], rest / self.shape[1]]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) {
        let idx = self.index(i, j, k);
        self.data[idx] = value;
    }

    /// Number of nonzero voxels.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != 0.0).count()
    }

    /// Voxel-wise `x != 0` as a mask.
    pub fn binarized(&self) -> Volume {
        Volume {
            data: self
                .data
                .iter()
                .map(|&x| if x != 0.0 { 1.0 } else { 0.0 })
                .collect(),
            shape: self.shape,
            spacing: self.spacing,
            kind: VolumeKind::Mask,
            axis_order: self.axis_order,
        }
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.shape == other.shape
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_first_axis_fastest() {
        let v = Volume::new(
            [2, 3, 4],
            [1.0; 3],
            VolumeKind::Image,
            (0..24).map(|x| x as f32).collect(),
        )
        .unwrap();
        assert_eq!(v.get(1, 0, 0), 1.0);
        assert_eq!(v.get(0, 1, 0), 2.0);
        assert_eq!(v.get(0, 0, 1), 6.0);
        assert_eq!(v.coords(v.index(1, 2, 3)), [1, 2, 3]);
    }

    #[test]
    fn rejects_bad_spacing_and_values() {
        assert!(Volume::new([1, 1, 1], [0.0, 1.0, 1.0], VolumeKind::Image, vec![0.0]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0; 3], VolumeKind::Mask, vec![2.0]).is_err());
        assert!(Volume::new([1, 1, 1], [1.0; 3], VolumeKind::Probability, vec![1.5]).is_err());
        assert!(Volume::new([2, 1, 1], [1.0; 3], VolumeKind::Image, vec![0.0]).is_err());
    }

    #[test]
    fn axis_order_lookup() {
        let o = AxisOrder::new([
            Anatomical::InferiorSuperior,
            Anatomical::LeftRight,
            Anatomical::PosteriorAnterior,
        ])
        .unwrap();
        assert_eq!(o.dim_of(Anatomical::InferiorSuperior), 0);
        assert_eq!(o.dim_of(Anatomical::PosteriorAnterior), 2);
        assert!(AxisOrder::new([Anatomical::LeftRight; 3]).is_err());
    }
}
