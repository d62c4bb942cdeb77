//! Synthetic head volumes with a pair of thin, curved, sagittally oriented
//! sheets as the segmentation target.
//!
//! The brain is an ellipsoid of "white matter" with a "grey matter" rim and
//! two grey deep nuclei. One sheet sits lateral to each nucleus, mirrored
//! across the midline, at an intensity below white matter. Scanner styles
//! vary the sheet contrast and the noise level. Geometry and label depend
//! only on `seed`; noise is drawn from `noise_seed`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_io::{save_volume, Manifest, SubjectRecord};
use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{Volume, VolumeKind};

pub const WHITE_MATTER: f32 = 100.0;
pub const GREY_MATTER: f32 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScannerStyle {
    #[serde(rename = "style_A")]
    A,
    #[serde(rename = "style_B")]
    B,
    #[serde(rename = "style_C")]
    C,
    #[serde(rename = "style_D")]
    D,
}

impl ScannerStyle {
    pub const ALL: [ScannerStyle; 4] = [ScannerStyle::A, ScannerStyle::B, ScannerStyle::C, ScannerStyle::D];

    /// Drop in intensity from white matter to the sheet.
    pub fn contrast_gap(self) -> f32 {
        match self {
            ScannerStyle::A => 45.0,
            ScannerStyle::B | ScannerStyle::D => 32.0,
            ScannerStyle::C => 22.0,
        }
    }

    pub fn noise_sigma(self) -> f32 {
        match self {
            ScannerStyle::A => 3.0,
            ScannerStyle::B => 4.0,
            ScannerStyle::C => 3.0,
            ScannerStyle::D => 6.0,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            ScannerStyle::A => "style_A",
            ScannerStyle::B => "style_B",
            ScannerStyle::C => "style_C",
            ScannerStyle::D => "style_D",
        }
    }
}

impl fmt::Display for ScannerStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ScannerStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().trim_start_matches("style_").to_ascii_uppercase();
        match key.as_str() {
            "A" => Ok(ScannerStyle::A),
            "B" => Ok(ScannerStyle::B),
            "C" => Ok(ScannerStyle::C),
            "D" => Ok(ScannerStyle::D),
            _ => Err(Error::Config(format!("unknown scanner style {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    /// Sheet thickness in mm.
    pub sheet_thickness: f64,
    pub scanner_style: ScannerStyle,
    pub seed: u64,
    pub noise_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            shape: [64, 64, 64],
            spacing: [1.0; 3],
            sheet_thickness: 1.5,
            scanner_style: ScannerStyle::A,
            seed: 0,
            noise_seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&d| d < 16) {
            return Err(Error::Config(format!("phantom shape {:?} is too small", self.shape)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config(format!("non-positive spacing {:?}", self.spacing)));
        }
        let min_spacing = self.spacing.iter().copied().fold(f64::INFINITY, f64::min);
        if !(self.sheet_thickness >= min_spacing) {
            return Err(Error::Config(format!(
                "sheet thickness {} mm is below one voxel ({min_spacing} mm)",
                self.sheet_thickness
            )));
        }
        Ok(())
    }
}

/// Random geometry shared by both hemispheres.
struct Geometry {
    centre: [f64; 3],
    radii: [f64; 3],
    rim: f64,
    lateral: f64,
    amplitude: f64,
    wavelength: [f64; 2],
    phase: [f64; 2],
    half_extent_pa: f64,
    z_range: [f64; 2],
    nucleus_radii: [f64; 3],
    nucleus_gap: f64,
}

impl Geometry {
    fn sample(spec: &PhantomSpec) -> Geometry {
        let mut r = rng::stream(spec.seed, rng::tag("phantom-geometry"));
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng::unit_f64(&mut r);
        // extents in mm
        let ext: Vec<f64> = (0..3).map(|a| spec.shape[a] as f64 * spec.spacing[a]).collect();
        let centre = [
            ext[0] / 2.0 + u(-1.0, 1.0),
            ext[1] / 2.0 + u(-1.5, 1.5),
            ext[2] / 2.0 + u(-1.0, 1.0),
        ];
        let radii = [ext[0] * u(0.40, 0.44), ext[1] * u(0.42, 0.46), ext[2] * u(0.38, 0.42)];
        let nz = ext[2];
        let z_mid = centre[2] + u(-1.5, 1.5);
        let z_half = nz * u(0.14, 0.17);
        Geometry {
            centre,
            radii,
            rim: ext[0] * u(0.05, 0.07),
            lateral: radii[0] * u(0.52, 0.58),
            amplitude: u(0.8, 1.8),
            wavelength: [u(14.0, 22.0), u(12.0, 20.0)],
            phase: [u(0.0, std::f64::consts::TAU), u(0.0, std::f64::consts::TAU)],
            half_extent_pa: radii[1] * u(0.36, 0.44),
            z_range: [z_mid - z_half, z_mid + z_half],
            nucleus_radii: [u(3.0, 4.0), u(6.0, 8.0), u(5.0, 7.0)],
            nucleus_gap: u(2.5, 3.5),
        }
    }

    /// Signed lateral offset of the sheet surface from the midline at (y, z), mm.
    fn surface(&self, y: f64, z: f64) -> f64 {
        let dy = y - self.centre[1];
        let dz = z - self.centre[2];
        self.lateral
            + self.amplitude
                * ((std::f64::consts::TAU * dy / self.wavelength[0] + self.phase[0]).sin()
                    + 0.6 * (std::f64::consts::TAU * dz / self.wavelength[1] + self.phase[1]).sin())
            // gentle bow so the sheet is curved, not planar
            - 0.015 * dy * dy
    }
}

/// Generates one image/label pair. The label is computed before any noise.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, Volume)> {
    spec.validate()?;
    let g = Geometry::sample(spec);
    let [d0, d1, d2] = spec.shape;
    let [s0, s1, s2] = spec.spacing;
    let half = spec.sheet_thickness / 2.0;
    let gap = spec.scanner_style.contrast_gap();
    let mut image = vec![0f32; d0 * d1 * d2];
    let mut label = vec![0f32; d0 * d1 * d2];
    let mut inside = vec![false; d0 * d1 * d2];
    let axial_lo = 0.2 * d2 as f64 * s2;
    let axial_hi = 0.8 * d2 as f64 * s2;
    for k in 0..d2 {
        let z = (k as f64 + 0.5) * s2;
        for j in 0..d1 {
            let y = (j as f64 + 0.5) * s1;
            for i in 0..d0 {
                let x = (i as f64 + 0.5) * s0;
                let idx = i + d0 * (j + d1 * k);
                let q = [
                    (x - g.centre[0]) / g.radii[0],
                    (y - g.centre[1]) / g.radii[1],
                    (z - g.centre[2]) / g.radii[2],
                ];
                let rho = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                if rho > 1.0 {
                    continue;
                }
                inside[idx] = true;
                let min_r = g.radii.iter().copied().fold(f64::INFINITY, f64::min);
                let depth = (1.0 - rho) * min_r;
                let mut value = if depth < g.rim { GREY_MATTER } else { WHITE_MATTER };
                let lateral = (x - g.centre[0]).abs();
                let nucleus_x = g.lateral - g.nucleus_gap - g.nucleus_radii[0];
                let n = [
                    (lateral - nucleus_x) / g.nucleus_radii[0],
                    (y - g.centre[1]) / g.nucleus_radii[1],
                    (z - g.centre[2]) / g.nucleus_radii[2],
                ];
                if n[0] * n[0] + n[1] * n[1] + n[2] * n[2] <= 1.0 {
                    value = GREY_MATTER;
                }
                let in_band = (y - g.centre[1]).abs() <= g.half_extent_pa
                    && z >= g.z_range[0].max(axial_lo)
                    && z <= g.z_range[1].min(axial_hi);
                if in_band && depth >= g.rim && (lateral - g.surface(y, z)).abs() <= half {
                    label[idx] = 1.0;
                    value = WHITE_MATTER - gap;
                }
                image[idx] = value;
            }
        }
    }
    let normal = Normal::new(0.0f32, spec.scanner_style.noise_sigma()).expect("positive sigma");
    let mut r = rng::stream(spec.noise_seed, rng::tag("phantom-noise"));
    for (v, &inb) in image.iter_mut().zip(&inside) {
        if inb {
            *v = (*v + normal.sample(&mut r)).max(1.0);
        }
    }
    let image = Volume::new(spec.shape, spec.spacing, VolumeKind::Image, image)?;
    let label = Volume::new(spec.shape, spec.spacing, VolumeKind::Mask, label)?;
    Ok((image, label))
}

/// Writes `images/<id>.nii.gz`, `labels/<id>.nii.gz` and `manifest.csv`
/// under `out_dir`, `count` subjects per style.
pub fn generate_cohort(
    counts: &BTreeMap<ScannerStyle, usize>,
    seed: u64,
    base: &PhantomSpec,
    out_dir: &Path,
) -> Result<Manifest> {
    for sub in ["images", "labels"] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut subjects = Vec::new();
    let mut index = 0u64;
    for (&style, &count) in counts {
        for n in 0..count {
            let id = format!("phantom-{}-{:03}", style.id().trim_start_matches("style_"), n);
            let spec = PhantomSpec {
                scanner_style: style,
                seed: rng::derive_seed(seed, 2 * index),
                noise_seed: rng::derive_seed(seed, 2 * index + 1),
                ..base.clone()
            };
            index += 1;
            let (image, label) = generate_phantom(&spec)?;
            let image_path = format!("images/{id}.nii.gz");
            let label_path = format!("labels/{id}.nii.gz");
            save_volume(&image, out_dir.join(&image_path))?;
            save_volume(&label, out_dir.join(&label_path))?;
            subjects.push(SubjectRecord {
                subject_id: id,
                scanner_id: style.id().to_string(),
                image_path,
                label_path,
            });
        }
    }
    let manifest = Manifest::new(out_dir, subjects)?;
    manifest.write(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Equal counts for every style.
pub fn uniform_counts(per_style: usize) -> BTreeMap<ScannerStyle, usize> {
    ScannerStyle::ALL.iter().map(|&s| (s, per_style)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{load_mask, load_volume};
    use proptest::prelude::*;

    #[test]
    fn default_label_size_is_claustrum_scale() {
        for style in ScannerStyle::ALL {
            for seed in 0..4 {
                let spec = PhantomSpec { scanner_style: style, seed, ..Default::default() };
                let (_, label) = generate_phantom(&spec).unwrap();
                let n = label.count_nonzero();
                assert!((300..=3000).contains(&n), "{style} seed {seed}: {n} voxels");
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_pair() {
        let spec = PhantomSpec { seed: 9, noise_seed: 4, ..Default::default() };
        assert_eq!(generate_phantom(&spec).unwrap(), generate_phantom(&spec).unwrap());
    }

    #[test]
    fn label_ignores_noise_seed() {
        let a = PhantomSpec { seed: 3, noise_seed: 1, ..Default::default() };
        let b = PhantomSpec { noise_seed: 2, ..a.clone() };
        let (ia, la) = generate_phantom(&a).unwrap();
        let (ib, lb) = generate_phantom(&b).unwrap();
        assert_eq!(la, lb);
        assert_ne!(ia, ib);
    }

    #[test]
    fn sheets_stay_in_middle_axial_slab() {
        let (_, label) = generate_phantom(&PhantomSpec { seed: 5, ..Default::default() }).unwrap();
        let [_, _, d2] = label.shape();
        for idx in 0..label.len() {
            if label.data()[idx] != 0.0 {
                let k = label.coords(idx)[2];
                assert!(k >= d2 / 5 && k < d2 - d2 / 5, "label at axial slice {k}");
            }
        }
    }

    #[test]
    fn both_hemispheres_are_labelled_and_background_is_zero() {
        let (image, label) = generate_phantom(&PhantomSpec { seed: 1, ..Default::default() }).unwrap();
        let mid = label.shape()[0] / 2;
        let (mut left, mut right) = (0, 0);
        for idx in 0..label.len() {
            if label.data()[idx] != 0.0 {
                if label.coords(idx)[0] < mid { left += 1 } else { right += 1 }
            }
        }
        assert!(left > 100 && right > 100);
        assert_eq!(image.get(0, 0, 0), 0.0);
    }

    #[test]
    fn sub_voxel_thickness_is_rejected() {
        let spec = PhantomSpec { sheet_thickness: 0.5, ..Default::default() };
        assert!(matches!(generate_phantom(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn cohort_writes_manifest_and_volumes() {
        let dir = tempfile::tempdir().unwrap();
        let mut counts = uniform_counts(1);
        counts.insert(ScannerStyle::C, 0);
        let base = PhantomSpec { shape: [24, 24, 24], sheet_thickness: 1.5, ..Default::default() };
        let m = generate_cohort(&counts, 7, &base, dir.path()).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.subjects.iter().all(|s| s.scanner_id != "style_C"));
        let back = Manifest::read(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(back.subjects, m.subjects);
        let s = &m.subjects[0];
        assert_eq!(load_volume(m.resolve(&s.image_path)).unwrap().kind(), VolumeKind::Image);
        assert_eq!(load_mask(m.resolve(&s.label_path)).unwrap().shape(), [24, 24, 24]);
    }

    #[test]
    fn full_scale_cohort_has_uneven_scanner_counts() {
        let dir = tempfile::tempdir().unwrap();
        let counts: BTreeMap<_, _> = [(ScannerStyle::A, 15), (ScannerStyle::B, 46), (ScannerStyle::C, 103), (ScannerStyle::D, 17)]
            .into_iter()
            .collect();
        let base = PhantomSpec { shape: [16, 16, 16], ..Default::default() };
        let m = generate_cohort(&counts, 1, &base, dir.path()).unwrap();
        assert_eq!(m.len(), 181);
        for (style, n) in counts {
            assert_eq!(m.subjects.iter().filter(|s| s.scanner_id == style.id()).count(), n);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn sheet_is_thin_along_lateral_axis(seed in any::<u64>()) {
            let spec = PhantomSpec { seed, ..Default::default() };
            let (_, label) = generate_phantom(&spec).unwrap();
            let [d0, d1, d2] = label.shape();
            let limit = (spec.sheet_thickness / 1.0).ceil() as usize + 1;
            for k in 0..d2 { for j in 0..d1 {
                let mut run = 0;
                for i in 0..d0 {
                    if label.get(i, j, k) != 0.0 { run += 1; prop_assert!(run <= limit); } else { run = 0; }
                }
            }}
        }
    }
}
