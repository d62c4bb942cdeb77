//! NIfTI-1 volume I/O (`.nii` and `.nii.gz`).
//!
//! Masks are written as UINT8, images and probability maps as FLOAT32. The
//! volume kind is tagged in the header description so that probability maps
//! survive a round trip; untagged files fall back to the data type (integer
//! types load as masks, everything else as images).

use std::path::Path;

use ndarray::{Array3, ShapeBuilder};
use nifti::writer::WriterOptions;
use nifti::IntoNdArray;
use nifti::{NiftiHeader, NiftiObject, NiftiType, ReaderOptions};

use crate::error::{Error, Result};
use crate::volume::{Anatomical, AxisOrder, Volume, VolumeKind};

const KIND_TAG: &str = "claustrum-seg kind=";

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    read(path.as_ref(), None)
}

/// Loads a label file; any nonzero voxel becomes 1.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Volume> {
    read(path.as_ref(), Some(VolumeKind::Mask))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Volume> {
    read(path.as_ref(), Some(VolumeKind::Image))
}

fn read(path: &Path, forced: Option<VolumeKind>) -> Result<Volume> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| nifti_error(path, e))?;
    let header = obj.header().clone();
    let dims = header.dim().map_err(|e| nifti_error(path, e))?.to_vec();
    // trailing singleton dimensions (e.g. a 4D file with one frame) are tolerated
    let effective = dims.iter().rposition(|&d| d > 1).map_or(0, |p| p + 1);
    if dims.len() < 3 || effective > 3 || dims[..3].contains(&0) {
        return Err(Error::format(
            path,
            format!("expected a 3D volume, found dimensions {dims:?}"),
        ));
    }
    let shape = [dims[0] as usize, dims[1] as usize, dims[2] as usize];

    let datatype = header.data_type().map_err(|e| nifti_error(path, e))?;
    let kind = forced
        .or_else(|| tagged_kind(&header))
        .unwrap_or(if is_integer(datatype) {
            VolumeKind::Mask
        } else {
            VolumeKind::Image
        });

    let array = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| nifti_error(path, e))?;
    let n: usize = shape.iter().product();
    // memory order of the returned array is Fortran, matching Volume
    let mut data: Vec<f32> = match array.as_slice_memory_order() {
        Some(s) if array.t().is_standard_layout() => s[..n].to_vec(),
        _ => array.t().iter().copied().take(n).collect(),
    };
    if kind == VolumeKind::Mask {
        for x in &mut data {
            *x = if *x != 0.0 { 1.0 } else { 0.0 };
        }
    }

    let spacing = [
        header.pixdim[1].abs() as f64,
        header.pixdim[2].abs() as f64,
        header.pixdim[3].abs() as f64,
    ];
    // zero pixdim is common in hand-made files; treat as 1mm
    let spacing = spacing.map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
    let order = axis_order_from_header(&header);
    Volume::new(shape, spacing, kind, data)
        .map_err(|e| Error::format(path, e.to_string()))
        .map(|v| v.with_axis_order(Some(order)))
}

pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("parent directory {} does not exist", parent.display()),
            ),
        ));
    }
    let header = header_for(volume);
    let shape = volume.shape();
    let options = WriterOptions::new(path).reference_header(&header);
    let result = match volume.kind() {
        VolumeKind::Mask => {
            let bytes: Vec<u8> = volume.data().iter().map(|&x| (x != 0.0) as u8).collect();
            let arr = Array3::from_shape_vec((shape[0], shape[1], shape[2]).f(), bytes)
                .expect("shape checked by Volume");
            options.write_nifti(&arr)
        }
        VolumeKind::Image | VolumeKind::Probability => {
            let arr =
                Array3::from_shape_vec((shape[0], shape[1], shape[2]).f(), volume.data().to_vec())
                    .expect("shape checked by Volume");
            options.write_nifti(&arr)
        }
    };
    result.map_err(|e| match e {
        nifti::NiftiError::Io(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

fn header_for(volume: &Volume) -> NiftiHeader {
    let spacing = volume.spacing();
    let order = volume.axis_order().unwrap_or_default();
    let mut header = NiftiHeader {
        xyzt_units: 2, // millimetres
        qform_code: 0,
        sform_code: 1,
        ..NiftiHeader::default()
    };
    header.pixdim[1] = spacing[0] as f32;
    header.pixdim[2] = spacing[1] as f32;
    header.pixdim[3] = spacing[2] as f32;
    let mut rows = [[0f32; 4]; 3];
    for (col, &direction) in order.0.iter().enumerate() {
        rows[world_row(direction)][col] = spacing[col] as f32;
    }
    header.srow_x = rows[0];
    header.srow_y = rows[1];
    header.srow_z = rows[2];
    let kind = match volume.kind() {
        VolumeKind::Image => "image",
        VolumeKind::Mask => "mask",
        VolumeKind::Probability => "probability",
    };
    let mut descrip = format!("{KIND_TAG}{kind}").into_bytes();
    descrip.resize(80, 0);
    header.descrip = descrip;
    header
}

fn tagged_kind(header: &NiftiHeader) -> Option<VolumeKind> {
    let text = String::from_utf8_lossy(&header.descrip);
    let rest = text.trim_end_matches('\0').strip_prefix(KIND_TAG)?;
    match rest.trim() {
        "image" => Some(VolumeKind::Image),
        "mask" => Some(VolumeKind::Mask),
        "probability" => Some(VolumeKind::Probability),
        _ => None,
    }
}

fn is_integer(t: NiftiType) -> bool {
    matches!(
        t,
        NiftiType::Uint8
            | NiftiType::Int8
            | NiftiType::Uint16
            | NiftiType::Int16
            | NiftiType::Uint32
            | NiftiType::Int32
            | NiftiType::Uint64
            | NiftiType::Int64
    )
}

fn world_row(direction: Anatomical) -> usize {
    match direction {
        Anatomical::LeftRight => 0,
        Anatomical::PosteriorAnterior => 1,
        Anatomical::InferiorSuperior => 2,
    }
}

fn direction_of_row(row: usize) -> Anatomical {
    match row {
        0 => Anatomical::LeftRight,
        1 => Anatomical::PosteriorAnterior,
        _ => Anatomical::InferiorSuperior,
    }
}

/// Dominant world direction of each voxel axis, from the sform if present,
/// else the qform quaternion, else the canonical (i, j, k) = (x, y, z).
fn axis_order_from_header(header: &NiftiHeader) -> AxisOrder {
    let columns: Option<[[f64; 3]; 3]> = if header.sform_code > 0 {
        let rows = [header.srow_x, header.srow_y, header.srow_z];
        Some(std::array::from_fn(|c| {
            std::array::from_fn(|r| rows[r][c] as f64)
        }))
    } else if header.qform_code > 0 {
        let (b, c, d) = (
            header.quatern_b as f64,
            header.quatern_c as f64,
            header.quatern_d as f64,
        );
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let r = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
        ];
        Some(std::array::from_fn(|col| std::array::from_fn(|row| r[row][col])))
    } else {
        None
    };
    let Some(columns) = columns else {
        return AxisOrder::CANONICAL;
    };
    let axes = columns.map(|col| {
        let row = (0..3)
            .max_by(|&x, &y| col[x].abs().total_cmp(&col[y].abs()))
            .unwrap_or(0);
        direction_of_row(row)
    });
    AxisOrder::new(axes).unwrap_or_else(|_| {
        log::warn!("oblique or degenerate affine; assuming canonical axis order");
        AxisOrder::CANONICAL
    })
}

fn nifti_error(path: &Path, e: nifti::NiftiError) -> Error {
    match e {
        nifti::NiftiError::Io(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_mask(shape: [usize; 3], seed: u64) -> Volume {
        let mut r = rng::seeded(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| (r.next_u32() & 1) as f32).collect();
        Volume::new(shape, [1.0, 1.0, 1.0], VolumeKind::Mask, data).unwrap()
    }

    #[test]
    fn mask_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mask = random_mask([16, 16, 16], 1);
        let path = dir.path().join("m.nii.gz");
        save_volume(&mask, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.kind(), VolumeKind::Mask);
        assert_eq!(back.data(), mask.data());
        assert_eq!(back.shape(), [16, 16, 16]);
    }

    #[test]
    fn image_round_trip_keeps_spacing_and_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng::seeded(2);
        let data: Vec<f32> = (0..4 * 5 * 6)
            .map(|_| rng::unit_f64(&mut r) as f32 * 1000.0 - 300.0)
            .collect();
        let img = Volume::new([4, 5, 6], [0.9, 1.0, 2.5], VolumeKind::Image, data).unwrap();
        let path = dir.path().join("img.nii");
        save_volume(&img, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.kind(), VolumeKind::Image);
        assert_eq!(back.shape(), [4, 5, 6]);
        for (a, b) in back.spacing().iter().zip(img.spacing()) {
            assert!((a - b).abs() < 1e-6);
        }
        let max = img.data().iter().fold(0f32, |m, &x| m.max(x.abs()));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6 * max);
        }
        assert_eq!(back.axis_order(), Some(AxisOrder::CANONICAL));
    }

    #[test]
    fn probability_kind_survives_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = Volume::new([2, 2, 2], [1.0; 3], VolumeKind::Probability, vec![0.25; 8]).unwrap();
        let path = dir.path().join("p.nii.gz");
        save_volume(&p, &path).unwrap();
        assert_eq!(load_volume(&path).unwrap().kind(), VolumeKind::Probability);
    }

    #[test]
    fn non_binary_label_values_are_binarized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("label.nii");
        let raw = Array3::from_shape_vec((2, 2, 1).f(), vec![0u8, 255, 0, 255]).unwrap();
        WriterOptions::new(&path).write_nifti(&raw).unwrap();
        let v = load_volume(&path).unwrap();
        assert_eq!(v.kind(), VolumeKind::Mask);
        assert_eq!(v.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn two_dimensional_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.nii");
        let raw = ndarray::Array2::from_shape_vec((4, 4), vec![1f32; 16]).unwrap();
        WriterOptions::new(&path).write_nifti(&raw).unwrap();
        assert!(matches!(load_volume(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_and_missing_directory_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_volume(dir.path().join("nope.nii")),
            Err(Error::Io { .. })
        ));
        let mask = random_mask([2, 2, 2], 3);
        assert!(matches!(
            save_volume(&mask, dir.path().join("missing/dir/m.nii")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn permuted_axis_order_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let order = AxisOrder::new([
            Anatomical::PosteriorAnterior,
            Anatomical::InferiorSuperior,
            Anatomical::LeftRight,
        ])
        .unwrap();
        let v = random_mask([3, 4, 5], 9).with_axis_order(Some(order));
        let path = dir.path().join("perm.nii");
        save_volume(&v, &path).unwrap();
        assert_eq!(load_volume(&path).unwrap().axis_order(), Some(order));
    }
}
