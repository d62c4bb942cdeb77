//! Volume files, dataset manifests and subject splits.

mod manifest;
mod nifti_io;
mod split;

pub use manifest::{Manifest, SubjectRecord};
pub use nifti_io::{load_image, load_mask, load_volume, save_volume};
pub use split::{
    fraction_size, make_fraction_plan, make_loso, make_stratified_kfold, stratified_holdout, Fold,
    SplitPlan, SplitStrategy, VALIDATION_FRACTION,
};
