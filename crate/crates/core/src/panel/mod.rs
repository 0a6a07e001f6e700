//! Telemonitoring panel: ingestion, subject-aware splits, transforms and
//! mixed-model design matrices.

mod columns;
mod dataset;
mod design;
mod split;
mod transform;

pub use columns::{Column, VOICE_DIM};
pub use dataset::{load_csv, read_csv, ObservationRow, PanelDataset, Provenance};
pub use design::{design_matrices, fixed_row, random_row, Design, SubjectDesign, Term};
pub use split::{split, SplitMode, SplitSpec};
pub use transform::{apply_transforms, mean_sd, BackTransform, ColumnStats, TransformSpec};
