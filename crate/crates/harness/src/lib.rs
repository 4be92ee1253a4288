//! Training and evaluation orchestration for the PET/CT segmentation
//! network: patient-level folds, depth windows, phantoms, ablations.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod folds;
pub mod phantom;
pub mod prefetch;
pub mod stats;
pub mod train;
pub mod windows;

pub use ablation::{ablation_sweep, variants, AblationAxis, AblationReport, AblationRow, Variant};
pub use config::{ToolkitConfig, TrainConfig};
pub use dataset::{load_dataset, phantom_cohort, save_case, Case};
pub use error::{HarnessError, Result};
pub use evaluate::{evaluate, predict_stitched, predict_stitched_in_order, EvalSettings, Evaluation, Segmenter};
pub use folds::{holdout, make_folds, FoldSplit};
pub use phantom::{generate_phantom, Ellipsoid, Phantom, PhantomSpec};
pub use prefetch::Prefetcher;
pub use stats::{paired_t_test, PairedTTest};
pub use train::{History, StopReason, TrainOptions, TrainOutcome, Trainer};
pub use windows::{sliding_windows, stitch, window_offsets, Window};
