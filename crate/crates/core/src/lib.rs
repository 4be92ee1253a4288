//! Shared volume types, medical-image I/O, PET/CT preprocessing, overlap
//! metrics and TMTV agreement statistics.

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod preprocess;
pub mod tmtv;
pub mod volume;

pub use config::{ModelConfig, MsifConfig};
pub use error::{CoreError, Result};
pub use io::{load_volume, save_volume};
pub use metrics::{binarize, confusion, dice_loss, dice_loss_grad, ConfusionCounts, MetricRow};
pub use preprocess::{ct_window, center_crop, preprocess_pair, resample_inplane, suv_bw, PreprocessConfig};
pub use tmtv::{emit_agreement_plots, fit_agreement, tmtv, AgreementReport, TmtvRecord};
pub use volume::{AcquisitionMeta, Modality, Volume3D};
