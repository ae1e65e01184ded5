//! Dataset assembly, optimization and the training loop.

pub mod adam;
pub mod dataset;
pub mod fit;
pub mod schedule;
pub mod synth;

pub use adam::{AdamConfig, AdamState};
pub use dataset::{
    assemble_dataset, measured_snr_db, mix_at_snr, prepare_pair, Dataset, Manifest, ManifestEntry,
    Utterance, WindowRef,
};
pub use fit::{eval_mse, fit, fit_with_progress, EpochRecord, FitConfig, History};
pub use schedule::{Directive, LrSchedule};
pub use synth::synth_corpus;
