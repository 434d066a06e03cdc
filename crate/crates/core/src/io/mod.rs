//! WAV, configuration and CSV file formats.

pub mod config;
pub mod csv;
pub mod wav;

pub use config::{ExperimentConfig, InputMode, LabelSource, SweepAxis};
pub use wav::{read_wav, write_wav, WavData};
