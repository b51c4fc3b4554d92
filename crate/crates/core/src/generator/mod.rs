//! Windowed next-scale autoregressive generator over multi-scale codes.

pub mod generate;
pub mod layout;
pub mod model;
pub mod train;

pub use generate::{generate, generate_codes, generate_window, GeneratedWindow, SamplingOptions};
pub use layout::WindowLayout;
pub use model::{ar_loss, bit_accuracy, code_targets, flip_bits, sample_bits, Generator, GeneratorConfig, WindowInputs};
pub use train::{
    ar_log_csv, build_ar_samples, perturbed_loss, teacher_forced_accuracy, text_encoder, train_ar, ArLogRow, ArSample,
    ArTrainConfig,
};
