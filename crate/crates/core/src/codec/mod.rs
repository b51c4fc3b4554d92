//! Multi-scale binary spherical quantization autoencoder over motion windows.

pub mod model;
pub mod quant;
pub mod train;

pub use model::{CodecConfig, CodecModel, CodecSample, LossValues, NormStats, QuantMode};
pub use quant::{
    bsq_quantize, dequantize_multiscale, dequantize_values, quantize_multiscale, resize_time, MultiScaleCode,
};
pub use train::{codec_log_csv, mean_l1, train_codec, CodecLogRow, CodecTrainConfig};
