//! Power-of-two weight quantization and biased binary encoding.

pub mod compression;
pub mod encode;
pub mod fixed;
pub mod saqm;
pub mod shift;

pub use compression::{compression_report, CompressionReport};
pub use encode::{decode_layer, encode_layer, encode_model, lossless_bits, LayerEncoding};
pub use fixed::{fixed_point_decompose, FixedPointFrame};
pub use saqm::{read_saqm, write_saqm};
pub use shift::{
    dequantize_model, shift_quantize_model, shift_quantize_param, QuantConfig, QuantizedLayer,
    QuantizedModel, ShiftQuantParam,
};
