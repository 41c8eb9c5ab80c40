//! Deep residual network inference directly on JPEG transform coefficients.
//!
//! The JPEG compression steps up to rounding are one linear map per plane.
//! Every linear layer of a network therefore has an exact counterpart acting
//! on coefficients, and ReLu has a close approximation built from a limited
//! number of frequencies. This crate provides the transform maps, the
//! transform-domain layers, a spatial reference implementation, model
//! conversion and a baseline JPEG reader.

pub mod asm;
pub mod error;
pub mod io;
pub mod model;
pub mod ops;
pub mod spatial;
pub mod tensor;
pub mod transform;
pub mod weights;

pub use asm::{
    approx_spatial, apx_relu, asm_relu, build_harmonic_mixing, generate_test_blocks, nnm, relu_error_sweep, value_preservation,
    FrequencyBudget,
    HarmonicMixingTensor,
};
pub use error::{Error, Result};
pub use io::{coefficients_for_network, load_pnm, parse_jpeg, ParsedJpeg};
pub use model::{argmax_rows, compare_logits, convert_model, forward, measure_throughput, random_inputs, InputNormalization, JpegModel, NetworkSpec, ReluVariant, SpatialModel};
pub use ops::{
    apply_conv, build_conv_map, global_avg_pool, jpeg_add, jpeg_batchnorm, BatchNormParams, BnMode, CoefficientTensor,
    ConvMap,
};
pub use spatial::spatial_forward;
pub use tensor::{contract, DType, DenseTensor, Scalar};
pub use transform::{
    decode_plane, encode_plane, BlockCodec, CoefficientPlane, JpegTransformPair, PlaneGeometry, QuantTable,
};
pub use weights::{Domain, ModelWeights, WeightTensor, WeightsMetadata};
