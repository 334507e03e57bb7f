//! Spiking inference core: activation quantization, spike codecs,
//! spike-driven linear layers, MED-guided timestep allocation, a toy
//! multimodal pipeline, an energy model and a bit-level PE array simulator.

pub mod codec;
pub mod costmodel;
pub mod error;
pub mod msts;
pub mod pesim;
pub mod pipeline;
pub mod quant;
pub mod spikelinear;
pub mod tensor_io;
pub mod tokens;

pub use codec::{Codec, CodecKind, FiringStats, SpikeTrain};
pub use error::{Error, Result};
pub use quant::{Mode, QuantSpec, QuantizedTensor};
pub use tokens::{Modality, TokenStream};
