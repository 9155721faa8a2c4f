//! Update compression: magnitude pruning, stochastic quantization, the
//! raw-or-quantized offload choice, payload accounting and the wire codec.

mod payload;
mod prune;
mod quantize;
pub mod wire;

pub use payload::{ceil_log2, offload, payload_bits, payload_bits_nnz, OffloadPayload, PayloadBody, PayloadKind};
pub use prune::{lottery_prune, magnitude_mask, pruning_error_ratio, PruneResult};
pub use quantize::{decode, quantize, variance_constant, QuantizedVector};
