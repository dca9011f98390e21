//! Training-data packing and static mixture sampling.

mod mixture;
mod pack;

pub use mixture::{
    sample_mixture, Exhaustion, MixtureEntry, MixtureSample, MixtureSpec, FLAN_ALPACA_PRESETS,
};
pub use pack::{naive_padding, oversize, pack_instructions, pack_pretrain, PackedBlock, Segment};
