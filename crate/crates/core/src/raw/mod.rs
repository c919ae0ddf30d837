//! CFA packing, image files and the synthetic low-light corpus.

pub mod cfa;
pub mod dataset;
pub mod pnm;
pub mod synth;

pub use cfa::{pack, unpack, Cfa};
pub use synth::{synth_pair, PackedRaw, SamplePair, SynthConfig};
