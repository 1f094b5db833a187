pub mod evaluation;
pub mod geo;
pub mod graph_encoder;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sequence_encoder;
pub mod synthetic;
pub mod tensor;
pub mod trajgraph;
mod util;

pub use util::sha256_hex;
