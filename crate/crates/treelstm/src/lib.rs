pub mod checkpoint;
pub mod corpus;
pub mod formats;
pub mod synth;
