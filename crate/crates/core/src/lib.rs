//! Top-down TreeLSTM transducer that compresses sentences by deleting
//! words, operating on constituency parse trees.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod labeling;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ptb;
pub mod synthetic;
pub mod training;
pub mod tree;
