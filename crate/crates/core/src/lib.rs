pub mod bpe;
pub mod generator;
pub mod java;
pub mod linearize;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;
