pub mod deep;
pub mod ensemble;
pub mod env;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod tabular;
pub mod tensor;
