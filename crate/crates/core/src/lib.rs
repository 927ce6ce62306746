pub mod dataset;
pub mod inspect;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
