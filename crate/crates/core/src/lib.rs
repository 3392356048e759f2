pub mod blackbox;
pub mod dataset;
pub mod gateway;
pub mod methods;
pub mod metrics;
pub mod rng;
pub mod similarity;
pub mod studies;
pub mod whitebox;
