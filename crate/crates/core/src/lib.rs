pub mod model;
pub mod numerics;
pub mod flow;
pub mod simulator;
pub mod estimator;
pub mod config;
pub mod experiments;
