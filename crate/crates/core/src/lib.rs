pub mod buffers;
pub mod envs;
pub mod metrics;
pub mod nn;
pub mod reward;
pub mod sac;
pub mod sampling;
pub mod service;
pub mod teacher;
pub mod trainer;
