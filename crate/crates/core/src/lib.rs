pub mod baselines;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod instance;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod schedule;
