//! Bayesian probabilistic matrix factorization with a Gibbs sampler that runs
//! on a work-stealing thread pool and across nodes with asynchronous,
//! buffered exchange of latent vectors.

pub mod cli;
pub mod data;
pub mod dist;
pub mod linalg;
pub mod real;
pub mod rng;
pub mod sched;
pub mod timing;
pub mod sampler;
