//! Optimal encoder distortion for strategic communication when the decoder
//! holds side information and best-replies to a committed encoder.
//!
//! The numeric core is generic over [`Real`] (`f32`/`f64`); the aliases
//! below fix the scalar to `f64` for everyday use.

pub mod best_reply;
pub mod cli;
pub mod coding_simulator;
pub mod dsbs_analytic;
pub mod info_measures;
pub mod plot;
pub mod problem_model;
pub mod scalar;
pub mod simplex;
pub mod splitting_solver;

pub use scalar::{KahanSum, Real};

pub type Problem = problem_model::ProblemSpec<f64>;
pub type Problem32 = problem_model::ProblemSpec<f32>;
pub type Channel = problem_model::Channel<f64>;
pub type DistortionTable = problem_model::DistortionTable<f64>;
pub type DsbsParams = problem_model::DsbsParams<f64>;
pub type Belief = info_measures::Belief<f64>;
pub type Belief32 = info_measures::Belief<f32>;
pub type BestReplySet = best_reply::BestReplySet<f64>;
pub type Splitting = splitting_solver::Splitting<f64>;
pub type SolveResult = splitting_solver::SolveResult<f64>;
pub type DsbsSolution = dsbs_analytic::DsbsSolution<f64>;
