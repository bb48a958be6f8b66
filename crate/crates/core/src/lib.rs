//! Approximating globally optimal nonlinear MPC with conditional diffusion
//! models: benchmark dynamics, a box-constrained local OCP solver, dataset
//! generation along perturbed trajectories, a from-scratch dense network and
//! DDPM engine, online sample-score-rank controllers, and the evaluation
//! harness behind the `diffmpc` CLI.

pub mod codec;
pub mod datagen;
pub mod diffusion;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod neural;
pub mod ocp;
pub mod scalar;
pub mod seeds;
pub mod solver;

pub use dynamics::{SystemKind, SystemModel};
pub use error::{Error, Result};
pub use ocp::{ControlSequence, InputBox, OcpSpec};
pub use scalar::{Real, Scalar};
pub use solver::{SolveResult, SolverConfig};
