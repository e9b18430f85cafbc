//! Dexterous grasp synthesis: a differentiable articulated-hand layer, a
//! contact-aware loss ledger, a conditional variational grasp generator,
//! gradient-based grasp refinement and a quasi-static grasp evaluator.

pub mod autodiff;
pub mod cvae;
pub mod error;
pub mod evalsuite;
pub mod geometry;
pub mod handkin;
pub mod losses;
pub mod refine;

pub use error::{Error, Result};
