//! Spectral Galerkin simulation of the Wick-renormalized stochastic quantization
//! equation `∂X = ΔX − X − Σ a_k :X^k: + ξ` on the 2-torus.

pub mod error;
pub mod noise;
pub mod besov;
pub mod remainder;
pub mod report;
pub mod spectral;
pub mod stats;
pub mod dynamics;
pub mod equilibrium;
pub mod harness;
pub mod sensitivity;
pub mod trajectory;

pub use error::{Error, Result};
