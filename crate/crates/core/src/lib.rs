//! Projected Langevin sampling for Gaussian-process posteriors with
//! non-conjugate likelihoods.
//!
//! The prior is projected onto a Nyström eigenbasis of the kernel, the
//! coefficient posterior is sampled with an Euler–Maruyama discretised
//! Langevin diffusion, and samples are pushed to test inputs with Matheron's
//! rule.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod likelihoods;
pub mod model_selection;
mod par;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod spectral;

pub use error::{PlsError, Result};
pub use kernels::{AnchorSet, Kernel, KernelFamily};
pub use likelihoods::Likelihood;
pub use predictor::{predict, JointPriorCov, PredictiveDraws};
pub use sampler::{simulate, Init, LangevinTarget, ParticleEnsemble, SdeConfig};
pub use spectral::{select_inducing, Selection, SpectralBasis};
