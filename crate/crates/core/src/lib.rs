//! Physics-informed neural networks whose predictions are projected onto the
//! set where chosen spatial integrals (linear, quadratic or both) take
//! prescribed values exactly.
//!
//! The crate covers the full experimental pipeline:
//!
//! * [`autodiff`]: third-order jets for input derivatives and a scalar
//!   reverse-mode tape,
//! * [`mlp`]: the tanh network, including a batched jet kernel with a
//!   hand-written vector-Jacobian product,
//! * [`projection`]: closed-form projections and conserved-quantity series,
//! * [`pde`]: the five benchmark equations, residuals and reference solvers,
//! * [`sampling`], [`training`], [`evaluation`] and [`spectra`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod evaluation;
pub mod mlp;
pub mod par;
pub mod pde;
pub mod projection;
pub mod sampling;
pub mod spectra;
pub mod training;

mod io;

pub use io::FormatError;

/// Crate-wide error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Projection(#[from] projection::ProjectionError),
    #[error(transparent)]
    Pde(#[from] pde::PdeError),
    #[error(transparent)]
    Sampling(#[from] sampling::SamplingError),
    #[error(transparent)]
    Training(#[from] training::TrainingError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvaluationError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
