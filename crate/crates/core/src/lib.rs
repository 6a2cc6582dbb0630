//! Neural delay-differential closure models for low-fidelity dynamical
//! systems, trained with explicitly integrated adjoint equations.

pub mod closure;
pub mod experiment;
pub mod integrate;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod train;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Integrate(#[from] integrate::IntegrateError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Closure(#[from] closure::ClosureError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
}

pub type Result<T> = std::result::Result<T, Error>;
