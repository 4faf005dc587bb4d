use thiserror::Error;

use crate::abstraction::AbstractionError;
use crate::geometry::GeometryError;
use crate::gp::GpError;
use crate::io::FormatError;
use crate::ltl::LtlError;
use crate::shield::ShieldError;

/// Any failure that can surface from the end-to-end pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Ltl(#[from] LtlError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
