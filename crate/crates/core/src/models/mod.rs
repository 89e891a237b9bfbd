//! Gate library and ready-made systems.

pub mod fr;
pub mod gates;
pub mod systems;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::classical::ClassicalError;
use crate::graph::{Factor, FactorGraph, GraphError};
use crate::measure::MeasureError;
use crate::qmf::QmfError;
use crate::tensor::{is_unitary, Axis, NamedTensor, TensorError};
use crate::C64;

pub use fr::{fr_implications, fr_model, fr_report, FrModel, FrReport};
pub use gates::GateSet;
pub use systems::{classicable_example, elementary_system, two_measurement_system, Part, TwoMeasurementSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Measure(#[from] MeasureError),

    #[error(transparent)]
    Qmf(#[from] QmfError),

    #[error(transparent)]
    Classical(#[from] ClassicalError),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0} is not unitary")]
    NotUnitary(String),

    #[error("{name} has an entry of magnitude {magnitude} (must be below 1)")]
    TrivialEntry { name: String, magnitude: f64 },
}

pub type ModelResult<T> = Result<T, ModelError>;

pub(crate) fn check_unitary(name: &str, m: &DMatrix<C64>, n: usize) -> ModelResult<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(ModelError::DimensionMismatch(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let t = NamedTensor::from_matrix(Axis::new("o", n), Axis::new("i", n), m)?;
    if !is_unitary(&t, crate::measure::GATE_TOL)? {
        return Err(ModelError::NotUnitary(name.to_string()));
    }
    Ok(())
}

/// Adds `f` on the ket side and its conjugate on the bra side.
pub(crate) fn add_mirrored(g: &mut FactorGraph, f: Factor) -> ModelResult<()> {
    let m = f.mirrored()?;
    g.add_factor(f)?;
    g.add_factor(m)?;
    Ok(())
}
