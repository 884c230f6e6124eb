use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::coeffs::CoeffsError;
use crate::evolve::EvolveError;
use crate::reference::ReferenceError;
use crate::spectral::SpectralError;
use crate::volterra::VolterraError;

/// Crate-level error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Volterra(#[from] VolterraError),
    #[error(transparent)]
    Coeffs(#[from] CoeffsError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl Error {
    /// True for failures that mean "did not converge" rather than "bad input"
    /// or "solver breakdown".
    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            Error::Reference(ReferenceError::CutoffNotConverged { .. })
                | Error::Reference(ReferenceError::SteadyStateNotReached { .. })
                | Error::Analysis(AnalysisError::NonDecaying { .. })
        )
    }

    /// True for failures caused by the inputs rather than by a solver.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            Error::UnknownPreset(_) => true,
            Error::Spectral(e) | Error::Coeffs(CoeffsError::Spectral(e)) | Error::Volterra(VolterraError::Spectral(e)) => {
                !matches!(e, SpectralError::GridTooCoarse { .. } | SpectralError::BosePoleInWindow { .. })
            }
            Error::Volterra(e) => !matches!(e, VolterraError::SingularStep { .. } | VolterraError::Ode(_)),
            Error::Coeffs(_) => true,
            Error::Evolve(e) | Error::Reference(ReferenceError::Evolve(e)) => matches!(
                e,
                EvolveError::InvalidConfig(_) | EvolveError::InvalidState(_) | EvolveError::BasisMismatch { .. } | EvolveError::Io(_)
            ),
            Error::Reference(e) => matches!(e, ReferenceError::InvalidModel(_) | ReferenceError::Basis(_)),
            Error::Analysis(_) => false,
        }
    }
}
