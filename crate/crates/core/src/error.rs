use thiserror::Error;

/// Failures raised by the numerical library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature exhausted its panel budget.
    #[error("quadrature did not converge in {context}: value {value:.6e}, error estimate {error:.3e}")]
    Quadrature {
        context: String,
        value: f64,
        error: f64,
    },

    /// A field or integrand produced NaN or infinity.
    #[error("non-finite value at t={t}, r={r}")]
    NonFinite { t: f64, r: f64 },

    /// One or more model hypotheses fail; each entry names the condition.
    #[error("hypothesis violated: {}", .0.join("; "))]
    Hypothesis(Vec<String>),

    /// Picard increments grew for too many consecutive steps.
    #[error("Picard iteration diverged at step {step}; increment ratios {ratios:?}")]
    Divergence { step: usize, ratios: Vec<f64> },
}

impl Error {
    /// Prefix the context of a quadrature error; other variants pass through.
    pub fn context(self, outer: impl AsRef<str>) -> Self {
        match self {
            Error::Quadrature {
                context,
                value,
                error,
            } => Error::Quadrature {
                context: format!("{} / {}", outer.as_ref(), context),
                value,
                error,
            },
            other => other,
        }
    }

    /// True for errors caused by invalid input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Hypothesis(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
