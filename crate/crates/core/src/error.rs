use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("interceptor `{name}` changed the shape of `{layer}` from {before:?} to {after:?}")]
    InterceptorShape {
        name: String,
        layer: String,
        before: (usize, usize),
        after: (usize, usize),
    },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("mitigation `{mitigation}` does not apply to fault target `{target}`")]
    NotApplicable { mitigation: String, target: String },
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl core::fmt::Display,
        actual: impl core::fmt::Display,
    ) -> Self {
        use alloc::string::ToString;
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
