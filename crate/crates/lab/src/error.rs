use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Core(#[from] rigid_core::Error),

    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

pub type LabResult<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        LabError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// 2 for bad input, 3 for numerical trouble, 4 for a violated invariant.
    pub fn exit_code(&self) -> i32 {
        use rigid_core::Error as E;
        match self {
            LabError::Config { .. } => 2,
            LabError::Core(E::InvalidArgument { .. } | E::Support(_) | E::OutsideMask(_)) => 2,
            LabError::Core(E::Invariant(_)) => 4,
            LabError::Core(_) | LabError::Io(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(LabError::config("res", "even").exit_code(), 2);
        assert_eq!(LabError::Core(rigid_core::Error::Support("leak".into())).exit_code(), 2);
        assert_eq!(LabError::Core(rigid_core::Error::Numerical("nan".into())).exit_code(), 3);
        assert_eq!(LabError::Core(rigid_core::Error::Degenerate("zero".into())).exit_code(), 3);
        assert_eq!(LabError::Core(rigid_core::Error::Invariant("cz".into())).exit_code(), 4);
    }
}
