use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("total probability mass is {total}, expected 1")]
    NotNormalized { total: f64 },

    #[error("density is negative at x = {at}")]
    NegativeDensity { at: f64 },

    #[error("pieces overlap near x = {at}")]
    Overlap { at: f64 },

    #[error("instance has {profiles} type profiles, above the enumeration limit of {limit}")]
    InstanceTooLarge { profiles: f64, limit: f64 },

    #[error("no player holds a share of at least {required}")]
    NoEligibleSeller { required: f64 },

    #[error("malformed input: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
