use core::fmt;

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An MDP, policy or model violated one of its structural invariants.
    Invalid(String),
    /// Two objects that must share state/action spaces (or discount) do not.
    ShapeMismatch(String),
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    /// Direct model-advantage losses need whole, contiguous trajectories.
    NotTrajectoryGrouped,
    /// The VPS term needs (s_t, a_t, s_{t+1}, a_{t+1}, s_{t+2}) triples.
    MissingTriples,
    SingularSystem,
    Diverged { iteration: usize, max_abs_logit: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid(msg) => write!(f, "invalid input: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::IndexOutOfRange { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::NotTrajectoryGrouped => {
                write!(f, "batch is not grouped into contiguous trajectories")
            }
            Error::MissingTriples => write!(f, "batch carries no two-step transition triples"),
            Error::SingularSystem => write!(f, "linear system is singular"),
            Error::Diverged { iteration, max_abs_logit } => write!(
                f,
                "diverged at iteration {iteration}: max |logit| = {max_abs_logit:e}"
            ),
        }
    }
}

impl core::error::Error for Error {}
