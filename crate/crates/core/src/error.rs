use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("x = {x} is outside the terrain range [{min}, {max}]")]
    OutOfDomain { x: f64, min: f64, max: f64 },
    #[error("QP: {0}")]
    Qp(#[from] crate::qp::QpError),
    #[error("pose optimization: {0}")]
    Pose(#[from] crate::pose_opt::PoseError),
    #[error("simulation fault at tick {tick}: {what}")]
    SimulationFault { tick: u64, what: String },
    #[error("timing estimate unavailable: mean wheel speed {0} rad/s is below threshold")]
    EstimationUnavailable(f64),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
