use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unequal masses ({0} vs {1}); use bl_distance for measures with different total mass")]
    UnequalMasses(f64, f64),

    #[error("invalid probability vector: {0}")]
    Simplex(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("agent {index} has non-finite position at t = {t}")]
    AgentBlowUp { index: usize, t: f64 },

    #[error("CFL violation: dt = {dt} but the largest stable step is {max_dt}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("combined atom count {0} exceeds the exact-transport cap {1}; subsample before comparing")]
    AtomCap(usize, usize),

    #[error("negative transition kernel sample J = {0}; generator rows need nonnegative off-diagonal rates")]
    NegativeRate(f64),

    #[error(
        "label-weighted kernels do not close into a system of spatial densities \
         (the velocity field then depends on the label vector); use the particle engine instead"
    )]
    LabelWeightedPde,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport solver failed to converge ({0})")]
    TransportStalled(String),
}
