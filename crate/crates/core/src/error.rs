use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("message {message} outside the {alphabet}-point alphabet")]
    MessageOutOfRange { message: u32, alphabet: u32 },

    #[error("modulation order {order} exceeds the highest order {max}")]
    OrderTooHigh { order: u32, max: u32 },

    #[error("no modulation-order combination satisfies K={users}, B={max_order}, R={rate}")]
    Infeasible { users: usize, max_order: u32, rate: u32 },

    #[error("precoder produced an all-zero signal; power normalization is undefined")]
    DegenerateOutput,

    #[error("channel matrix is rank deficient (Gram matrix not invertible)")]
    Singular,

    #[error("solver did not converge after {iterations} iterations (gap {gap:.3e}, margin {margin:.6e})")]
    NoConvergence { iterations: usize, gap: f64, margin: f64 },

    #[error("training diverged in stage {stage} at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { stage: u8, epoch: usize, step: usize, loss: f64 },

    #[error("checkpoint incompatible with configuration: {0}")]
    Incompatible(String),

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
