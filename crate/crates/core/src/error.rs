use thiserror::Error;

use crate::lattice::{LatticePath, Point};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A walk ran past its hard step cap; the partial path is kept for diagnosis.
    #[error("step cap of {cap} exceeded (walk from {start} never satisfied its stop rule)")]
    CapExceeded {
        cap: u64,
        start: Point,
        partial: Box<LatticePath>,
    },

    #[error("graph is not connected")]
    Disconnected,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("point {0} lies outside the sampled region")]
    OutsideDomain(Point),

    #[error("points {0} and {1} are not in the same tree component")]
    DifferentComponents(Point, Point),

    #[error("intrinsic ball of radius {radius} around {center} reaches the window edge")]
    WindowTooSmall { center: Point, radius: u32 },

    #[error("{what} exceeds the size cap ({size} > {cap})")]
    SizeCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed tree file, line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
