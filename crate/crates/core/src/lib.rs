//! Arbitrary-precision q-opers, QQ-systems, q-Wronskians and toroidal folding.
//!
//! Everything lives over a complex rational-function field in one variable `z`
//! whose scalars are MPFR floats at a precision carried by [`Ctx`].

pub mod cli;
pub mod exec;
pub mod qoper;
pub mod qq;
pub mod qwronskian;
pub mod ratfield;
pub mod toroidal;

pub use exec::Execution;
pub use ratfield::{Poly, RFMatrix, RatFunc, Scalar};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate substitution: shift by zero")]
    ZeroShift,
    #[error("division by the zero polynomial")]
    ZeroDenominator,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("resample exhausted: every sample point lies near a pole")]
    ResampleExhausted,
    #[error("index out of range: {0}")]
    Index(String),
    #[error("resonant twist: {0}")]
    ResonantTwist(String),
    #[error("degenerate after Bäcklund: {0}")]
    DegenerateBacklund(String),
    #[error("missing chain Q-_({0},{1})")]
    MissingChain(usize, usize),
    #[error("degenerate Miura-Plücker data: {0}")]
    DegenerateMiura(String),
    #[error("section inconsistent: {0}")]
    SectionInconsistent(String),
    #[error("inexact division: {0}")]
    InexactDivision(String),
    #[error("duplicate indices: {0:?}")]
    DuplicateIndices(Vec<usize>),
    #[error("minor vanishes identically: {0}")]
    VanishingMinor(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("pole hit: {0}")]
    PoleHit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Numeric context shared by every operation.
///
/// `tol` and `cluster_tol` are stored as `f64`; at the precisions used here
/// (up to a few thousand bits) they stay well inside the `f64` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ctx {
    pub prec: u32,
    pub tol: f64,
    pub cluster_tol: f64,
}

impl Ctx {
    pub fn new(prec: u32) -> Self {
        Ctx {
            prec,
            tol: 2f64.powf(-(prec as f64) / 2.0),
            cluster_tol: 2f64.powf(-(prec as f64) / 4.0),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Relative threshold below which a coefficient is rounding noise.
    pub fn trim_tol(&self) -> f64 {
        2f64.powf(-0.8 * self.prec as f64)
    }

    /// Relative pivot threshold for rank decisions in linear solves.
    pub fn rank_tol(&self) -> f64 {
        2f64.powf(-0.75 * self.prec as f64)
    }
}

impl Default for Ctx {
    fn default() -> Self {
        Ctx::new(192)
    }
}
