//! Regularized stochastic gradient descent, with and without iterate
//! averaging, for binary classification under a strong low-noise condition.
//!
//! The crate is organised around the pieces of one workflow:
//!
//! * [`loss`]: margin losses, link functions and Bregman divergences;
//! * [`hypothesis`]: feature maps and hypothesis representations;
//! * [`optimizer`]: the SGD recursion, averaging, training and coupled runs;
//! * [`theory`]: closed-form rate and threshold calculators;
//! * [`synthdata`]: the two-rectangle low-noise distribution with exact
//!   Bayes quantities, quadrature risks and the regularized-risk oracle;
//! * [`experiment`]: orchestration of experiment grids, stability and theory
//!   reports, plus CSV and SVG output.

pub mod error;
pub mod experiment;
pub mod hypothesis;
pub mod loss;
pub mod optimizer;
pub mod plot;
pub mod quadrature;
pub mod rng;
pub mod synthdata;
pub mod theory;
pub mod trace;

pub use error::{Error, Result};
pub use hypothesis::{FeatureKind, FeatureMap, Hypothesis, Kernel};
pub use loss::{LossKind, LossSpec};
pub use optimizer::{TraceRow, TrainConfig};
pub use synthdata::SynthDistribution;
