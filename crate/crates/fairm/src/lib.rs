//! Multi-environment sparse regression with invariance filtering: a
//! three-step procedure that screens out features whose distribution shifts
//! across environments, fits penalized regressions on the surviving
//! candidate sets, and selects among them on a held-out fold. Ships with
//! pooled-lasso, worst-environment and oracle baselines, synthetic and
//! framed-digit benchmark generators, and evaluation metrics.

pub mod data;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod lasso;
pub mod linalg;
pub mod maximin;
pub mod metrics;
pub mod mnist;
pub mod pipeline;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
