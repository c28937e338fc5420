//! Simulation and verification toolkit for central limit theorems of
//! subordinated Hilbert space-valued Gaussian processes.

pub mod error;
pub mod harness;
pub mod hermite;
pub mod hilbert;
pub mod limit;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod subordination;

pub use error::{Error, Result};
pub use hilbert::{outer_product, tensor_hs_norm, HilbertOperator, HilbertVector, TensorOperator};
pub use models::{brownian_increment_spectrum, embed_scores, BetaFn, ModelConfig, ProcessModel, ScorePath, Variant};
pub use harness::{cosine_proxy, normality_diagnostics, run_clt_experiment, run_continuous_experiment, CltReport, ExperimentConfig};
pub use hermite::{hermite_eval, rank_report, HermiteCoefficients, MultiIndex};
pub use limit::{check_condition, limit_covariance_chaos, limit_covariance_mc, quantitative_bounds, Verdict};
pub use subordination::{Activation, OperatorG, OperatorKind, OutputShape};
