//! Limit theory: summability condition, limit covariances, contraction
//! norms and quantitative bounds.

pub mod bounds;
pub mod condition;
pub mod contraction;
pub mod covariance;
pub mod fkn;

pub use bounds::{cpr_constant, quantitative_bounds, quantitative_bounds_with_defect, BoundReport, BoundTerms};
pub use condition::{check_condition, compare_conditions, theta, ConditionComparison, ConditionReport, TailAnalysis, TailFit, ThetaTable, Verdict, DEFAULT_V_MAX};
pub use contraction::{contraction_norm, contraction_upper_bound};
pub use covariance::{brownian_cov_operator, limit_covariance_chaos, limit_covariance_mc, tensor_limit_covariance, McCovariance};
pub use fkn::f_kn;
