//! Pooled (group) testing: exact strategies over a perfect pooled assay,
//! closed-form expected costs and pool-size optimizers, a seeded Monte Carlo
//! engine, and a planner that pools patients sorted by predicted risk.
//!
//! The crate is `no_std` + `alloc` when the default `std` feature is off;
//! `std` only adds parallel trial execution, which never changes results.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analytic;
pub mod cohort;
mod math;
pub mod model;
pub mod simulator;
pub mod strategies;

pub use analytic::{AnalyticError, OptimizationResult};
pub use cohort::{Cohort, CohortError, Patient, PlanFamily, PlanPolicy, PoolingPlan, RiskCdf};
pub use model::{
    InfectionVector, ModelError, PoolSize, PopulationSize, Probability, StrategyOutcome,
    TestOracle,
};
pub use simulator::{SimulationConfig, SimulationError, SimulationSummary};
pub use strategies::{Strategy, StrategyError};
