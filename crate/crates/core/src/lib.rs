//! Activity recognition from the charging rate of a kinetic energy
//! harvester's storage capacitor.
//!
//! The crate models the harvester circuit, synthesizes per-activity source
//! signals, samples the capacitor voltage sparsely to estimate charging
//! rates, classifies activities from those rates and accounts for the
//! sensing and transmission power budget.

pub mod activity;
pub mod circuit;
pub mod cli;
pub mod classify;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod power;
pub mod sampler;
pub mod scalar;
pub mod seed;

pub use activity::{ActivityLabel, PehPosition, ProfileTable, SubjectParams};
pub use classify::{ClassifierKind, ClassifierSpec, Dataset, EvalReport, FeatureMask, Model};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CapacitorSpec = circuit::CapacitorSpec<f64>;
pub type BuckSpec = circuit::BuckSpec<f64>;
pub type SourceModel = circuit::SourceModel<f64>;
pub type CircuitSpec = circuit::CircuitSpec<f64>;
pub type ChargeState = circuit::ChargeState<f64>;
pub type VoltageTrace = circuit::VoltageTrace<f64>;
pub type SourceSignal = activity::SourceSignal<f64>;
pub type AdcSpec = sampler::AdcSpec<f64>;
pub type SamplerConfig = sampler::SamplerConfig<f64>;
pub type FeatureVector = sampler::FeatureVector<f64>;
pub type TxProfile = power::TxProfile<f64>;
pub type SensingPowerParams = power::SensingPowerParams<f64>;

pub type CircuitSpecF32 = circuit::CircuitSpec<f32>;
pub type VoltageTraceF32 = circuit::VoltageTrace<f32>;
pub type SamplerConfigF32 = sampler::SamplerConfig<f32>;
