//! Finite-speed propagation and restriction estimates for interacting
//! particle systems on `Z^d` (`d ∈ {1, 2}`), with exact and Monte Carlo
//! engines to check them numerically.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases at the crate root fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod entropy;
pub mod error;
pub mod exact_engine;
pub mod experiment;
pub mod gamma_flow;
pub mod geometry;
pub mod mc_engine;
pub mod profile;
pub mod rates;
pub mod scalar;

pub use error::{Error, Result};
pub use geometry::{Region, Site};

pub type Decay = geometry::DecayFunction<f64>;
pub type Rates = rates::Family<f64>;
pub type Influence = rates::InfluenceMatrix<f64>;
pub type Vector = gamma_flow::L1Vector<f64>;
pub type Observable = gamma_flow::LocalObservable<f64>;
pub type Generator = exact_engine::GeneratorMatrix<f64>;
pub type Law = exact_engine::Distribution<f64>;
pub type SpeedProfile = profile::Profile<f64>;
