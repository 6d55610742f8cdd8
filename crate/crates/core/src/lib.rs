//! Monte-Carlo simulation of heterogeneous thermostatically controlled load
//! (TCL) populations under broadcast demand-response protocols.
//!
//! Units throughout: minutes, °C, kW per device, MW for aggregates.
//!
//! The numerical core is generic over the scalar type ([`Scalar`], `f32` or
//! `f64`). Scenario files and the CLI work in `f64`; the aliases below name
//! the common instantiations.

pub mod analysis;
pub mod error;
pub mod model;
pub mod num;
pub mod population;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use num::Scalar;

pub type Params = model::TclParams<f64>;
pub type Band = model::Deadband<f64>;
pub type State = model::TclState<f64>;
pub type Ensemble = population::Ensemble<f64>;
pub type Command = protocol::Command<f64>;
pub type PowerTrace = analysis::PowerTrace<f64>;
pub type PulseMetrics = analysis::PulseMetrics<f64>;
pub type Histogram = population::HistogramSnapshot<f64>;

pub type Params32 = model::TclParams<f32>;
pub type Band32 = model::Deadband<f32>;
pub type Ensemble32 = population::Ensemble<f32>;
