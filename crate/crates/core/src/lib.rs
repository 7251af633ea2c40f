//! Joint adaptive power allocation (JAPA) for two-hop amplify-and-forward
//! cooperative MIMO networks with Alamouti distributed space-time coding.
//!
//! The crate provides the signal model ([`model`], [`dstc`],
//! [`transceiver`]), the power-allocation optimizers ([`japa`]), the
//! limited-feedback error model ([`feedback`]), complexity counters
//! ([`analysis`]) and a Monte Carlo experiment harness ([`harness`]).

pub mod analysis;
pub mod dstc;
pub mod error;
pub mod feedback;
pub mod harness;
pub mod japa;
pub mod model;
pub mod transceiver;

pub use error::{Error, Result};
