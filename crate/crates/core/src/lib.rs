//! Differentially private federated linear contextual bandits.

pub mod centralized;
pub mod decentralized;
pub mod environment;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod privatizer;
pub mod record;
pub mod rng;
pub mod scalar;

pub use error::ProtocolError;
pub use scalar::Scalar;

pub type Vec64 = linalg::Vector<f64>;
pub type Mat64 = linalg::SymMatrix<f64>;
pub type Vec32 = linalg::Vector<f32>;
pub type Mat32 = linalg::SymMatrix<f32>;
pub type Agent64 = centralized::AgentState<f64>;
pub type Agent32 = centralized::AgentState<f32>;
