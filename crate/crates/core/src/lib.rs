//! Marked temporal point process engine.
//!
//! Event sequences carry textual event types and continuous timestamps. The
//! engine tokenizes the type texts, embeds times, runs the flattened stream
//! through a causal transformer (optionally with low-rank adapters), and
//! models the conditional intensity of the next event, trained by maximum
//! likelihood plus type/time prediction losses. Closed-form Poisson/Hawkes
//! generators and oracles live alongside for verification.

pub mod autodiff;
pub mod backbone;
pub mod data;
pub mod encode;
pub mod error;
pub mod heads;
pub mod model;
pub mod params;
pub mod synth;
pub mod tpp;
pub mod train;
