//! Coupled Search→Evaluate agent protocol, a BM25 retrieval environment with
//! score-conditioned feedback, gated rewards, group-relative advantages with
//! process calibration, and a clipped policy objective over a tabular toy
//! policy.

pub mod advantage;
pub mod harness;
pub mod objective;
pub mod protocol;
pub mod retrieval;
pub mod reward;
