//! Long-video question answering over reusable evidence databases.
//!
//! Offline, [`semantic`] builds coarse-to-fine textual records per video and
//! [`visual`] stores timestamped object proposals with embeddings. Online,
//! [`retrieval`] maps query terms to matching timestamps and [`inference`]
//! routes each question, selects frames under a budget and asks the answering
//! model. [`eval`] scores predictions per task and category. Every model sits
//! behind a trait in [`clients`], with an HTTP implementation and a scripted
//! fixture replayer.

pub mod cli;
pub mod clients;
pub mod config;
pub mod eval;
pub mod frames;
pub mod inference;
pub mod retrieval;
pub mod sampling;
pub mod semantic;
pub mod tasks;
pub mod visual;
