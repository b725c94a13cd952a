//! Hate/counter-speech classification with a panel of paragraph-vector
//! logistic experts, plus reply-tree analytics over the labeled output.
//!
//! Pipeline: [`text`] normalizes tweets, [`corpus`] samples balanced training
//! and test sets, [`embed`] learns document vectors, [`linear`] fits one
//! logistic hypothesis per expert, [`panel`] averages experts with a
//! confidence threshold, [`eval`] measures the result and [`convo`] analyses
//! labeled conversations.

mod binio;
pub mod commands;
pub mod config;
pub mod convo;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod linear;
pub mod panel;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
