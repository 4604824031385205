//! Minimal expected discounted capital injections for a Brownian surplus
//! under a two-state Markov-switching interest rate.

pub mod cli;
pub mod closed_form;
pub mod exppoly;
pub mod model;
pub mod recursion;
pub mod simulator;
