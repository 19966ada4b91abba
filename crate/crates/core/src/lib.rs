//! Pricing, calibration and hedging on finite-state Markov-chain pricing
//! kernels.
//!
//! A model is a triple `(Q, alpha, g)`: `Q` generates a hidden chain,
//! and the positive solution `f` of `(diag(alpha) - Q) f = g` defines the
//! state-price density `f(X_t) exp(-int alpha(X_s) ds)`. Discount bonds,
//! Libor, swaps, caps, swaptions and FX forwards all price in closed form
//! through one matrix exponential per tenor.
//!
//! The crate is organised around that kernel:
//!
//! - [`chain`] — intensity matrices, matrix exponentials, path simulation
//! - [`model`] — the pricing kernel, discount bonds, log-parameter packing
//! - [`instruments`] — the quoted instrument universe and its closed forms
//! - [`market`] — quote CSV ingestion, synthetic markets, spread-error metric
//! - [`calibration`] — observation likelihood, MLE search, particle filter
//! - [`hedging`] — jump-immunisation hedge solves and a backtest harness
//! - [`oracle`] — seeded Monte-Carlo pricer used to validate the closed forms

pub mod calibration;
pub mod chain;
pub mod error;
pub mod hedging;
pub mod instruments;
pub mod market;
pub mod model;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};
