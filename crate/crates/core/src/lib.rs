//! Bayesian price formation with a market maker who learns a latent
//! efficient price from the order flow its own quotes generate.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod config;
pub mod filter;
pub mod flow;
pub mod gaussian;
pub mod grid;
pub mod impact;
pub mod market_maker;
pub mod model;
pub mod output;
pub mod rng;
pub mod roots;
pub mod verify;
