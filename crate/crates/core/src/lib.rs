//! Core algorithms for a desk-scale testbed of token-count billing audits.
//!
//! Three auditing schemes are implemented together with the reporting
//! strategies a dishonest provider can mount against them:
//!
//! * a commitment audit: reasoning traces are cut into fixed-size token
//!   blocks, committed in a Merkle tree, and spot-checked with two
//!   similarity heads ([`commitment`], [`verifier`], [`attacks`]);
//! * a predictive audit: a linear regressor over hashed `(prompt, answer)`
//!   features estimates the hidden reasoning length ([`palace`]);
//! * a sequential statistical audit: per-sample deviations between reported
//!   and estimated counts feed a test martingale ([`martingale`]).
//!
//! Everything is deterministic given explicit seeds. The crate is
//! `no_std`-compatible (with `alloc`); file formats, configuration and the
//! command-line driver live in the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attacks;
pub mod commitment;
pub mod corpus;
pub mod error;
pub mod martingale;
pub mod palace;
pub mod rng;
pub mod tokenizer;
pub mod verifier;

pub use error::{Error, Result};
