//! Clustered federated learning over a hybrid NOMA uplink.
//!
//! The crate is organised bottom-up: [`dirichlet`] estimates per-user label
//! skew, [`clustering`] groups users spectrally, [`channel`] models the
//! uplink, [`allocation`] matches users to sub-channels and sets transmit
//! powers, [`fl`] runs federated training and [`sim`] wires everything into
//! seeded experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod allocation;
pub mod channel;
pub mod clustering;
pub mod dirichlet;
pub mod error;
pub mod exec;
pub mod fl;
pub mod linalg;
pub mod seed;
pub mod sim;
pub mod special;

pub use error::{Error, FieldError, Result};
pub use exec::Execution;
