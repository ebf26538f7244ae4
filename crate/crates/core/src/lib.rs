//! Sign-based stochastic optimizers (SignSGD, Lion, Muon, Muonlight) and
//! normalized-gradient baselines under heavy-tailed gradient noise, together
//! with executable checks of the supporting concentration inequalities and
//! stability lemmas.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod concentration;
pub mod error;
pub mod harness;
pub mod noise;
pub mod optim;
pub mod problems;
pub mod tensor;
pub mod theory;
pub mod validator;

pub use error::{Error, Result};
