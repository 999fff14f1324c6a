//! Online learning of a leader strategy in layered dynamic Stackelberg games
//! against a follower whose utility is linear in an unknown parameter.

pub mod baselines;
pub mod error;
pub mod game;
pub mod harness;
pub mod learner;
pub mod lp;
pub mod opt;
pub mod planning;
pub mod record;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
