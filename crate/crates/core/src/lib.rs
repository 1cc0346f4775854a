//! Modular hybrid autoregressive transducer (MHAT) at desk scale: exact
//! alignment-lattice training, internal LM training and text-only internal
//! LM adaptation, beam search with LM fusion, and synthetic domain-shift
//! experiments.

pub mod adapt;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod extlm;
pub mod fixtures;
pub mod lattice;
pub mod losses;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
