//! Heterogeneous cryo-EM reconstruction with amortized pose and conformation
//! inference, trained jointly on image reconstruction and conditional pose
//! prediction.

pub mod error;
pub mod io;
pub mod numerics;
pub mod model;
pub mod analysis;
pub mod nn;
pub mod simulator;
pub mod trainer;

pub use error::{HetemError, Result};
