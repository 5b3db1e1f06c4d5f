pub mod biattention;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod hos;
pub mod io;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod predictor;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Bindings, ParamStore};
pub use tensor::{Rng, Tape, Tensor, Var};
