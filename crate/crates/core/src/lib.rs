pub mod error;
pub mod harness;
pub mod lcm;
pub mod nn;
pub mod optim;
pub mod schedule;
pub mod solver;
pub mod teacher;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Element, Gradients, RngStream, Tensor};
