pub mod bundle;
pub mod cycles;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod ode;
pub mod systems;
pub mod torus;

pub use error::{Error, Result};
