pub mod check;
pub mod error;
pub mod estimation;
pub mod lpcore;
pub mod model;
pub mod polytope;
pub mod scalar;
pub mod simulator;
pub mod slscontrol;
pub mod synthesis;
pub mod trace;

pub use error::{Error, Result};
pub use simulator::{Algorithm, RunOptions, SimulationTrace};

/// Parameter polytope over `f64`.
pub type Polytope = polytope::HalfspacePolytope<f64>;
/// Linear program over `f64`.
pub type Lp = lpcore::LinearProgram<f64>;
/// LP solution over `f64`.
pub type LpSolution = lpcore::LpSolution<f64>;
