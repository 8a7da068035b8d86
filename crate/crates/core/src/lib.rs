//! Numerical machinery for radial semilinear waves with scale-invariant
//! damping and mass in even space dimension.

pub mod duhamel;
pub mod error;
pub mod estimates;
pub mod exponents;
pub mod fd;
pub mod field;
pub mod kernel;
pub mod profile;
pub mod propagator;
pub mod quadrature;

pub use duhamel::{DuhamelOperator, DuhamelStencil, GridConfig, GridField, GridSpec, PicardTrace};
pub use error::{Error, Result};
pub use exponents::ModelParams;
pub use fd::{fd_solve, Boundary, FdConfig, FdRun, FdStatus};
pub use field::RadialField;
pub use kernel::{build_hj, KernelSum, KernelTerm};
pub use profile::{BumpProfile, PowerProfile, RadialProfile, ZeroProfile};
pub use propagator::{LinearSolution, Propagator, PropagatorConstants};
