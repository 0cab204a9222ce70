//! Pseudo-spectral solver for the controlled nonlocal Cahn-Hilliard-Navier-Stokes
//! system on a periodic torus, together with its tangent and adjoint systems,
//! a distributed optimal-control problem and initial-velocity data assimilation.
//!
//! The crate is layered bottom-up:
//!
//! * [`grid`]: torus, fields, FFT operators, Leray projection.
//! * [`physics`]: convolution kernels, polynomial potentials, assumption checks.
//! * [`forward`]: the IMEX time stepper, energy and continuous-dependence diagnostics.
//! * [`tangent_adjoint`]: linearized and adjoint sweeps over a stored trajectory.
//! * [`control`]: distributed control costs, gradient, optimizer, minimum-principle tools.
//! * [`assimilation`]: initial-velocity control and twin experiments.
//!
//! ```
//! use chns_core::prelude::*;
//!
//! let grid = TorusGrid::square(16).unwrap();
//! let spectral = Spectral::new(grid);
//! let kernel = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &spectral).unwrap();
//! let config = SolverConfig { dt: 1e-3, t_final: 0.01, ..SolverConfig::default() };
//! let model = Model::new(kernel, Potential::double_well(), config).unwrap();
//! let state = FlowState::new(
//!     synthetic::taylor_green(grid, 0.5),
//!     ScalarField::from_fn(grid, |x, y| 0.1 * x.sin() * y.sin()),
//!     0.0,
//! );
//! let traj = model.simulate(&state, None, None).unwrap();
//! assert_eq!(traj.states().len(), 11);
//! ```

pub mod assimilation;
pub mod control;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod physics;
pub mod synthetic;
pub mod tangent_adjoint;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::assimilation::{AssimilationProblem, TwinReport};
    pub use crate::control::{
        ControlSignal, CostTargets, OcpProblem, OptimizeResult, OptimizerConfig,
    };
    pub use crate::error::{Error, Result};
    pub use crate::forward::{FlowState, Model, SolverConfig, StepDiagnostics, Trajectory};
    pub use crate::grid::{KernelTransform, ScalarField, Spectral, TorusGrid, VectorField};
    pub use crate::physics::{AssumptionReport, Kernel, KernelFamily, Potential};
    pub use crate::synthetic;
    pub use crate::tangent_adjoint::{AdjointMode, AdjointTrajectory, TangentTrajectory};
}
