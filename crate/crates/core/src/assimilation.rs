//! Recovery of the initial velocity from measured trajectories.
//!
//! The control is `u(0) = U` (divergence-free) with `phi(0)` fixed. The cost is
//! `alpha/2 |U|^2` plus trapezoidal `L^2` tracking of the measured velocity
//! and phase and the terminal mismatch; its gradient is `alpha U + p(0)`.

use crate::control::{optimize, ControlSignal, CostTargets, IterationRecord, Objective, OptimizerConfig};
use crate::error::{Error, Result};
use crate::forward::{FlowState, Model, Trajectory};
use crate::grid::{ScalarField, Spectral, VectorField};
use crate::tangent_adjoint::{adjoint_solve, trapezoid_weight, AdjointMode, AdjointTrajectory};

#[derive(Clone, Debug)]
pub struct AssimilationProblem {
    pub model: Model,
    pub phi0: ScalarField,
    pub forcing: Option<Vec<VectorField>>,
    pub measurements: CostTargets,
    /// Weight `alpha` of the `|U|^2` term (1 by default).
    pub control_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DaCost {
    pub control: f64,
    pub velocity_tracking: f64,
    pub phase_tracking: f64,
    pub terminal_velocity: f64,
    pub terminal_phase: f64,
    pub total: f64,
}

/// Cost of the initial velocity `u0` whose trajectory is `traj`.
pub fn cost_da(traj: &Trajectory, u0: &VectorField, problem: &AssimilationProblem) -> Result<DaCost> {
    let m = &problem.measurements;
    m.check(traj)?;
    let steps = traj.steps();
    let dt = traj.dt();
    let mut vt = 0.0;
    let mut pt = 0.0;
    for (n, s) in traj.states().iter().enumerate() {
        let w = trapezoid_weight(n, steps, dt);
        vt += w * s.u.sub(&m.u_track[n])?.norm_sq();
        pt += w * s.phi.sub(&m.phi_track[n])?.norm_sq();
    }
    let last = traj.final_state();
    let c = DaCost {
        control: 0.5 * problem.control_weight * u0.norm_sq(),
        velocity_tracking: 0.5 * vt,
        phase_tracking: 0.5 * pt,
        terminal_velocity: 0.5 * last.u.sub(&m.u_final)?.norm_sq(),
        terminal_phase: 0.5 * last.phi.sub(&m.phi_final)?.norm_sq(),
        total: 0.0,
    };
    Ok(DaCost {
        total: c.control + c.velocity_tracking + c.phase_tracking + c.terminal_velocity + c.terminal_phase,
        ..c
    })
}

/// `G = P(alpha U + p(0))`.
pub fn reduced_gradient_da(
    u0: &VectorField,
    adjoint: &AdjointTrajectory,
    control_weight: f64,
    spectral: &Spectral,
) -> Result<VectorField> {
    spectral.leray_project(&u0.scale(control_weight).add(adjoint.initial_velocity())?)
}

impl AssimilationProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_weight.is_finite() && self.control_weight >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "assimilation.control_weight",
                reason: format!("{} must be nonnegative", self.control_weight),
            });
        }
        self.phi0.grid().check_same(self.model.grid())
    }

    pub fn simulate(&self, u0: &VectorField) -> Result<Trajectory> {
        let init = FlowState::new(u0.clone(), self.phi0.clone(), 0.0);
        self.model.simulate(&init, None, self.forcing.as_deref())
    }

    /// Cost, gradient and the underlying sweeps for one initial velocity.
    pub fn evaluate(&self, u0: &VectorField) -> Result<(DaCost, VectorField, Trajectory, AdjointTrajectory)> {
        let u0 = self.model.spectral().leray_project(u0)?;
        let traj = self.simulate(&u0)?;
        let cost = cost_da(&traj, &u0, self)?;
        let adjoint = adjoint_solve(&self.model, &traj, AdjointMode::Assimilation, &self.measurements)?;
        let grad = reduced_gradient_da(&u0, &adjoint, self.control_weight, self.model.spectral())?;
        Ok((cost, grad, traj, adjoint))
    }

    fn initial<'a>(&self, c: &'a ControlSignal) -> Result<&'a VectorField> {
        c.as_initial()
            .ok_or_else(|| Error::TimeGridMismatch("expected an initial-velocity control".into()))
    }
}

impl Objective for AssimilationProblem {
    fn cost(&self, control: &ControlSignal) -> Result<f64> {
        let u0 = self.model.spectral().leray_project(self.initial(control)?)?;
        Ok(cost_da(&self.simulate(&u0)?, &u0, self)?.total)
    }

    fn cost_and_gradient(&self, control: &ControlSignal) -> Result<(f64, ControlSignal)> {
        let (c, g, _, _) = self.evaluate(self.initial(control)?)?;
        Ok((c.total, ControlSignal::Initial(g)))
    }

    fn inner(&self, a: &ControlSignal, b: &ControlSignal) -> Result<f64> {
        self.initial(a)?.inner(self.initial(b)?)
    }

    fn spectral(&self) -> &Spectral {
        self.model.spectral()
    }
}

#[derive(Clone, Debug)]
pub struct TwinReport {
    pub noise_level: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_ratio: f64,
    pub recovery_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
    pub recovered: VectorField,
}

impl TwinReport {
    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "noise_level: {}\ninitial_cost: {:.16e}\nfinal_cost: {:.16e}\ncost_ratio: {:.16e}\nrecovery_error: {:.16e}\niterations: {}\nconverged: {}\n",
            self.noise_level,
            self.initial_cost,
            self.final_cost,
            self.cost_ratio,
            self.recovery_error,
            self.iterations,
            self.converged
        )
    }
}

/// Generates measurements from `u_true`, optionally perturbs them, and
/// recovers the initial velocity starting from `U = 0`.
pub fn twin_experiment(
    u_true: &VectorField,
    noise_level: f64,
    template: &AssimilationProblem,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<TwinReport> {
    template.validate()?;
    let sp = template.model.spectral();
    if sp.relative_divergence(u_true)? > 1e-10 {
        return Err(Error::InvalidField("true initial velocity must be divergence-free".into()));
    }
    let truth = template.simulate(u_true)?;
    let mut problem = template.clone();
    problem.measurements = CostTargets::from_trajectory(&truth).with_noise(noise_level, seed);
    let g = *template.model.grid();
    let result = optimize(&problem, &ControlSignal::Initial(VectorField::zeros(g)), opt)?;
    let recovered = result.control.as_initial().expect("initial control").clone();
    let initial_cost = result.history[0].cost;
    let final_cost = result.final_cost();
    let true_norm = u_true.norm();
    let recovery_error = if true_norm > 0.0 {
        recovered.sub(u_true)?.norm() / true_norm
    } else {
        recovered.norm()
    };
    Ok(TwinReport {
        noise_level,
        initial_cost,
        final_cost,
        cost_ratio: if initial_cost > 0.0 { final_cost / initial_cost } else { 0.0 },
        recovery_error,
        iterations: result.history.len() - 1,
        converged: result.converged,
        history: result.history,
        recovered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SolverConfig;
    use crate::grid::TorusGrid;
    use crate::physics::{Kernel, KernelFamily, Potential};
    use crate::synthetic;
    use approx::assert_relative_eq;

    fn template(t_final: f64) -> AssimilationProblem {
        let g = TorusGrid::square(16).unwrap();
        let sp = Spectral::new(g);
        let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let cfg = SolverConfig { t_final, ..SolverConfig::default() };
        let model = Model::new(k, Potential::double_well(), cfg).unwrap();
        AssimilationProblem {
            model,
            phi0: ScalarField::from_fn(g, |x, y| 0.1 * x.sin() * y.sin()),
            forcing: None,
            measurements: CostTargets::zeros(g, cfg.steps()),
            control_weight: 1.0,
        }
    }

    #[test]
    fn matched_measurements() {
        let mut pb = template(0.01);
        let g = *pb.model.grid();
        let zero = VectorField::zeros(g);
        pb.measurements = CostTargets::from_trajectory(&pb.simulate(&zero).unwrap());
        let (c, grad, _, _) = pb.evaluate(&zero).unwrap();
        assert_eq!(c.total, 0.0);
        assert_eq!(grad.max_speed(), 0.0);

        let u = synthetic::taylor_green(g, 0.3);
        pb.measurements = CostTargets::from_trajectory(&pb.simulate(&u).unwrap());
        let (c, grad, _, adj) = pb.evaluate(&u).unwrap();
        assert_relative_eq!(c.total, 0.5 * u.norm_sq(), max_relative = 1e-12);
        assert!(adj.initial_velocity().max_speed() < 1e-13);
        assert!(grad.max_abs_diff(&u) < 1e-14);
    }

    #[test]
    fn minus_p0_is_stationary() {
        let pb = template(0.01);
        let g = *pb.model.grid();
        let (_, _, _, adj) = pb.evaluate(&synthetic::taylor_green(g, 0.1)).unwrap();
        let u = adj.initial_velocity().scale(-1.0);
        let grad = reduced_gradient_da(&u, &adj, 1.0, pb.model.spectral()).unwrap();
        assert!(grad.max_speed() < 1e-15);
    }

    #[test]
    fn zero_truth_stays_at_zero() {
        let pb = template(0.01);
        let g = *pb.model.grid();
        let r = twin_experiment(&VectorField::zeros(g), 0.0, &pb, &OptimizerConfig::default(), 1).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.recovered.max_speed(), 0.0);
    }

    #[test]
    fn rejects_divergent_truth() {
        let pb = template(0.01);
        let g = *pb.model.grid();
        let bad = VectorField::from_fn(g, |x, _| (x.sin(), 0.0));
        assert!(twin_experiment(&bad, 0.0, &pb, &OptimizerConfig::default(), 1).is_err());
    }
}
