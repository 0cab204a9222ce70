//! Distributed optimal control: cost, reduced gradient, projected-gradient
//! optimizer, and the instruments used to probe the minimum principle (spike
//! variations, the Ekeland distance, the Hamiltonian and its pointwise
//! residual).
//!
//! A distributed control is a list of `N + 1` node values; value `n` is held on
//! `[t_n, t_{n+1})` and the last entry is never used by the dynamics. The
//! control inner product is therefore `dt * sum_{n<N} (U_n, V_n)`.

use web_time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forward::{FlowState, Model, Trajectory};
use crate::grid::{ScalarField, Spectral, TorusGrid, VectorField};
use crate::synthetic;
use crate::tangent_adjoint::{adjoint_solve, trapezoid_weight, AdjointMode, AdjointState, AdjointTrajectory};

/// Either a time-indexed velocity source or a single initial velocity.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlSignal {
    Distributed(Vec<VectorField>),
    Initial(VectorField),
}

impl ControlSignal {
    pub fn zeros_distributed(grid: TorusGrid, steps: usize) -> Self {
        Self::Distributed(vec![VectorField::zeros(grid); steps + 1])
    }

    pub fn as_distributed(&self) -> Option<&[VectorField]> {
        match self {
            Self::Distributed(v) => Some(v),
            Self::Initial(_) => None,
        }
    }

    pub fn as_initial(&self) -> Option<&VectorField> {
        match self {
            Self::Initial(v) => Some(v),
            Self::Distributed(_) => None,
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &ControlSignal) -> Result<Self> {
        match (self, other) {
            (Self::Distributed(a), Self::Distributed(b)) if a.len() == b.len() => Ok(Self::Distributed(
                a.iter().zip(b).map(|(x, y)| x.add_scaled(s, y)).collect::<Result<_>>()?,
            )),
            (Self::Initial(a), Self::Initial(b)) => Ok(Self::Initial(a.add_scaled(s, b)?)),
            _ => Err(Error::TimeGridMismatch("incompatible control signals".into())),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        match self {
            Self::Distributed(a) => Self::Distributed(a.iter().map(|v| v.scale(s)).collect()),
            Self::Initial(a) => Self::Initial(a.scale(s)),
        }
    }

    /// Leray projection, then (optionally) the radial projection onto the
    /// ball of radius `radius`, node by node for a distributed control.
    pub fn project(&self, spectral: &Spectral, radius: Option<f64>) -> Result<Self> {
        let one = |v: &VectorField| -> Result<VectorField> {
            let p = spectral.leray_project(v)?;
            Ok(match radius {
                Some(r) if p.norm() > r => p.scale(r / p.norm()),
                _ => p,
            })
        };
        Ok(match self {
            Self::Distributed(a) => Self::Distributed(a.iter().map(one).collect::<Result<_>>()?),
            Self::Initial(a) => Self::Initial(one(a)?),
        })
    }
}

/// Desired states (distributed control) or measurements (assimilation).
#[derive(Clone, Debug, PartialEq)]
pub struct CostTargets {
    pub u_track: Vec<VectorField>,
    pub phi_track: Vec<ScalarField>,
    pub u_final: VectorField,
    pub phi_final: ScalarField,
}

impl CostTargets {
    pub fn zeros(grid: TorusGrid, steps: usize) -> Self {
        Self {
            u_track: vec![VectorField::zeros(grid); steps + 1],
            phi_track: vec![ScalarField::zeros(grid); steps + 1],
            u_final: VectorField::zeros(grid),
            phi_final: ScalarField::zeros(grid),
        }
    }

    /// Targets met exactly by `traj` (every node and the final state).
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let last = traj.final_state();
        Self {
            u_track: traj.states().iter().map(|s| s.u.clone()).collect(),
            phi_track: traj.states().iter().map(|s| s.phi.clone()).collect(),
            u_final: last.u.clone(),
            phi_final: last.phi.clone(),
        }
    }

    pub fn check(&self, traj: &Trajectory) -> Result<()> {
        let need = traj.steps() + 1;
        if self.u_track.len() != need || self.phi_track.len() != need {
            return Err(Error::TimeGridMismatch(format!(
                "targets have {}/{} nodes, trajectory has {need}",
                self.u_track.len(),
                self.phi_track.len()
            )));
        }
        let g = traj.states()[0].u.grid();
        self.u_final.grid().check_same(g)?;
        self.phi_final.grid().check_same(g)
    }

    /// Adds independent Gaussian noise to every field, with standard deviation
    /// `level` times the field's root-mean-square value.
    pub fn with_noise(&self, level: f64, seed: u64) -> Self {
        if level == 0.0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noisy = |vals: &[f64]| -> Vec<f64> {
            let rms = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt();
            vals.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + level * rms * z
                })
                .collect()
        };
        let mut vec_noise = |v: &VectorField| {
            let x = noisy(v.x());
            let y = noisy(v.y());
            VectorField::from_vecs_unchecked(*v.grid(), x, y, false)
        };
        let u_track = self.u_track.iter().map(&mut vec_noise).collect();
        let u_final = vec_noise(&self.u_final);
        let mut sc_noise = |s: &ScalarField| ScalarField::from_vec_unchecked(*s.grid(), noisy(s.values()));
        Self {
            u_track,
            phi_track: self.phi_track.iter().map(&mut sc_noise).collect(),
            u_final,
            phi_final: sc_noise(&self.phi_final),
        }
    }
}

/// Terms of the distributed-control cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcpCost {
    pub velocity_tracking: f64,
    pub phase_tracking: f64,
    pub terminal_velocity: f64,
    pub terminal_phase: f64,
    pub control: f64,
    pub total: f64,
}

fn check_control_len(control: &[VectorField], traj: &Trajectory) -> Result<()> {
    if control.len() < traj.steps() {
        return Err(Error::TimeGridMismatch(format!(
            "control has {} entries, need at least {}",
            control.len(),
            traj.steps()
        )));
    }
    Ok(())
}

fn ocp_cost_with(
    spectral: &Spectral,
    traj: &Trajectory,
    control: &[VectorField],
    targets: &CostTargets,
    velocity_term: impl Fn(&Spectral, &VectorField) -> Result<f64>,
) -> Result<OcpCost> {
    targets.check(traj)?;
    check_control_len(control, traj)?;
    let steps = traj.steps();
    let dt = traj.dt();
    let mut vt = 0.0;
    let mut pt = 0.0;
    for (n, s) in traj.states().iter().enumerate() {
        let w = trapezoid_weight(n, steps, dt);
        vt += w * velocity_term(spectral, &s.u.sub(&targets.u_track[n])?)?;
        pt += w * s.phi.sub(&targets.phi_track[n])?.norm_sq();
    }
    let last = traj.final_state();
    let tv = last.u.sub(&targets.u_final)?.norm_sq();
    let tp = last.phi.sub(&targets.phi_final)?.norm_sq();
    let cu: f64 = control[..steps].iter().map(|v| v.norm_sq()).sum::<f64>() * dt;
    let c = OcpCost {
        velocity_tracking: 0.5 * vt,
        phase_tracking: 0.5 * pt,
        terminal_velocity: 0.5 * tv,
        terminal_phase: 0.5 * tp,
        control: 0.5 * cu,
        total: 0.0,
    };
    Ok(OcpCost {
        total: c.velocity_tracking + c.phase_tracking + c.terminal_velocity + c.terminal_phase + c.control,
        ..c
    })
}

/// Distributed-control cost with the velocity-gradient tracking norm.
pub fn cost_ocp(
    spectral: &Spectral,
    traj: &Trajectory,
    control: &[VectorField],
    targets: &CostTargets,
) -> Result<OcpCost> {
    ocp_cost_with(spectral, traj, control, targets, |sp, v| sp.grad_norm_sq(v))
}

/// Same cost with the vorticity norm `|curl(u - u_d)|^2` in the tracking term.
pub fn cost_ocp_curl_form(
    spectral: &Spectral,
    traj: &Trajectory,
    control: &[VectorField],
    targets: &CostTargets,
) -> Result<OcpCost> {
    ocp_cost_with(spectral, traj, control, targets, |sp, v| Ok(sp.curl2d(v)?.norm_sq()))
}

/// `G_n = U_n + p_n` at every node.
pub fn reduced_gradient_ocp(control: &[VectorField], adjoint: &AdjointTrajectory) -> Result<Vec<VectorField>> {
    if control.len() != adjoint.states().len() {
        return Err(Error::TimeGridMismatch(format!(
            "control has {} nodes, adjoint has {}",
            control.len(),
            adjoint.states().len()
        )));
    }
    control.iter().zip(adjoint.states()).map(|(u, a)| u.add(&a.p)).collect()
}

/// Control-space inner product `dt * sum_{n<N} (a_n, b_n)`.
pub fn distributed_inner(a: &[VectorField], b: &[VectorField], dt: f64) -> Result<f64> {
    let steps = a.len().min(b.len()).saturating_sub(1);
    let mut s = 0.0;
    for n in 0..steps {
        s += a[n].inner(&b[n])?;
    }
    Ok(s * dt)
}

/// Something the optimizer can minimize.
pub trait Objective {
    fn cost(&self, control: &ControlSignal) -> Result<f64>;
    fn cost_and_gradient(&self, control: &ControlSignal) -> Result<(f64, ControlSignal)>;
    fn inner(&self, a: &ControlSignal, b: &ControlSignal) -> Result<f64>;
    fn spectral(&self) -> &Spectral;
}

/// The distributed-control problem: fixed initial data, forcing and targets.
#[derive(Clone, Debug)]
pub struct OcpProblem {
    pub model: Model,
    pub initial: FlowState,
    pub forcing: Option<Vec<VectorField>>,
    pub targets: CostTargets,
}

/// Forward and adjoint data produced while evaluating a gradient.
#[derive(Clone, Debug)]
pub struct OcpEvaluation {
    pub trajectory: Trajectory,
    pub adjoint: AdjointTrajectory,
    pub cost: OcpCost,
    pub gradient: Vec<VectorField>,
}

impl OcpProblem {
    pub fn simulate(&self, control: &[VectorField]) -> Result<Trajectory> {
        self.model.simulate(&self.initial, Some(control), self.forcing.as_deref())
    }

    pub fn evaluate(&self, control: &[VectorField]) -> Result<OcpEvaluation> {
        let trajectory = self.simulate(control)?;
        let cost = cost_ocp(self.model.spectral(), &trajectory, control, &self.targets)?;
        let adjoint = adjoint_solve(&self.model, &trajectory, AdjointMode::Distributed, &self.targets)?;
        let gradient = reduced_gradient_ocp(control, &adjoint)?;
        Ok(OcpEvaluation {
            trajectory,
            adjoint,
            cost,
            gradient,
        })
    }

    fn distributed<'a>(&self, c: &'a ControlSignal) -> Result<&'a [VectorField]> {
        c.as_distributed()
            .ok_or_else(|| Error::TimeGridMismatch("expected a distributed control".into()))
    }
}

impl Objective for OcpProblem {
    fn cost(&self, control: &ControlSignal) -> Result<f64> {
        let u = self.distributed(control)?;
        let traj = self.simulate(u)?;
        Ok(cost_ocp(self.model.spectral(), &traj, u, &self.targets)?.total)
    }

    fn cost_and_gradient(&self, control: &ControlSignal) -> Result<(f64, ControlSignal)> {
        let e = self.evaluate(self.distributed(control)?)?;
        Ok((e.cost.total, ControlSignal::Distributed(e.gradient)))
    }

    fn inner(&self, a: &ControlSignal, b: &ControlSignal) -> Result<f64> {
        distributed_inner(self.distributed(a)?, self.distributed(b)?, self.model.config().dt)
    }

    fn spectral(&self) -> &Spectral {
        self.model.spectral()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub step0: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub grad_tol: f64,
    pub ball_radius: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step0: 1.0,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            grad_tol: 1e-6,
            ball_radius: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.step0.is_finite() && self.step0 > 0.0) {
            return bad("optimizer.step0", format!("{} must be positive", self.step0));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("optimizer.armijo_c", format!("{} must lie in (0, 1)", self.armijo_c));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("optimizer.armijo_shrink", format!("{} must lie in (0, 1)", self.armijo_shrink));
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return bad("optimizer.grad_tol", format!("{} must be nonnegative", self.grad_tol));
        }
        if let Some(r) = self.ball_radius {
            if r.is_nan() || r <= 0.0 {
                return bad("optimizer.radius", format!("{r} must be positive"));
            }
        }
        Ok(())
    }
}

/// One optimizer iteration (iteration 0 is the initial guess).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub wall_seconds: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: [&'static str; 5] = ["iter", "cost", "grad_norm", "step", "wall_seconds"];

    pub fn csv_row(&self) -> Vec<f64> {
        vec![self.iter as f64, self.cost, self.grad_norm, self.step, self.wall_seconds]
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub control: ControlSignal,
    pub gradient: ControlSignal,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

impl OptimizeResult {
    pub fn final_cost(&self) -> f64 {
        self.history.last().map(|r| r.cost).unwrap_or(f64::NAN)
    }
}

const MAX_SHRINKS: usize = 40;

/// Projected gradient descent with Armijo backtracking and Barzilai-Borwein
/// trial steps.
///
/// Stops when `|U - proj(U - G)| / max(1, |U|) <= grad_tol` (which is
/// `|G| / max(1, |U|)` without a ball constraint) or after `max_iters`.
pub fn optimize<O: Objective>(
    objective: &O,
    initial_guess: &ControlSignal,
    config: &OptimizerConfig,
) -> Result<OptimizeResult> {
    config.validate()?;
    let clock = Instant::now();
    let sp = objective.spectral();
    let radius = config.ball_radius;
    let mut u = initial_guess.project(sp, radius)?;
    let (mut cost, mut grad) = objective.cost_and_gradient(&u)?;
    let norm = |c: &ControlSignal| -> Result<f64> { Ok(objective.inner(c, c)?.max(0.0).sqrt()) };
    let mut history = vec![IterationRecord {
        iter: 0,
        cost,
        grad_norm: norm(&grad)?,
        step: 0.0,
        wall_seconds: clock.elapsed().as_secs_f64(),
    }];
    let mut prev: Option<(ControlSignal, ControlSignal)> = None;
    let mut converged = false;
    for iter in 1..=config.max_iters + 1 {
        let stationarity = norm(&u.add_scaled(-1.0, &u.add_scaled(-1.0, &grad)?.project(sp, radius)?)?)?;
        if stationarity / norm(&u)?.max(1.0) <= config.grad_tol {
            converged = true;
            break;
        }
        if iter > config.max_iters {
            break;
        }
        let mut alpha = match &prev {
            Some((up, gp)) => {
                let s = u.add_scaled(-1.0, up)?;
                let y = grad.add_scaled(-1.0, gp)?;
                let sy = objective.inner(&s, &y)?;
                let ss = objective.inner(&s, &s)?;
                if sy > 0.0 && ss > 0.0 {
                    (ss / sy).clamp(1e-10, 1e10)
                } else {
                    config.step0
                }
            }
            None => config.step0,
        };
        let mut accepted = None;
        for _ in 0..=MAX_SHRINKS {
            let trial = u.add_scaled(-alpha, &grad)?.project(sp, radius)?;
            let decrease = objective.inner(&grad, &trial.add_scaled(-1.0, &u)?)?;
            match objective.cost(&trial) {
                Ok(c) if c.is_finite() && c <= cost + config.armijo_c * decrease => {
                    accepted = Some(trial);
                    break;
                }
                Ok(_) => {}
                Err(e) if e.is_numeric() => {}
                Err(e) => return Err(e),
            }
            alpha *= config.armijo_shrink;
        }
        let Some(next) = accepted else {
            return Err(Error::LineSearchStall {
                iteration: iter,
                shrinks: MAX_SHRINKS,
                cost,
                grad_norm: norm(&grad)?,
            });
        };
        let (c, g) = objective.cost_and_gradient(&next)?;
        prev = Some((std::mem::replace(&mut u, next), std::mem::replace(&mut grad, g)));
        cost = c;
        history.push(IterationRecord {
            iter,
            cost,
            grad_norm: norm(&grad)?,
            step: alpha,
            wall_seconds: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(OptimizeResult {
        control: u,
        gradient: grad,
        history,
        converged,
    })
}

/// Replaces the control by `w` on `(tau - h, tau]`. On the time grid this is
/// every node `n < N` whose interval `[t_n, t_{n+1})` lies inside
/// `[tau - h, tau]`.
pub fn spike_variation(
    control: &[VectorField],
    dt: f64,
    tau: f64,
    h: f64,
    w: &VectorField,
) -> Result<Vec<VectorField>> {
    let steps = control.len().saturating_sub(1);
    let t_final = steps as f64 * dt;
    let eps = 1e-9 * dt;
    if !(h > 0.0 && h <= tau + eps && tau <= t_final + eps) {
        return Err(Error::InvalidParameter {
            name: "spike",
            reason: format!("need 0 < h <= tau <= T, got h = {h}, tau = {tau}, T = {t_final}"),
        });
    }
    let mut out = control.to_vec();
    for (n, slot) in out.iter_mut().enumerate().take(steps) {
        let t0 = n as f64 * dt;
        if t0 >= tau - h - eps && t0 + dt <= tau + eps {
            w.grid().check_same(slot.grid())?;
            *slot = w.clone();
        }
    }
    Ok(out)
}

/// Measure of the set where two distributed controls differ: `dt` times the
/// number of control nodes `n < N` whose values differ beyond `1e-14`
/// relative.
pub fn ekeland_metric(a: &[VectorField], b: &[VectorField], dt: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::TimeGridMismatch(format!("{} vs {} nodes", a.len(), b.len())));
    }
    let steps = a.len().saturating_sub(1);
    let mut count = 0usize;
    for n in 0..steps {
        a[n].grid().check_same(b[n].grid())?;
        let scale = a[n].max_speed().max(b[n].max_speed());
        if a[n].max_abs_diff(&b[n]) > 1e-14 * scale {
            count += 1;
        }
    }
    Ok(count as f64 * dt)
}

/// Terms of the Hamiltonian `L + <p, N1> + <eta, N2>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HamiltonianValue {
    pub running_cost: f64,
    pub momentum_pairing: f64,
    pub phase_pairing: f64,
    pub total: f64,
}

/// Evaluates the Hamiltonian at one instant. `N1 = nu Lap u - (u.grad)u +
/// mu grad phi + h + U` (the pressure gradient is orthogonal to `p`),
/// `N2 = -u.grad phi + Lap mu`. No truncation is applied.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    model: &Model,
    state: &FlowState,
    control_value: &VectorField,
    adjoint: &AdjointState,
    u_target: &VectorField,
    phi_target: &ScalarField,
    forcing: Option<&VectorField>,
) -> Result<HamiltonianValue> {
    let sp = model.spectral();
    let u = &state.u;
    let phi = &state.phi;
    let running = 0.5
        * (sp.grad_norm_sq(&u.sub(u_target)?)? + phi.sub(phi_target)?.norm_sq() + control_value.norm_sq());

    let mu = model.chemical_potential(phi)?;
    let gphi = sp.grad(phi)?;
    let gux = sp.grad(&ScalarField::from_vec_unchecked(*u.grid(), u.x().to_vec()))?;
    let guy = sp.grad(&ScalarField::from_vec_unchecked(*u.grid(), u.y().to_vec()))?;
    let lap = |v: &[f64]| sp.laplacian(&ScalarField::from_vec_unchecked(*u.grid(), v.to_vec()));
    let lx = lap(u.x())?;
    let ly = lap(u.y())?;
    let nu = model.config().nu;
    let n = u.grid().len();
    let mut n1x = vec![0.0; n];
    let mut n1y = vec![0.0; n];
    let (ux, uy) = (u.x(), u.y());
    for i in 0..n {
        n1x[i] = nu * lx.values()[i] - (ux[i] * gux.x()[i] + uy[i] * gux.y()[i])
            + mu.values()[i] * gphi.x()[i]
            + control_value.x()[i];
        n1y[i] = nu * ly.values()[i] - (ux[i] * guy.x()[i] + uy[i] * guy.y()[i])
            + mu.values()[i] * gphi.y()[i]
            + control_value.y()[i];
        if let Some(h) = forcing {
            n1x[i] += h.x()[i];
            n1y[i] += h.y()[i];
        }
    }
    let n1 = VectorField::from_vecs_unchecked(*u.grid(), n1x, n1y, false);
    let lap_mu = sp.laplacian(&mu)?;
    let n2: Vec<f64> = (0..n)
        .map(|i| -(ux[i] * gphi.x()[i] + uy[i] * gphi.y()[i]) + lap_mu.values()[i])
        .collect();
    let momentum_pairing = adjoint.p.inner(&n1)?;
    let phase_pairing = adjoint.eta.inner(&ScalarField::from_vec_unchecked(*u.grid(), n2))?;
    Ok(HamiltonianValue {
        running_cost: running,
        momentum_pairing,
        phase_pairing,
        total: running + momentum_pairing + phase_pairing,
    })
}

/// Trial set per control node `n < N`: `0`, `-p_n`, and `+/- |p_n| r_i` for
/// seven seeded random unit divergence-free fields `r_i` (16 trials).
pub fn default_trial_controls(spectral: &Spectral, adjoint: &AdjointTrajectory, seed: u64) -> Vec<Vec<VectorField>> {
    let g = *spectral.grid();
    let dirs: Vec<VectorField> = (0..7)
        .map(|i| synthetic::random_divergence_free(spectral, seed.wrapping_add(i), 4))
        .collect();
    let states = adjoint.states();
    states[..states.len() - 1]
        .iter()
        .map(|a| {
            let pn = a.p.norm();
            let mut trials = vec![VectorField::zeros(g), a.p.scale(-1.0)];
            for r in &dirs {
                trials.push(r.scale(pn));
                trials.push(r.scale(-pn));
            }
            trials
        })
        .collect()
}

/// `max_W [1/2 |U_n|^2 + (p_n, U_n)] - [1/2 |W|^2 + (p_n, W)]` for every node
/// that has a trial list. Nonpositive values certify the pointwise principle.
pub fn minimum_principle_residual(
    control: &[VectorField],
    adjoint: &AdjointTrajectory,
    trials: &[Vec<VectorField>],
) -> Result<Vec<f64>> {
    if trials.len() > control.len() || trials.len() > adjoint.states().len() {
        return Err(Error::TimeGridMismatch(format!(
            "{} trial lists for {} control nodes",
            trials.len(),
            control.len()
        )));
    }
    let mut out = Vec::with_capacity(trials.len());
    for (n, set) in trials.iter().enumerate() {
        let p = &adjoint.states()[n].p;
        let h = |w: &VectorField| -> Result<f64> { Ok(0.5 * w.norm_sq() + p.inner(w)?) };
        let at_u = h(&control[n])?;
        let mut worst = f64::NEG_INFINITY;
        for w in set {
            worst = worst.max(at_u - h(w)?);
        }
        out.push(worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SolverConfig;
    use crate::physics::{Kernel, KernelFamily, Potential};
    use approx::assert_relative_eq;

    fn problem(n: usize, t_final: f64) -> OcpProblem {
        let g = TorusGrid::square(n).unwrap();
        let sp = Spectral::new(g);
        let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let cfg = SolverConfig { t_final, ..SolverConfig::default() };
        let model = Model::new(k, Potential::double_well(), cfg).unwrap();
        let initial = FlowState::new(
            synthetic::taylor_green(g, 0.5),
            ScalarField::from_fn(g, |x, y| 0.1 * x.sin() * y.sin()),
            0.0,
        );
        let steps = cfg.steps();
        OcpProblem {
            model,
            initial,
            forcing: None,
            targets: CostTargets::zeros(g, steps),
        }
    }

    #[test]
    fn matched_targets_and_zero_control_cost_nothing() {
        let mut pb = problem(16, 0.01);
        let steps = pb.model.config().steps();
        let zero = vec![VectorField::zeros(*pb.model.grid()); steps + 1];
        let traj = pb.simulate(&zero).unwrap();
        pb.targets = CostTargets::from_trajectory(&traj);
        assert_eq!(cost_ocp(pb.model.spectral(), &traj, &zero, &pb.targets).unwrap().total, 0.0);
    }

    #[test]
    fn constant_control_cost_is_half_t_norm() {
        let pb = problem(16, 0.01);
        let g = *pb.model.grid();
        let steps = pb.model.config().steps();
        let w = synthetic::single_mode(g, 1, 1, 0.4);
        let control = vec![w.clone(); steps + 1];
        let traj = pb.simulate(&control).unwrap();
        let targets = CostTargets::from_trajectory(&traj);
        let c = cost_ocp(pb.model.spectral(), &traj, &control, &targets).unwrap();
        assert_relative_eq!(c.total, 0.5 * 0.01 * w.norm_sq(), max_relative = 1e-12);
    }

    #[test]
    fn curl_form_agrees() {
        let pb = problem(16, 0.02);
        let g = *pb.model.grid();
        let steps = pb.model.config().steps();
        let control = vec![synthetic::single_mode(g, 2, 1, 0.3); steps + 1];
        let traj = pb.simulate(&control).unwrap();
        let mut targets = pb.targets.clone();
        targets.u_track = (0..=steps).map(|_| synthetic::taylor_green(g, 0.1)).collect();
        let a = cost_ocp(pb.model.spectral(), &traj, &control, &targets).unwrap();
        let b = cost_ocp_curl_form(pb.model.spectral(), &traj, &control, &targets).unwrap();
        assert_relative_eq!(a.total, b.total, max_relative = 1e-10);
    }

    #[test]
    fn gradient_reduces_to_control_without_adjoint() {
        let mut pb = problem(16, 0.01);
        let g = *pb.model.grid();
        let steps = pb.model.config().steps();
        let u = vec![synthetic::single_mode(g, 1, 0, 0.2); steps + 1];
        let traj = pb.simulate(&u).unwrap();
        pb.targets = CostTargets::from_trajectory(&traj);
        let e = pb.evaluate(&u).unwrap();
        for (gn, un) in e.gradient.iter().zip(&u) {
            assert!(gn.max_abs_diff(un) < 1e-15);
        }
        // U = -p is stationary
        let pb = problem(16, 0.01);
        let e = pb.evaluate(&u).unwrap();
        let minus_p: Vec<VectorField> = e.adjoint.states().iter().map(|a| a.p.scale(-1.0)).collect();
        let g = reduced_gradient_ocp(&minus_p, &e.adjoint).unwrap();
        assert!(g.iter().all(|v| v.max_speed() == 0.0));
    }

    #[test]
    fn optimizer_zero_iterations_returns_guess() {
        let pb = problem(16, 0.01);
        let guess = ControlSignal::zeros_distributed(*pb.model.grid(), pb.model.config().steps());
        let cfg = OptimizerConfig { max_iters: 0, grad_tol: 0.0, ..OptimizerConfig::default() };
        let r = optimize(&pb, &guess, &cfg).unwrap();
        assert_eq!(r.control, guess);
        assert_eq!(r.history.len(), 1);
    }

    #[test]
    fn optimizer_descends_monotonically() {
        let pb = problem(16, 0.02);
        let guess = ControlSignal::zeros_distributed(*pb.model.grid(), pb.model.config().steps());
        let cfg = OptimizerConfig { max_iters: 8, grad_tol: 1e-10, ..OptimizerConfig::default() };
        let r = optimize(&pb, &guess, &cfg).unwrap();
        assert!(r.history.windows(2).all(|w| w[1].cost <= w[0].cost));
        assert!(r.final_cost() < r.history[0].cost);
    }

    #[test]
    fn ball_constraint_is_respected() {
        let pb = problem(16, 0.02);
        let guess = ControlSignal::zeros_distributed(*pb.model.grid(), pb.model.config().steps());
        let cfg = OptimizerConfig { max_iters: 5, grad_tol: 0.0, ball_radius: Some(0.01), ..OptimizerConfig::default() };
        let r = optimize(&pb, &guess, &cfg).unwrap();
        for v in r.control.as_distributed().unwrap() {
            assert!(v.norm() <= 0.01 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn spike_and_metric() {
        let g = TorusGrid::square(8).unwrap();
        let dt = 0.01;
        let base = vec![VectorField::zeros(g); 11];
        let w = synthetic::single_mode(g, 1, 0, 1.0);
        let s = spike_variation(&base, dt, 0.05, 0.03, &w).unwrap();
        let hit: Vec<usize> = (0..11).filter(|&n| s[n].max_speed() > 0.0).collect();
        assert_eq!(hit, vec![2, 3, 4]);
        assert_relative_eq!(ekeland_metric(&s, &base, dt).unwrap(), 0.03, max_relative = 1e-12);
        assert_eq!(ekeland_metric(&base, &base, dt).unwrap(), 0.0);
        let all = vec![w.clone(); 11];
        assert_relative_eq!(ekeland_metric(&all, &base, dt).unwrap(), 0.1, max_relative = 1e-12);
        assert!(spike_variation(&base, dt, 0.02, 0.03, &w).is_err());
        assert!(spike_variation(&base, dt, 0.2, 0.03, &w).is_err());
    }

    #[test]
    fn minimum_principle_examples() {
        let pb = problem(16, 0.01);
        let steps = pb.model.config().steps();
        let g = *pb.model.grid();
        let e = pb.evaluate(&vec![VectorField::zeros(g); steps + 1]).unwrap();
        let trials = default_trial_controls(pb.model.spectral(), &e.adjoint, 3);
        assert_eq!(trials[0].len(), 16);
        let minus_p: Vec<VectorField> = e.adjoint.states().iter().map(|a| a.p.scale(-1.0)).collect();
        let r = minimum_principle_residual(&minus_p, &e.adjoint, &trials).unwrap();
        assert!(r.iter().all(|v| *v <= 1e-13));

        let delta = 1e-3;
        let err = synthetic::random_divergence_free(pb.model.spectral(), 11, 3).scale(delta);
        let perturbed: Vec<VectorField> = minus_p.iter().map(|v| v.add(&err).unwrap()).collect();
        let r = minimum_principle_residual(&perturbed, &e.adjoint, &trials).unwrap();
        assert!(r.iter().all(|v| (*v - 0.5 * delta * delta).abs() < 1e-12));
    }

    #[test]
    fn hamiltonian_examples() {
        let pb = problem(16, 0.01);
        let g = *pb.model.grid();
        let s = &pb.initial;
        let zero_adj = AdjointState { p: VectorField::zeros(g), eta: ScalarField::zeros(g), t: 0.0 };
        let w = synthetic::single_mode(g, 1, 2, 0.3);
        let h = hamiltonian(&pb.model, s, &w, &zero_adj, &VectorField::zeros(g), &ScalarField::zeros(g), None).unwrap();
        assert_eq!(h.total, h.running_cost);

        // W -> H(W) is 1/2|W|^2 + (p, W) + const, minimized at W = -p.
        let p = synthetic::random_divergence_free(pb.model.spectral(), 4, 3).scale(0.7);
        let adj = AdjointState { p: p.clone(), eta: synthetic::random_scalar(g, 2, 3), t: 0.0 };
        let eval = |w: &VectorField| {
            hamiltonian(&pb.model, s, w, &adj, &VectorField::zeros(g), &ScalarField::zeros(g), None)
                .unwrap()
                .total
        };
        let at_min = eval(&p.scale(-1.0));
        for seed in 0..4 {
            let d = synthetic::random_divergence_free(pb.model.spectral(), 50 + seed, 3).scale(0.1);
            let off = eval(&p.scale(-1.0).add(&d).unwrap());
            assert_relative_eq!(off - at_min, 0.5 * d.norm_sq(), max_relative = 1e-9);
        }
    }
}
