//! First-order IMEX time stepping of the controlled system.
//!
//! One step from `(u, phi)` with forcing `f = h + U`:
//!
//! ```text
//! u'   = (1 + nu dt |k|^2)^{-1} P [ u + dt D(-(u.grad)u - (J*phi) grad phi) + dt f ]
//! phi' = (1 + dt (a + S) |k|^2)^{-1} [ phi - dt div D(u phi)
//!                                      + dt Lap( D F'(phi) - J*phi - S phi ) ]
//! ```
//!
//! `P` is the Leray projection and `D` the 2/3-rule truncation. Writing the
//! capillary force as `-(J*phi) grad phi` drops the gradient part of
//! `mu grad phi`, which the projection removes anyway when `a` is constant.
//! Viscosity and the `a Lap phi` part of the chemical potential are implicit,
//! so every solve is a diagonal multiply in Fourier space.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, Spectral, TorusGrid, VectorField};
use crate::physics::{
    validate_assumptions, AssumptionReport, Kernel, Potential, DEFAULT_SAMPLES, DEFAULT_S_RANGE,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    pub nu: f64,
    /// Extra implicit Cahn-Hilliard stabilization added on top of `a`.
    pub stabilization: f64,
    pub dealias: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 0.5,
            nu: 0.1,
            stabilization: 0.0,
            dealias: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("solver.dt", format!("{} must be positive", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= self.dt) {
            return bad("solver.t_final", format!("{} must be at least dt = {}", self.t_final, self.dt));
        }
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return bad("solver.nu", format!("{} must be positive", self.nu));
        }
        if !(self.stabilization.is_finite() && self.stabilization >= 0.0) {
            return bad("solver.stabilization", format!("{} must be nonnegative", self.stabilization));
        }
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return bad(
                "solver.dt",
                format!("t_final = {} is not a whole number of steps of {}", self.t_final, self.dt),
            );
        }
        Ok(())
    }

    /// Number of steps `N = T / dt`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Node times `t_n = n dt`, `n = 0..=N`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|n| n as f64 * self.dt).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub u: VectorField,
    pub phi: ScalarField,
    pub t: f64,
}

impl FlowState {
    pub fn new(u: VectorField, phi: ScalarField, t: f64) -> Self {
        Self { u, phi, t }
    }
}

/// Per-node diagnostics. `residual` is the discrete energy-identity residual
/// of the step that produced the node (absent at `t = 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub energy: f64,
    pub kinetic: f64,
    pub enstrophy: f64,
    pub mass: f64,
    pub residual: Option<f64>,
}

impl StepDiagnostics {
    pub const CSV_HEADER: [&'static str; 6] = ["t", "energy", "kinetic", "enstrophy", "mass", "residual"];

    pub fn csv_row(&self) -> Vec<f64> {
        vec![
            self.t,
            self.energy,
            self.kinetic,
            self.enstrophy,
            self.mass,
            self.residual.unwrap_or(0.0),
        ]
    }
}

/// Dense forward trajectory (every node is kept for the adjoint sweep).
#[derive(Clone, Debug)]
pub struct Trajectory {
    dt: f64,
    states: Vec<FlowState>,
    diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[FlowState] {
        &self.states
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    /// Number of steps `N` (there are `N + 1` states).
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &FlowState {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn t_final(&self) -> f64 {
        self.final_state().t
    }
}

/// Configured system: grid operators, kernel, potential and time stepping.
///
/// Construction runs [`validate_assumptions`] on the default phase range and
/// fails if the convexity bound is not certified.
#[derive(Clone, Debug)]
pub struct Model {
    spectral: Spectral,
    kernel: Kernel,
    potential: Potential,
    config: SolverConfig,
    report: AssumptionReport,
    lu_inv: Vec<f64>,
    lphi_inv: Vec<f64>,
}

impl Model {
    pub fn new(kernel: Kernel, potential: Potential, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let report = validate_assumptions(&kernel, &potential, DEFAULT_S_RANGE, DEFAULT_SAMPLES)?;
        let spectral = Spectral::new(*kernel.grid());
        let mut model = Self {
            spectral,
            kernel,
            potential,
            config,
            report,
            lu_inv: Vec::new(),
            lphi_inv: Vec::new(),
        };
        model.build_factors();
        Ok(model)
    }

    fn build_factors(&mut self) {
        let c = &self.config;
        let implicit = self.kernel.a() + c.stabilization;
        self.lu_inv = self.spectral.k2().iter().map(|k2| 1.0 / (1.0 + c.nu * c.dt * k2)).collect();
        self.lphi_inv = self
            .spectral
            .k2()
            .iter()
            .map(|k2| 1.0 / (1.0 + c.dt * implicit * k2))
            .collect();
    }

    /// Same physics with a different time-stepping configuration.
    pub fn with_config(&self, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let mut m = self.clone();
        m.config = config;
        m.build_factors();
        Ok(m)
    }

    pub fn grid(&self) -> &TorusGrid {
        self.spectral.grid()
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn assumption_report(&self) -> &AssumptionReport {
        &self.report
    }

    pub(crate) fn lu_inv(&self) -> &[f64] {
        &self.lu_inv
    }

    pub(crate) fn lphi_inv(&self) -> &[f64] {
        &self.lphi_inv
    }

    pub(crate) fn truncate(&self, hat: &mut [Complex64]) {
        if self.config.dealias {
            self.spectral.dealias_hat(hat);
        }
    }

    /// `J * f` on raw grid values.
    pub(crate) fn conv(&self, f: &[f64]) -> Vec<f64> {
        self.spectral.convolve_raw(self.kernel.transform(), f)
    }

    fn check_cfl(&self, u: &VectorField, t: f64) -> Result<()> {
        let g = self.grid();
        let cfl = u.max_speed() * self.config.dt / g.dx().min(g.dy());
        if cfl > 1.0 {
            Err(Error::Stability { cfl, t })
        } else {
            Ok(())
        }
    }

    /// Advances one step. `control` and `forcing` are the values held on
    /// `[t, t + dt)`.
    pub fn step(
        &self,
        state: &FlowState,
        control: Option<&VectorField>,
        forcing: Option<&VectorField>,
    ) -> Result<FlowState> {
        let g = *self.grid();
        state.u.grid().check_same(&g)?;
        state.phi.grid().check_same(&g)?;
        for f in [control, forcing].into_iter().flatten() {
            f.grid().check_same(&g)?;
        }
        self.check_cfl(&state.u, state.t)?;

        let sp = &self.spectral;
        let dt = self.config.dt;
        let (ux, uy) = (state.u.x(), state.u.y());
        let phi = state.phi.values();

        let ux_hat = sp.forward(ux);
        let uy_hat = sp.forward(uy);
        let phi_hat = sp.forward(phi);
        let (dxux, dyux) = (sp.ddx(&ux_hat), sp.ddy(&ux_hat));
        let (dxuy, dyuy) = (sp.ddx(&uy_hat), sp.ddy(&uy_hat));
        let (dxphi, dyphi) = (sp.ddx(&phi_hat), sp.ddy(&phi_hat));
        let jphi_hat: Vec<Complex64> = phi_hat
            .iter()
            .zip(self.kernel.transform().multipliers())
            .map(|(c, j)| c * j)
            .collect();
        let jphi = sp.inverse(jphi_hat.clone());

        let n = g.len();
        let mut nx = vec![0.0; n];
        let mut ny = vec![0.0; n];
        for i in 0..n {
            nx[i] = -(ux[i] * dxux[i] + uy[i] * dyux[i]) - jphi[i] * dxphi[i];
            ny[i] = -(ux[i] * dxuy[i] + uy[i] * dyuy[i]) - jphi[i] * dyphi[i];
        }
        let mut nx_hat = sp.forward(&nx);
        let mut ny_hat = sp.forward(&ny);
        self.truncate(&mut nx_hat);
        self.truncate(&mut ny_hat);

        let mut rx: Vec<Complex64> = ux_hat.iter().zip(&nx_hat).map(|(u, f)| u + f * dt).collect();
        let mut ry: Vec<Complex64> = uy_hat.iter().zip(&ny_hat).map(|(u, f)| u + f * dt).collect();
        if let Some((fx, fy)) = sum_sources(control, forcing) {
            for (r, f) in rx.iter_mut().zip(sp.forward(&fx)) {
                *r += f * dt;
            }
            for (r, f) in ry.iter_mut().zip(sp.forward(&fy)) {
                *r += f * dt;
            }
        }
        sp.project_hat(&mut rx, &mut ry);
        for ((a, b), l) in rx.iter_mut().zip(ry.iter_mut()).zip(&self.lu_inv) {
            *a *= l;
            *b *= l;
        }
        let u_new = VectorField::from_vecs_unchecked(g, sp.inverse(rx), sp.inverse(ry), true);

        // Cahn-Hilliard update.
        let flux_x: Vec<f64> = ux.iter().zip(phi).map(|(a, p)| a * p).collect();
        let flux_y: Vec<f64> = uy.iter().zip(phi).map(|(a, p)| a * p).collect();
        let mut fxh = sp.forward(&flux_x);
        let mut fyh = sp.forward(&flux_y);
        self.truncate(&mut fxh);
        self.truncate(&mut fyh);
        let adv = add_hats(&sp.ddx_hat(&fxh), &sp.ddy_hat(&fyh));
        let fprime: Vec<f64> = phi.iter().map(|&p| self.potential.f1(p)).collect();
        let mut fp_hat = sp.forward(&fprime);
        self.truncate(&mut fp_hat);
        let s = self.config.stabilization;
        let k2 = sp.k2();
        let phi_new_hat: Vec<Complex64> = (0..n)
            .map(|m| {
                let explicit = fp_hat[m] - jphi_hat[m] - phi_hat[m] * s;
                (phi_hat[m] - adv[m] * dt - explicit * (dt * k2[m])) * self.lphi_inv[m]
            })
            .collect();
        let phi_new = ScalarField::from_vec_unchecked(g, sp.inverse(phi_new_hat));

        let next = FlowState::new(u_new, phi_new, state.t + dt);
        if !(next.u.is_finite() && next.phi.is_finite()) {
            return Err(Error::NonFinite(format!("flow state at t = {:.6}", next.t)));
        }
        Ok(next)
    }

    /// Integrates from `initial` over `[0, T]`. Control and forcing are
    /// time-indexed on the solver nodes (at least `N` entries; entry `n` acts on
    /// `[t_n, t_{n+1})`).
    pub fn simulate(
        &self,
        initial: &FlowState,
        control: Option<&[VectorField]>,
        forcing: Option<&[VectorField]>,
    ) -> Result<Trajectory> {
        let steps = self.config.steps();
        for (name, series) in [("control", control), ("forcing", forcing)] {
            if let Some(s) = series {
                if s.len() < steps {
                    return Err(Error::TimeGridMismatch(format!(
                        "{name} has {} entries, need at least {steps}",
                        s.len()
                    )));
                }
            }
        }
        initial.u.grid().check_same(self.grid())?;
        initial.phi.grid().check_same(self.grid())?;
        let u0 = self.spectral.leray_project(&initial.u)?;
        let mut states = Vec::with_capacity(steps + 1);
        states.push(FlowState::new(u0, initial.phi.clone(), initial.t));
        for n in 0..steps {
            let next = self.step(
                &states[n],
                control.map(|c| &c[n]),
                forcing.map(|f| &f[n]),
            )?;
            states.push(next);
        }
        let parts: Vec<NodeEnergy> = states.iter().map(|s| self.node_energy(s)).collect();
        let mut diagnostics = Vec::with_capacity(states.len());
        for (n, (s, e)) in states.iter().zip(&parts).enumerate() {
            let residual = if n == 0 {
                None
            } else {
                Some(self.residual_between(
                    &parts[n - 1],
                    e,
                    &s.u,
                    control.map(|c| &c[n - 1]),
                    forcing.map(|f| &f[n - 1]),
                ))
            };
            diagnostics.push(StepDiagnostics {
                t: s.t,
                energy: e.energy,
                kinetic: e.kinetic,
                enstrophy: e.enstrophy,
                mass: s.phi.mean(),
                residual,
            });
        }
        Ok(Trajectory {
            dt: self.config.dt,
            states,
            diagnostics,
        })
    }

    /// Total energy `1/2 |u|^2 + 1/2 (a |phi|^2 - <J*phi, phi>) + int F(phi)`.
    pub fn energy(&self, state: &FlowState) -> f64 {
        self.node_energy(state).energy
    }

    pub fn chemical_potential(&self, phi: &ScalarField) -> Result<ScalarField> {
        crate::physics::chemical_potential(phi, &self.kernel, &self.potential, &self.spectral)
    }

    fn node_energy(&self, s: &FlowState) -> NodeEnergy {
        let sp = &self.spectral;
        let g = self.grid();
        let w = g.cell_area();
        let phi = s.phi.values();
        let jphi = self.conv(phi);
        let a = self.kernel.a();
        let mut nonlocal = 0.0;
        let mut bulk = 0.0;
        let mut mu = Vec::with_capacity(phi.len());
        for (&p, &jp) in phi.iter().zip(&jphi) {
            nonlocal += a * p * p - jp * p;
            bulk += self.potential.f(p);
            mu.push(a * p - jp + self.potential.f1(p));
        }
        let kinetic = 0.5 * s.u.norm_sq();
        let energy = kinetic + 0.5 * nonlocal * w + bulk * w;
        let k2 = sp.k2();
        NodeEnergy {
            energy,
            kinetic,
            enstrophy: sp.curl2d(&s.u).map(|c| c.norm_sq()).unwrap_or(f64::NAN),
            grad_u_sq: weighted_sq(sp, s.u.x(), k2) + weighted_sq(sp, s.u.y(), k2),
            grad_mu_sq: weighted_sq(sp, &mu, k2),
        }
    }

    fn residual_between(
        &self,
        prev: &NodeEnergy,
        next: &NodeEnergy,
        u_next: &VectorField,
        control: Option<&VectorField>,
        forcing: Option<&VectorField>,
    ) -> f64 {
        let work = match sum_sources(control, forcing) {
            Some((fx, fy)) => {
                (crate::grid::dot(&fx, u_next.x()) + crate::grid::dot(&fy, u_next.y()))
                    * self.grid().cell_area()
            }
            None => 0.0,
        };
        (next.energy - prev.energy) / self.config.dt + self.config.nu * next.grad_u_sq + next.grad_mu_sq
            - work
    }

    /// Energy-identity residual per step,
    /// `r_n = (E_{n+1} - E_n)/dt + nu |grad u_{n+1}|^2 + |grad mu_{n+1}|^2 - <h_n + U_n, u_{n+1}>`.
    pub fn energy_identity_residual(
        &self,
        traj: &Trajectory,
        control: Option<&[VectorField]>,
        forcing: Option<&[VectorField]>,
    ) -> Result<Vec<f64>> {
        let steps = traj.steps();
        for s in [control, forcing].into_iter().flatten() {
            if s.len() < steps {
                return Err(Error::TimeGridMismatch(format!(
                    "series has {} entries, need at least {steps}",
                    s.len()
                )));
            }
        }
        let parts: Vec<NodeEnergy> = traj.states.iter().map(|s| self.node_energy(s)).collect();
        Ok((0..steps)
            .map(|n| {
                self.residual_between(
                    &parts[n],
                    &parts[n + 1],
                    &traj.states[n + 1].u,
                    control.map(|c| &c[n]),
                    forcing.map(|f| &f[n]),
                )
            })
            .collect())
    }

    /// Measures how a perturbation of size `delta` in the initial data
    /// propagates: `D = sqrt(sup_t |du|^2 + |dphi|^2_{(H^1)'})`.
    pub fn continuous_dependence(
        &self,
        initial: &FlowState,
        du: &VectorField,
        dphi: &ScalarField,
        delta: f64,
        control: Option<&[VectorField]>,
        forcing: Option<&[VectorField]>,
    ) -> Result<DependenceReport> {
        let base = self.simulate(initial, control, forcing)?;
        let perturbed = FlowState::new(
            initial.u.add_scaled(delta, du)?,
            initial.phi.add_scaled(delta, dphi)?,
            initial.t,
        );
        let other = self.simulate(&perturbed, control, forcing)?;
        let mut running = 0.0_f64;
        let mut profile = Vec::with_capacity(base.states.len());
        for (a, b) in base.states.iter().zip(&other.states) {
            let dv = b.u.sub(&a.u)?.norm_sq();
            let dp = self.spectral.dual_h1_norm_sq(&b.phi.sub(&a.phi)?)?;
            running = running.max(dv + dp);
            profile.push((a.t, running / (delta * delta)));
        }
        Ok(DependenceReport {
            delta,
            sup_difference: running.sqrt(),
            amplification: running / (delta * delta),
            profile,
        })
    }
}

/// Result of [`Model::continuous_dependence`]. `profile` holds the running
/// amplification `K(t) = sup_{s <= t} (...) / delta^2`, which is nondecreasing.
#[derive(Clone, Debug, PartialEq)]
pub struct DependenceReport {
    pub delta: f64,
    pub sup_difference: f64,
    pub amplification: f64,
    pub profile: Vec<(f64, f64)>,
}

struct NodeEnergy {
    energy: f64,
    kinetic: f64,
    enstrophy: f64,
    grad_u_sq: f64,
    grad_mu_sq: f64,
}

fn weighted_sq(sp: &Spectral, data: &[f64], w: &[f64]) -> f64 {
    let hat = sp.forward(data);
    let s: f64 = hat.iter().zip(w).map(|(c, w)| c.norm_sqr() * w).sum();
    s * sp.grid().cell_area() / sp.grid().len() as f64
}

pub(crate) fn add_hats(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sum_sources(
    control: Option<&VectorField>,
    forcing: Option<&VectorField>,
) -> Option<(Vec<f64>, Vec<f64>)> {
    match (control, forcing) {
        (None, None) => None,
        (Some(c), None) | (None, Some(c)) => Some((c.x().to_vec(), c.y().to_vec())),
        (Some(c), Some(f)) => Some((
            c.x().iter().zip(f.x()).map(|(a, b)| a + b).collect(),
            c.y().iter().zip(f.y()).map(|(a, b)| a + b).collect(),
        )),
    }
}
