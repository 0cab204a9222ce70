//! Tangent (linearized) and adjoint sweeps along a stored forward trajectory.
//!
//! Both are derived from the discrete IMEX step itself: the tangent is its
//! exact linearization and the adjoint its exact transpose, so that the reduced
//! gradient is the gradient of the discrete cost. With `q = D p`, `r = D eta`
//! and frozen `(u, phi)`, the backward step reads
//!
//! ```text
//! lam_u   = p   + dt [ -(grad u)^T q + div(u (x) q) + phi grad r ]        + source_u
//! lam_phi = eta + dt [ u.grad r + F''(phi) Lap r - J*Lap eta - S Lap eta
//!                      - J*(q.grad phi) + div((J*phi) q) ]                 + source_phi
//! p_{n-1} = P (1 + nu dt |k|^2)^{-1} lam_u,   eta_{n-1} = (1 + dt (a+S) |k|^2)^{-1} lam_phi
//! ```
//!
//! For a divergence-free velocity `phi grad r` and `-r grad phi` have the same
//! projection, so the capillary coupling enters the `p` equation as
//! `-eta grad phi` up to truncation.

use num_complex::Complex64;

use crate::control::{ControlSignal, CostTargets};
use crate::error::{Error, Result};
use crate::forward::{add_hats, FlowState, Model, Trajectory};
use crate::grid::{dot, ScalarField, Spectral, VectorField};

/// Which cost the adjoint differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointMode {
    /// Distributed control: enstrophy-type velocity tracking `|grad(u - u_d)|^2`.
    Distributed,
    /// Initial-velocity control: plain `L^2` velocity tracking `|u - u_M|^2`.
    Assimilation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentState {
    pub w: VectorField,
    pub psi: ScalarField,
    pub t: f64,
}

/// Tangent solution on nodes `start..=N`.
#[derive(Clone, Debug)]
pub struct TangentTrajectory {
    start: usize,
    states: Vec<TangentState>,
}

impl TangentTrajectory {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn states(&self) -> &[TangentState] {
        &self.states
    }

    /// State at absolute node index `n`.
    pub fn at(&self, n: usize) -> &TangentState {
        &self.states[n - self.start]
    }

    pub fn final_state(&self) -> &TangentState {
        self.states.last().expect("nonempty tangent trajectory")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    pub p: VectorField,
    pub eta: ScalarField,
    pub t: f64,
}

/// Adjoint solution on nodes `0..=N`.
///
/// For `n < N`, `p_n` is the sensitivity of the cost to a velocity source held
/// on `[t_n, t_{n+1})` (divided by `dt`); `p_N`, `eta_N` are the terminal data.
/// `initial_velocity` is the projected sensitivity to `u(0)`.
#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    states: Vec<AdjointState>,
    initial_velocity: VectorField,
    initial_phase: ScalarField,
}

impl AdjointTrajectory {
    pub fn states(&self) -> &[AdjointState] {
        &self.states
    }

    pub fn initial_velocity(&self) -> &VectorField {
        &self.initial_velocity
    }

    pub fn initial_phase(&self) -> &ScalarField {
        &self.initial_phase
    }
}

/// Base-state quantities frozen over one step.
struct Frozen {
    ux: Vec<f64>,
    uy: Vec<f64>,
    dxux: Vec<f64>,
    dyux: Vec<f64>,
    dxuy: Vec<f64>,
    dyuy: Vec<f64>,
    phi: Vec<f64>,
    dxphi: Vec<f64>,
    dyphi: Vec<f64>,
    jphi: Vec<f64>,
    f2: Vec<f64>,
}

impl Frozen {
    fn new(model: &Model, s: &FlowState) -> Self {
        let sp = model.spectral();
        let uxh = sp.forward(s.u.x());
        let uyh = sp.forward(s.u.y());
        let ph = sp.forward(s.phi.values());
        Self {
            ux: s.u.x().to_vec(),
            uy: s.u.y().to_vec(),
            dxux: sp.ddx(&uxh),
            dyux: sp.ddy(&uxh),
            dxuy: sp.ddx(&uyh),
            dyuy: sp.ddy(&uyh),
            phi: s.phi.values().to_vec(),
            dxphi: sp.ddx(&ph),
            dyphi: sp.ddy(&ph),
            jphi: model.conv(s.phi.values()),
            f2: s.phi.values().iter().map(|&p| model.potential().f2(p)).collect(),
        }
    }
}

fn check_base(model: &Model, base: &Trajectory) -> Result<()> {
    if (base.dt() - model.config().dt).abs() > 1e-15 * model.config().dt {
        return Err(Error::TimeGridMismatch(format!(
            "trajectory dt {} differs from solver dt {}",
            base.dt(),
            model.config().dt
        )));
    }
    if base.steps() != model.config().steps() {
        return Err(Error::Replay(format!(
            "trajectory has {} steps, solver expects {}",
            base.steps(),
            model.config().steps()
        )));
    }
    base.states()[0].u.grid().check_same(model.grid())
}

/// One linearized step about `fz` (the base state at the step's start).
fn tangent_step(
    model: &Model,
    fz: &Frozen,
    w: &VectorField,
    psi: &ScalarField,
    du: Option<&VectorField>,
) -> (VectorField, ScalarField) {
    let sp = model.spectral();
    let g = *model.grid();
    let dt = model.config().dt;
    let n = g.len();
    let (wx, wy) = (w.x(), w.y());
    let wxh = sp.forward(wx);
    let wyh = sp.forward(wy);
    let psih = sp.forward(psi.values());
    let (dxwx, dywx) = (sp.ddx(&wxh), sp.ddy(&wxh));
    let (dxwy, dywy) = (sp.ddx(&wyh), sp.ddy(&wyh));
    let (dxpsi, dypsi) = (sp.ddx(&psih), sp.ddy(&psih));
    let jpsi_hat: Vec<Complex64> = psih
        .iter()
        .zip(model.kernel().transform().multipliers())
        .map(|(c, j)| c * j)
        .collect();
    let jpsi = sp.inverse(jpsi_hat.clone());

    let mut mx = vec![0.0; n];
    let mut my = vec![0.0; n];
    for i in 0..n {
        mx[i] = -(wx[i] * fz.dxux[i] + wy[i] * fz.dyux[i])
            - (fz.ux[i] * dxwx[i] + fz.uy[i] * dywx[i])
            - jpsi[i] * fz.dxphi[i]
            - fz.jphi[i] * dxpsi[i];
        my[i] = -(wx[i] * fz.dxuy[i] + wy[i] * fz.dyuy[i])
            - (fz.ux[i] * dxwy[i] + fz.uy[i] * dywy[i])
            - jpsi[i] * fz.dyphi[i]
            - fz.jphi[i] * dypsi[i];
    }
    let mut mxh = sp.forward(&mx);
    let mut myh = sp.forward(&my);
    model.truncate(&mut mxh);
    model.truncate(&mut myh);
    let mut rx: Vec<Complex64> = wxh.iter().zip(&mxh).map(|(a, b)| a + b * dt).collect();
    let mut ry: Vec<Complex64> = wyh.iter().zip(&myh).map(|(a, b)| a + b * dt).collect();
    if let Some(d) = du {
        for (r, f) in rx.iter_mut().zip(sp.forward(d.x())) {
            *r += f * dt;
        }
        for (r, f) in ry.iter_mut().zip(sp.forward(d.y())) {
            *r += f * dt;
        }
    }
    sp.project_hat(&mut rx, &mut ry);
    for ((a, b), l) in rx.iter_mut().zip(ry.iter_mut()).zip(model.lu_inv()) {
        *a *= l;
        *b *= l;
    }
    let w_new = VectorField::from_vecs_unchecked(g, sp.inverse(rx), sp.inverse(ry), true);

    let psi_v = psi.values();
    let fx: Vec<f64> = (0..n).map(|i| wx[i] * fz.phi[i] + fz.ux[i] * psi_v[i]).collect();
    let fy: Vec<f64> = (0..n).map(|i| wy[i] * fz.phi[i] + fz.uy[i] * psi_v[i]).collect();
    let mut fxh = sp.forward(&fx);
    let mut fyh = sp.forward(&fy);
    model.truncate(&mut fxh);
    model.truncate(&mut fyh);
    let adv = add_hats(&sp.ddx_hat(&fxh), &sp.ddy_hat(&fyh));
    let lin: Vec<f64> = (0..n).map(|i| fz.f2[i] * psi_v[i]).collect();
    let mut linh = sp.forward(&lin);
    model.truncate(&mut linh);
    let s = model.config().stabilization;
    let k2 = sp.k2();
    let out: Vec<Complex64> = (0..n)
        .map(|m| {
            let explicit = linh[m] - jpsi_hat[m] - psih[m] * s;
            (psih[m] - adv[m] * dt - explicit * (dt * k2[m])) * model.lphi_inv()[m]
        })
        .collect();
    (w_new, ScalarField::from_vec_unchecked(g, sp.inverse(out)))
}

/// Solves the tangent system from node 0 with initial data `(w0, psi0)` and
/// control perturbation `delta_control` (entry `n` acts on `[t_n, t_{n+1})`).
pub fn tangent_solve(
    model: &Model,
    base: &Trajectory,
    delta_control: Option<&[VectorField]>,
    w0: &VectorField,
    psi0: &ScalarField,
) -> Result<TangentTrajectory> {
    tangent_solve_from(model, base, 0, w0, psi0, delta_control)
}

/// Tangent system restarted at node `start` with `w(t_start) = w_start`.
/// `delta_control` is indexed by absolute node.
pub fn tangent_solve_from(
    model: &Model,
    base: &Trajectory,
    start: usize,
    w_start: &VectorField,
    psi_start: &ScalarField,
    delta_control: Option<&[VectorField]>,
) -> Result<TangentTrajectory> {
    check_base(model, base)?;
    let steps = base.steps();
    if start > steps {
        return Err(Error::Replay(format!("restart node {start} beyond final node {steps}")));
    }
    if let Some(d) = delta_control {
        if d.len() < steps {
            return Err(Error::TimeGridMismatch(format!(
                "control perturbation has {} entries, need {steps}",
                d.len()
            )));
        }
    }
    w_start.grid().check_same(model.grid())?;
    psi_start.grid().check_same(model.grid())?;
    let w0 = model.spectral().leray_project(w_start)?;
    let mut states = vec![TangentState {
        w: w0,
        psi: psi_start.clone(),
        t: base.states()[start].t,
    }];
    for n in start..steps {
        let fz = Frozen::new(model, &base.states()[n]);
        let cur = states.last().unwrap();
        let (w, psi) = tangent_step(model, &fz, &cur.w, &cur.psi, delta_control.map(|d| &d[n]));
        if !(w.is_finite() && psi.is_finite()) {
            return Err(Error::NonFinite(format!("tangent state at node {}", n + 1)));
        }
        states.push(TangentState {
            w,
            psi,
            t: base.states()[n + 1].t,
        });
    }
    Ok(TangentTrajectory { start, states })
}

/// Trapezoidal time weight of node `n` out of `steps`.
pub(crate) fn trapezoid_weight(n: usize, steps: usize, dt: f64) -> f64 {
    if n == 0 || n == steps {
        0.5 * dt
    } else {
        dt
    }
}

/// `K v = -Lap v` using the same wavenumbers as [`Spectral::grad_norm_sq`].
fn neg_laplacian_eff(sp: &Spectral, v: &[f64]) -> Vec<f64> {
    let mut h = sp.forward(v);
    for (c, k2) in h.iter_mut().zip(sp.k2_eff()) {
        *c *= k2;
    }
    sp.inverse(h)
}

/// Derivative of the state-dependent part of the cost with respect to the
/// node-`n` state: trapezoidal tracking plus terminal mismatch at `n = N`.
pub(crate) fn cost_source(
    model: &Model,
    base: &Trajectory,
    n: usize,
    mode: AdjointMode,
    targets: &CostTargets,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let steps = base.steps();
    let c = trapezoid_weight(n, steps, base.dt());
    let s = &base.states()[n];
    let du = s.u.sub(&targets.u_track[n])?;
    let dphi = s.phi.sub(&targets.phi_track[n])?;
    let sp = model.spectral();
    let (mut sx, mut sy) = match mode {
        AdjointMode::Distributed => (neg_laplacian_eff(sp, du.x()), neg_laplacian_eff(sp, du.y())),
        AdjointMode::Assimilation => (du.x().to_vec(), du.y().to_vec()),
    };
    sx.iter_mut().for_each(|v| *v *= c);
    sy.iter_mut().for_each(|v| *v *= c);
    let mut sphi: Vec<f64> = dphi.values().iter().map(|v| v * c).collect();
    if n == steps {
        let eu = s.u.sub(&targets.u_final)?;
        let ep = s.phi.sub(&targets.phi_final)?;
        sx.iter_mut().zip(eu.x()).for_each(|(a, b)| *a += b);
        sy.iter_mut().zip(eu.y()).for_each(|(a, b)| *a += b);
        sphi.iter_mut().zip(ep.values()).for_each(|(a, b)| *a += b);
    }
    Ok((sx, sy, sphi))
}

/// Homogeneous adjoint part `((x, y), phi)` carried to the previous node.
type Homogeneous = ((Vec<f64>, Vec<f64>), Vec<f64>);

/// Transpose of one tangent step: maps `(lam_u, lam_phi)` at node `n + 1` to
/// the homogeneous part at node `n`, returning also `(p_n, eta_n)`.
fn adjoint_step(
    model: &Model,
    fz: &Frozen,
    lam_u: (&[f64], &[f64]),
    lam_phi: &[f64],
) -> (VectorField, ScalarField, Homogeneous) {
    let sp = model.spectral();
    let g = *model.grid();
    let dt = model.config().dt;
    let n = g.len();

    let mut px = sp.forward(lam_u.0);
    let mut py = sp.forward(lam_u.1);
    for ((a, b), l) in px.iter_mut().zip(py.iter_mut()).zip(model.lu_inv()) {
        *a *= l;
        *b *= l;
    }
    sp.project_hat(&mut px, &mut py);
    let mut eh = sp.forward(lam_phi);
    for (c, l) in eh.iter_mut().zip(model.lphi_inv()) {
        *c *= l;
    }
    let p = VectorField::from_vecs_unchecked(g, sp.inverse(px.clone()), sp.inverse(py.clone()), true);
    let eta = ScalarField::from_vec_unchecked(g, sp.inverse(eh.clone()));

    // q = D p, r = D eta
    model.truncate(&mut px);
    model.truncate(&mut py);
    let qx = sp.inverse(px);
    let qy = sp.inverse(py);
    let mut rh = eh.clone();
    model.truncate(&mut rh);
    let (dxr, dyr) = (sp.ddx(&rh), sp.ddy(&rh));
    let k2 = sp.k2();
    let lap_r: Vec<f64> = sp.inverse(rh.iter().zip(k2).map(|(c, k)| -c * k).collect());

    // Velocity part.
    let div_uqx = sp.div_raw(
        &fz.ux.iter().zip(&qx).map(|(a, b)| a * b).collect::<Vec<_>>(),
        &fz.uy.iter().zip(&qx).map(|(a, b)| a * b).collect::<Vec<_>>(),
    );
    let div_uqy = sp.div_raw(
        &fz.ux.iter().zip(&qy).map(|(a, b)| a * b).collect::<Vec<_>>(),
        &fz.uy.iter().zip(&qy).map(|(a, b)| a * b).collect::<Vec<_>>(),
    );
    let mut out_x = p.x().to_vec();
    let mut out_y = p.y().to_vec();
    for i in 0..n {
        out_x[i] += dt
            * (-(qx[i] * fz.dxux[i] + qy[i] * fz.dxuy[i]) + div_uqx[i] + fz.phi[i] * dxr[i]);
        out_y[i] += dt
            * (-(qx[i] * fz.dyux[i] + qy[i] * fz.dyuy[i]) + div_uqy[i] + fz.phi[i] * dyr[i]);
    }

    // Phase part.
    let q_dot_gphi: Vec<f64> = (0..n).map(|i| qx[i] * fz.dxphi[i] + qy[i] * fz.dyphi[i]).collect();
    let j_qgphi = model.conv(&q_dot_gphi);
    let div_jq = sp.div_raw(
        &fz.jphi.iter().zip(&qx).map(|(a, b)| a * b).collect::<Vec<_>>(),
        &fz.jphi.iter().zip(&qy).map(|(a, b)| a * b).collect::<Vec<_>>(),
    );
    let s = model.config().stabilization;
    // -J*Lap eta - S Lap eta, in Fourier space
    let lin_h: Vec<Complex64> = eh
        .iter()
        .zip(k2)
        .zip(model.kernel().transform().multipliers())
        .map(|((c, k), j)| c * (k * (j + s)))
        .collect();
    let lin = sp.inverse(lin_h);
    let mut out_phi = eta.values().to_vec();
    for i in 0..n {
        out_phi[i] += dt
            * (fz.ux[i] * dxr[i] + fz.uy[i] * dyr[i] + fz.f2[i] * lap_r[i] + lin[i] - j_qgphi[i]
                + div_jq[i]);
    }
    (p, eta, ((out_x, out_y), out_phi))
}

/// Backward sweep for the given cost. Targets are sampled on every node.
pub fn adjoint_solve(
    model: &Model,
    base: &Trajectory,
    mode: AdjointMode,
    targets: &CostTargets,
) -> Result<AdjointTrajectory> {
    check_base(model, base)?;
    targets.check(base)?;
    let steps = base.steps();
    let sp = model.spectral();
    let g = *model.grid();

    let (lx, ly, lp) = cost_source(model, base, steps, mode, targets)?;
    let mut lam_u = (lx, ly);
    let mut lam_phi = lp;
    let mut states: Vec<Option<AdjointState>> = vec![None; steps + 1];
    let terminal_p = sp.leray_project(&VectorField::from_vecs_unchecked(
        g,
        lam_u.0.clone(),
        lam_u.1.clone(),
        false,
    ))?;
    states[steps] = Some(AdjointState {
        p: terminal_p,
        eta: ScalarField::from_vec_unchecked(g, lam_phi.clone()),
        t: base.states()[steps].t,
    });

    for n in (0..steps).rev() {
        let fz = Frozen::new(model, &base.states()[n]);
        let (p, eta, ((mut ux, mut uy), mut uphi)) = adjoint_step(model, &fz, (&lam_u.0, &lam_u.1), &lam_phi);
        if !(p.is_finite() && eta.is_finite()) {
            return Err(Error::NonFinite(format!("adjoint state at node {n}")));
        }
        let (sx, sy, sphi) = cost_source(model, base, n, mode, targets)?;
        ux.iter_mut().zip(&sx).for_each(|(a, b)| *a += b);
        uy.iter_mut().zip(&sy).for_each(|(a, b)| *a += b);
        uphi.iter_mut().zip(&sphi).for_each(|(a, b)| *a += b);
        states[n] = Some(AdjointState {
            p,
            eta,
            t: base.states()[n].t,
        });
        lam_u = (ux, uy);
        lam_phi = uphi;
    }
    let initial_velocity =
        sp.leray_project(&VectorField::from_vecs_unchecked(g, lam_u.0, lam_u.1, false))?;
    Ok(AdjointTrajectory {
        states: states.into_iter().map(|s| s.expect("filled")).collect(),
        initial_velocity,
        initial_phase: ScalarField::from_vec_unchecked(g, lam_phi),
    })
}

/// The two sides of the tangent/adjoint pairing identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualityReport {
    /// Trapezoidal pairing of the cost sources with the tangent, plus the
    /// terminal pairing.
    pub state_pairing: f64,
    /// Pairing of the perturbation with the adjoint (trapezoidal in time for a
    /// distributed perturbation).
    pub control_pairing: f64,
    /// `|state - control| / max(|state|, |control|)`, zero when both vanish.
    pub gap: f64,
}

/// Evaluates the pairing identity for a perturbation of the control.
pub fn duality_gap(
    model: &Model,
    base: &Trajectory,
    delta: &ControlSignal,
    mode: AdjointMode,
    targets: &CostTargets,
) -> Result<DualityReport> {
    let steps = base.steps();
    let dt = base.dt();
    let g = *model.grid();
    let adjoint = adjoint_solve(model, base, mode, targets)?;
    let (tangent, control_pairing) = match delta {
        ControlSignal::Distributed(du) => {
            if du.len() != steps + 1 {
                return Err(Error::TimeGridMismatch(format!(
                    "perturbation has {} entries, need {}",
                    du.len(),
                    steps + 1
                )));
            }
            let tan = tangent_solve(model, base, Some(du), &VectorField::zeros(g), &ScalarField::zeros(g))?;
            let mut pair = 0.0;
            for (n, (d, a)) in du.iter().zip(adjoint.states()).enumerate() {
                pair += trapezoid_weight(n, steps, dt) * d.inner(&a.p)?;
            }
            (tan, pair)
        }
        ControlSignal::Initial(v) => {
            let tan = tangent_solve(model, base, None, v, &ScalarField::zeros(g))?;
            let v0 = model.spectral().leray_project(v)?;
            (tan, v0.inner(adjoint.initial_velocity())?)
        }
    };
    let area = g.cell_area();
    let mut state_pairing = 0.0;
    for n in 0..=steps {
        let (sx, sy, sphi) = cost_source(model, base, n, mode, targets)?;
        let ts = tangent.at(n);
        state_pairing +=
            (dot(&sx, ts.w.x()) + dot(&sy, ts.w.y()) + dot(&sphi, ts.psi.values())) * area;
    }
    let scale = state_pairing.abs().max(control_pairing.abs());
    let gap = if scale > 0.0 {
        (state_pairing - control_pairing).abs() / scale
    } else {
        0.0
    };
    Ok(DualityReport {
        state_pairing,
        control_pairing,
        gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::SolverConfig;
    use crate::grid::TorusGrid;
    use crate::physics::{Kernel, KernelFamily, Potential};
    use crate::synthetic;

    fn setup(n: usize, t_final: f64) -> (Model, FlowState) {
        let g = TorusGrid::square(n).unwrap();
        let sp = Spectral::new(g);
        let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let cfg = SolverConfig {
            t_final,
            ..SolverConfig::default()
        };
        let m = Model::new(k, Potential::double_well(), cfg).unwrap();
        let s = FlowState::new(
            synthetic::taylor_green(g, 0.5),
            ScalarField::from_fn(g, |x, y| 0.1 * x.sin() * y.sin()),
            0.0,
        );
        (m, s)
    }

    fn perturbation(m: &Model, seed: u64) -> Vec<VectorField> {
        let r = synthetic::random_divergence_free(m.spectral(), seed, 3);
        (0..=m.config().steps()).map(|_| r.clone()).collect()
    }

    #[test]
    fn zero_input_gives_zero_tangent() {
        let (m, s) = setup(16, 0.01);
        let base = m.simulate(&s, None, None).unwrap();
        let g = *m.grid();
        let t = tangent_solve(&m, &base, None, &VectorField::zeros(g), &ScalarField::zeros(g)).unwrap();
        assert!(t.states().iter().all(|s| s.w.max_speed() == 0.0 && s.psi.max_abs() == 0.0));
    }

    #[test]
    fn tangent_is_linear() {
        let (m, s) = setup(16, 0.01);
        let base = m.simulate(&s, None, None).unwrap();
        let g = *m.grid();
        let d1 = perturbation(&m, 1);
        let d2 = perturbation(&m, 2);
        let psi0 = synthetic::random_scalar(g, 5, 3);
        let z = VectorField::zeros(g);
        let a = tangent_solve(&m, &base, Some(&d1), &z, &psi0).unwrap();
        let b = tangent_solve(&m, &base, Some(&d2), &z, &ScalarField::zeros(g)).unwrap();
        let combo: Vec<VectorField> = d1.iter().zip(&d2).map(|(x, y)| x.scale(2.0).add_scaled(-3.0, y).unwrap()).collect();
        let c = tangent_solve(&m, &base, Some(&combo), &z, &psi0.scale(2.0)).unwrap();
        let expect = a.final_state().w.scale(2.0).add_scaled(-3.0, &b.final_state().w).unwrap();
        let err = c.final_state().w.sub(&expect).unwrap().norm();
        assert!(err <= 1e-12 * expect.norm(), "{err}");
        let mean0 = a.states()[0].psi.mean();
        assert!(a.states().iter().all(|s| (s.psi.mean() - mean0).abs() < 1e-14));
    }

    #[test]
    fn matched_targets_give_zero_adjoint() {
        let (m, s) = setup(16, 0.01);
        let base = m.simulate(&s, None, None).unwrap();
        let targets = CostTargets::from_trajectory(&base);
        for mode in [AdjointMode::Distributed, AdjointMode::Assimilation] {
            let adj = adjoint_solve(&m, &base, mode, &targets).unwrap();
            assert!(adj.states().iter().all(|a| a.p.max_speed() == 0.0 && a.eta.max_abs() == 0.0));
        }
    }

    #[test]
    fn frozen_zero_base_decays_mode_wise() {
        let g = TorusGrid::square(16).unwrap();
        let sp = Spectral::new(g);
        let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let cfg = SolverConfig { t_final: 0.01, ..SolverConfig::default() };
        let m = Model::new(k, Potential::double_well(), cfg).unwrap();
        let base = m
            .simulate(&FlowState::new(VectorField::zeros(g), ScalarField::zeros(g), 0.0), None, None)
            .unwrap();
        let mut targets = CostTargets::from_trajectory(&base);
        let pt = synthetic::single_mode(g, 1, 2, 1.0);
        targets.u_final = pt.scale(-1.0);
        let adj = adjoint_solve(&m, &base, AdjointMode::Distributed, &targets).unwrap();
        let steps = base.steps();
        let factor = 1.0 + cfg.nu * 5.0 * cfg.dt;
        for (n, a) in adj.states().iter().enumerate() {
            let expect = pt.scale(factor.powi(-((steps - n) as i32)));
            assert!(a.p.max_abs_diff(&expect) < 1e-14, "node {n}");
        }
    }

    #[test]
    fn exact_pairing_for_initial_perturbation() {
        let (m, s) = setup(16, 0.02);
        let base = m.simulate(&s, None, None).unwrap();
        let mut targets = CostTargets::from_trajectory(&base);
        targets.u_final = synthetic::taylor_green(*m.grid(), 0.2);
        targets.phi_final = ScalarField::from_fn(*m.grid(), |x, _| 0.3 * x.cos());
        let v = synthetic::random_divergence_free(m.spectral(), 9, 3);
        let r = duality_gap(&m, &base, &ControlSignal::Initial(v), AdjointMode::Assimilation, &targets).unwrap();
        assert!(r.gap < 1e-11, "{r:?}");
    }

    #[test]
    fn zero_perturbation_gives_zero_gap() {
        let (m, s) = setup(16, 0.01);
        let base = m.simulate(&s, None, None).unwrap();
        let targets = CostTargets::zeros(*m.grid(), base.steps());
        let zero = ControlSignal::Distributed(vec![VectorField::zeros(*m.grid()); base.steps() + 1]);
        let r = duality_gap(&m, &base, &zero, AdjointMode::Distributed, &targets).unwrap();
        assert_eq!(r.gap, 0.0);
    }
}
