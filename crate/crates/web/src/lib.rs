//! Browser bindings: a steppable simulation, a gradient Taylor check and a
//! small assimilation twin. Fields cross the boundary as row-major
//! `Float64Array`s of length `n * n`.

use chns_core::assimilation::{twin_experiment, AssimilationProblem};
use chns_core::control::{ControlSignal, CostTargets, OcpProblem, OptimizerConfig};
use chns_core::diagnostics::gradient_taylor_test;
use chns_core::forward::{FlowState, Model, SolverConfig};
use chns_core::grid::{Spectral, TorusGrid, VectorField};
use chns_core::physics::{Kernel, KernelFamily, Potential};
use chns_core::synthetic;
use wasm_bindgen::prelude::*;

fn desk_model(n: usize, dt: f64, t_final: f64) -> chns_core::Result<Model> {
    let grid = TorusGrid::square(n)?;
    let sp = Spectral::new(grid);
    let kernel = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp)?;
    let cfg = SolverConfig {
        dt,
        t_final,
        ..SolverConfig::default()
    };
    Model::new(kernel, Potential::double_well(), cfg)
}

fn js(e: chns_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A running flow that the page advances frame by frame.
#[wasm_bindgen]
pub struct Simulation {
    model: Model,
    state: FlowState,
}

impl Simulation {
    pub fn create(n: usize, vortex: f64, phase: f64, seed: u64) -> chns_core::Result<Simulation> {
        let model = desk_model(n, 1e-3, 1.0)?;
        let g = *model.grid();
        let u = synthetic::taylor_green(g, vortex);
        let phi = synthetic::random_scalar(g, seed, 3).scale(phase);
        Ok(Simulation {
            model,
            state: FlowState::new(u, phi, 0.0),
        })
    }

    pub fn advance(&mut self, steps: usize) -> chns_core::Result<()> {
        for _ in 0..steps {
            self.state = self.model.step(&self.state, None, None)?;
        }
        Ok(())
    }
}

#[wasm_bindgen]
impl Simulation {
    /// `n` grid points per side, Taylor-Green amplitude `vortex`, random phase
    /// of `L^2` norm `phase`.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, vortex: f64, phase: f64, seed: u64) -> Result<Simulation, JsError> {
        Self::create(n, vortex, phase, seed).map_err(js)
    }

    pub fn step(&mut self, steps: usize) -> Result<(), JsError> {
        self.advance(steps).map_err(js)
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn energy(&self) -> f64 {
        self.model.energy(&self.state)
    }

    pub fn mass(&self) -> f64 {
        self.state.phi.mean()
    }

    pub fn phase(&self) -> Vec<f64> {
        self.state.phi.values().to_vec()
    }

    pub fn vorticity(&self) -> Vec<f64> {
        self.model
            .spectral()
            .curl2d(&self.state.u)
            .map(|w| w.values().to_vec())
            .unwrap_or_default()
    }
}

pub fn taylor_rows(n: usize, steps: usize, seed: u64) -> chns_core::Result<Vec<f64>> {
    let model = desk_model(n, 1e-3, steps as f64 * 1e-3)?;
    let g = *model.grid();
    let sp = model.spectral().clone();
    let init = FlowState::new(synthetic::taylor_green(g, 0.5), synthetic::random_scalar(g, seed, 3), 0.0);
    let target = FlowState::new(synthetic::taylor_green(g, 0.2), synthetic::random_scalar(g, seed + 1, 3), 0.0);
    let targets = CostTargets::from_trajectory(&model.simulate(&target, None, None)?);
    let pb = OcpProblem {
        model,
        initial: init,
        forcing: None,
        targets,
    };
    let v = synthetic::random_divergence_free(&sp, seed + 2, 3);
    let dir = ControlSignal::Distributed(vec![v; steps + 1]);
    let u = ControlSignal::zeros_distributed(g, steps);
    let ladder = gradient_taylor_test(&pb, &u, &dir, &[1e-1, 1e-2, 1e-3])?;
    Ok(ladder.to_rows().into_iter().flatten().collect())
}

/// Taylor test of the control gradient on an `n x n` grid over `steps` steps.
/// Returns rows `(h, remainder, order)` flattened; the first order is NaN.
#[wasm_bindgen(js_name = gradientCheck)]
pub fn gradient_check(n: usize, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    taylor_rows(n, steps, seed).map_err(js)
}

/// Outcome of [`assimilate`].
#[wasm_bindgen]
pub struct TwinOutcome {
    cost_ratio: f64,
    recovery_error: f64,
    iterations: usize,
    truth: Vec<f64>,
    recovered: Vec<f64>,
}

#[wasm_bindgen]
impl TwinOutcome {
    #[wasm_bindgen(getter, js_name = costRatio)]
    pub fn cost_ratio(&self) -> f64 {
        self.cost_ratio
    }

    #[wasm_bindgen(getter, js_name = recoveryError)]
    pub fn recovery_error(&self) -> f64 {
        self.recovery_error
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Vorticity of the true initial velocity.
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }

    /// Vorticity of the recovered initial velocity.
    #[wasm_bindgen(getter)]
    pub fn recovered(&self) -> Vec<f64> {
        self.recovered.clone()
    }
}

pub fn run_twin(n: usize, steps: usize, weight: f64, max_iters: usize, seed: u64) -> chns_core::Result<TwinOutcome> {
    let model = desk_model(n, 1e-3, steps as f64 * 1e-3)?;
    let g = *model.grid();
    let sp = model.spectral().clone();
    let template = AssimilationProblem {
        model,
        phi0: synthetic::random_scalar(g, seed, 3),
        forcing: None,
        measurements: CostTargets::zeros(g, steps),
        control_weight: weight,
    };
    let truth = synthetic::random_divergence_free(&sp, seed + 1, 3).scale(3.0);
    let opt = OptimizerConfig {
        max_iters,
        ..OptimizerConfig::default()
    };
    let rep = twin_experiment(&truth, 0.0, &template, &opt, seed)?;
    let vort = |v: &VectorField| -> chns_core::Result<Vec<f64>> { Ok(sp.curl2d(v)?.values().to_vec()) };
    Ok(TwinOutcome {
        cost_ratio: rep.cost_ratio,
        recovery_error: rep.recovery_error,
        iterations: rep.iterations,
        truth: vort(&truth)?,
        recovered: vort(&rep.recovered)?,
    })
}

/// Recovers an initial velocity from its own noiseless trajectory, with
/// control penalty `weight`.
#[wasm_bindgen]
pub fn assimilate(n: usize, steps: usize, weight: f64, max_iters: usize, seed: u64) -> Result<TwinOutcome, JsError> {
    run_twin(n, steps, weight, max_iters, seed).map_err(js)
}
