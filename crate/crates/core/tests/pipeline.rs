use chns_core::assimilation::twin_experiment;
use chns_core::control::{optimize, ControlSignal, CostTargets, OcpProblem, OptimizerConfig};
use chns_core::diagnostics::{check_suite, gradient_taylor_test};
use chns_core::io;
use chns_core::prelude::*;

fn model(n: usize, t_final: f64) -> Model {
    let g = TorusGrid::square(n).unwrap();
    let sp = Spectral::new(g);
    let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
    let cfg = SolverConfig {
        t_final,
        ..SolverConfig::default()
    };
    Model::new(k, Potential::double_well(), cfg).unwrap()
}

fn start(m: &Model) -> FlowState {
    let g = *m.grid();
    FlowState::new(synthetic::taylor_green(g, 0.5), synthetic::random_scalar(g, 1, 3).scale(2.0), 0.0)
}

#[test]
fn optimal_control_decreases_cost_monotonically() {
    let m = model(16, 0.05);
    let g = *m.grid();
    let target = FlowState::new(synthetic::single_mode(g, 1, 1, 0.3), ScalarField::zeros(g), 0.0);
    let pb = OcpProblem {
        targets: CostTargets::from_trajectory(&m.simulate(&target, None, None).unwrap()),
        model: m.clone(),
        initial: start(&m),
        forcing: None,
    };
    let steps = m.config().steps();
    let opt = OptimizerConfig {
        max_iters: 30,
        grad_tol: 1e-8,
        ..OptimizerConfig::default()
    };
    let r = optimize(&pb, &ControlSignal::zeros_distributed(g, steps), &opt).unwrap();
    let h = &r.history;
    assert!(h.windows(2).all(|w| w[1].cost <= w[0].cost));
    // most of the tracking cost is the initial mismatch, which no control removes
    assert!(r.final_cost() < h[0].cost);
    assert!(h.last().unwrap().grad_norm < 1e-3 * h[0].grad_norm);
}

#[test]
fn ball_constraint_is_respected() {
    let m = model(16, 0.02);
    let g = *m.grid();
    let pb = OcpProblem {
        targets: CostTargets::from_trajectory(
            &m.simulate(&FlowState::new(synthetic::taylor_green(g, 2.0), ScalarField::zeros(g), 0.0), None, None)
                .unwrap(),
        ),
        model: m.clone(),
        initial: start(&m),
        forcing: None,
    };
    let opt = OptimizerConfig {
        max_iters: 10,
        ball_radius: Some(0.05),
        ..OptimizerConfig::default()
    };
    let r = optimize(&pb, &ControlSignal::zeros_distributed(g, m.config().steps()), &opt).unwrap();
    for u in r.control.as_distributed().unwrap() {
        assert!(u.norm() <= 0.05 * (1.0 + 1e-12));
    }
    assert!(r.history.windows(2).all(|w| w[1].cost <= w[0].cost));
}

#[test]
fn assimilation_gradient_and_weak_penalty_twin() {
    let m = model(16, 0.02);
    let g = *m.grid();
    let steps = m.config().steps();
    let truth = synthetic::random_divergence_free(m.spectral(), 5, 3).scale(2.0);
    let mut pb = AssimilationProblem {
        model: m.clone(),
        phi0: start(&m).phi,
        forcing: None,
        measurements: CostTargets::zeros(g, steps),
        control_weight: 1e-4,
    };
    let rep = twin_experiment(&truth, 0.0, &pb, &OptimizerConfig::default(), 3).unwrap();
    assert!(rep.recovery_error < 1e-2, "{}", rep.to_text());
    assert!(rep.cost_ratio < 1e-2, "{}", rep.to_text());

    pb.measurements = CostTargets::from_trajectory(&pb.simulate(&truth).unwrap());
    let u = ControlSignal::Initial(VectorField::zeros(g));
    let v = ControlSignal::Initial(synthetic::random_divergence_free(m.spectral(), 6, 3));
    let ladder = gradient_taylor_test(&pb, &u, &v, &[1e-1, 1e-2, 1e-3]).unwrap();
    assert!(ladder.min_order() > 1.9, "{:?}", ladder);
}

#[test]
fn noisy_twin_still_decreases_cost() {
    let m = model(16, 0.02);
    let g = *m.grid();
    let pb = AssimilationProblem {
        model: m.clone(),
        phi0: start(&m).phi,
        forcing: None,
        measurements: CostTargets::zeros(g, m.config().steps()),
        control_weight: 1.0,
    };
    let truth = synthetic::taylor_green(g, 1.0);
    let rep = twin_experiment(&truth, 0.05, &pb, &OptimizerConfig::default(), 9).unwrap();
    assert!(rep.final_cost < rep.initial_cost);
    assert!(rep.history.windows(2).all(|w| w[1].cost <= w[0].cost));
}

#[test]
fn trajectory_snapshots_round_trip() {
    let m = model(16, 0.01);
    let traj = m.simulate(&start(&m), None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let last = traj.final_state();
    io::write_vector(&dir.path().join("u.bin"), &last.u).unwrap();
    io::write_scalar(&dir.path().join("phi.bin"), &last.phi).unwrap();
    let u = io::read_vector(&dir.path().join("u.bin")).unwrap();
    let phi = io::read_scalar(&dir.path().join("phi.bin")).unwrap();
    assert_eq!(u.x(), last.u.x());
    assert_eq!(u.y(), last.u.y());
    assert_eq!(phi.values(), last.phi.values());

    let rows: Vec<Vec<f64>> = traj.diagnostics().iter().map(|d| d.csv_row()).collect();
    let csv = io::csv_string(&StepDiagnostics::CSV_HEADER, &rows);
    let parsed: Vec<f64> = csv.lines().nth(3).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(parsed[1], traj.diagnostics()[2].energy);
}

#[test]
fn invariant_suite_passes_at_small_scale() {
    let m = model(16, 0.02);
    for o in check_suite(&m, &start(&m), 4).unwrap() {
        assert!(o.passed, "{} = {:e} (tolerance {:e})", o.name, o.value, o.tolerance);
    }
}
