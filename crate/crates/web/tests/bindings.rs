use chns_web::{run_twin, taylor_rows, Simulation};

#[test]
fn simulation_conserves_mass_while_stepping() {
    let mut s = Simulation::create(16, 0.5, 1.0, 3).unwrap();
    let m0 = s.mass();
    s.advance(20).unwrap();
    assert!((s.time() - 0.02).abs() < 1e-12);
    assert!((s.mass() - m0).abs() < 1e-13);
    assert_eq!(s.phase().len(), 256);
    assert_eq!(s.vorticity().len(), 256);
    assert!(s.energy().is_finite());
}

#[test]
fn gradient_check_has_second_order_remainders() {
    let rows = taylor_rows(16, 10, 1).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows[2].is_nan());
    assert!(rows[5] > 1.8 && rows[8] > 1.8, "{rows:?}");
}

#[test]
fn weak_penalty_twin_recovers_the_truth() {
    let t = run_twin(16, 10, 1e-4, 50, 2).unwrap();
    assert!(t.recovery_error() < 0.05, "{}", t.recovery_error());
    assert_eq!(t.truth().len(), 256);
    assert_eq!(t.recovered().len(), 256);
}
