use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chns_core::assimilation::{twin_experiment, AssimilationProblem};
use chns_core::control::{
    default_trial_controls, minimum_principle_residual, optimize, ControlSignal, CostTargets, IterationRecord,
    OcpProblem,
};
use chns_core::diagnostics::{check_suite, gradient_taylor_test, Ladder};
use chns_core::forward::{FlowState, Model, StepDiagnostics};
use chns_core::grid::{Spectral, VectorField};
use chns_core::{io, synthetic, Error};

use crate::config::{scalar_field, vector_field, ConfigError, ExperimentConfig, ProblemKind};

// salts for generator seeds
const SALT_U0: u64 = 1;
const SALT_PHI0: u64 = 2;
const SALT_TRUTH: u64 = 3;
const SALT_TARGET_U: u64 = 4;
const SALT_TARGET_PHI: u64 = 5;
const SALT_DIRECTION: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Simulate,
    Optimize,
    Assimilate,
    Check,
    GradientTest,
}

pub struct Options {
    pub config: PathBuf,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Core(Error),
    Io(PathBuf, std::io::Error),
    ChecksFailed(usize),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Core(e) if e.is_numeric() => 3,
            RunError::ChecksFailed(_) => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            RunError::ChecksFailed(n) => write!(f, "{n} invariant check(s) failed"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        match e {
            // a rejected kernel or potential is a configuration problem
            ConfigError::Core(e) => RunError::Config(ConfigError::Core(e)),
            e => RunError::Config(e),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

type Result<T> = std::result::Result<T, RunError>;

/// Everything a subcommand needs, built from the configuration.
struct Setup {
    cfg: ExperimentConfig,
    seed: u64,
    model: Model,
    initial: FlowState,
    out: PathBuf,
}

impl Setup {
    fn build(task: Task, opts: &Options) -> Result<Self> {
        let cfg = ExperimentConfig::load(&opts.config)?;
        cfg.validate()?;
        check_kind(task, cfg.problem.kind)?;
        let seed = opts.seed.unwrap_or(cfg.seed);
        let grid = cfg.grid()?;
        let spectral = Spectral::new(grid);
        let kernel = cfg.kernel(&spectral)?;
        let model = Model::new(kernel, cfg.potential()?, cfg.solver_config()).map_err(ConfigError::Core)?;
        let u0 = vector_field(&cfg.initial.velocity, model.spectral(), seed, SALT_U0)?;
        let phi0 = scalar_field(&cfg.initial.phase, grid, seed, SALT_PHI0)?;
        let out = opts.output.clone().unwrap_or_else(|| cfg.output.directory.clone());
        fs::create_dir_all(&out).map_err(|e| RunError::Io(out.clone(), e))?;
        Ok(Self {
            cfg,
            seed,
            model,
            initial: FlowState::new(u0, phi0, 0.0),
            out,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn dumps(&self, steps: usize) -> Vec<usize> {
        let every = self.cfg.output.dump_every;
        let mut ns: Vec<usize> = if every == 0 { vec![0] } else { (0..=steps).step_by(every).collect() };
        if ns.last() != Some(&steps) {
            ns.push(steps);
        }
        ns
    }

    fn targets(&self) -> Result<CostTargets> {
        let t = &self.cfg.targets;
        let sp = self.model.spectral();
        let u = vector_field(&t.velocity, sp, self.seed, SALT_TARGET_U)?;
        let phi = scalar_field(&t.phase, *sp.grid(), self.seed, SALT_TARGET_PHI)?;
        let steps = self.model.config().steps();
        if t.mode == "constant" {
            let u = sp.leray_project(&u)?;
            Ok(CostTargets {
                u_track: vec![u.clone(); steps + 1],
                phi_track: vec![phi.clone(); steps + 1],
                u_final: u,
                phi_final: phi,
            })
        } else {
            let traj = self.model.simulate(&FlowState::new(u, phi, 0.0), None, None)?;
            Ok(CostTargets::from_trajectory(&traj))
        }
    }

    fn ocp(&self) -> Result<OcpProblem> {
        Ok(OcpProblem {
            model: self.model.clone(),
            initial: self.initial.clone(),
            forcing: None,
            targets: self.targets()?,
        })
    }

    fn assimilation(&self) -> AssimilationProblem {
        let steps = self.model.config().steps();
        AssimilationProblem {
            model: self.model.clone(),
            phi0: self.initial.phi.clone(),
            forcing: None,
            measurements: CostTargets::zeros(*self.model.grid(), steps),
            control_weight: self.cfg.problem.control_weight,
        }
    }
}

fn check_kind(task: Task, kind: Option<ProblemKind>) -> Result<()> {
    let Some(kind) = kind else { return Ok(()) };
    let ok = match task {
        Task::Simulate => kind == ProblemKind::Simulate,
        Task::Optimize => kind == ProblemKind::Ocp,
        Task::Assimilate => kind == ProblemKind::Da,
        Task::Check => kind == ProblemKind::Check,
        Task::GradientTest => matches!(kind, ProblemKind::GradientTest | ProblemKind::Ocp | ProblemKind::Da),
    };
    if ok {
        Ok(())
    } else {
        Err(RunError::Config(ConfigError::Invalid(format!(
            "problem.kind = {kind:?} does not match the {task:?} subcommand"
        ))))
    }
}

pub fn run(task: Task, opts: &Options) -> Result<()> {
    let s = Setup::build(task, opts)?;
    match task {
        Task::Simulate => simulate(&s),
        Task::Optimize => optimize_ocp(&s),
        Task::Assimilate => assimilate(&s),
        Task::Check => check(&s),
        Task::GradientTest => gradient_test(&s),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| RunError::Io(path.to_path_buf(), e))
}

fn write_history(path: &Path, history: &[IterationRecord]) -> Result<()> {
    let rows: Vec<Vec<f64>> = history.iter().map(|r| r.csv_row()).collect();
    Ok(io::write_csv(path, &IterationRecord::CSV_HEADER, &rows)?)
}

fn simulate(s: &Setup) -> Result<()> {
    let traj = s.model.simulate(&s.initial, None, None)?;
    let rows: Vec<Vec<f64>> = traj.diagnostics().iter().map(|d| d.csv_row()).collect();
    io::write_csv(&s.path("diagnostics.csv"), &StepDiagnostics::CSV_HEADER, &rows)?;
    for n in s.dumps(traj.steps()) {
        let st = &traj.states()[n];
        io::write_vector(&s.path(&format!("u_{n:06}.bin")), &st.u)?;
        io::write_scalar(&s.path(&format!("phi_{n:06}.bin")), &st.phi)?;
    }
    let first = &traj.diagnostics()[0];
    let last = traj.diagnostics().last().expect("nonempty");
    let worst = traj
        .diagnostics()
        .iter()
        .filter_map(|d| d.residual)
        .fold(0.0_f64, |a, r| a.max(r.abs()));
    let report = format!(
        "steps: {}\nt_final: {}\nC0: {}\nenergy_initial: {}\nenergy_final: {}\nmass_drift: {}\nmax_energy_residual: {}\n",
        traj.steps(),
        io::fmt_f64(traj.t_final()),
        io::fmt_f64(s.model.assumption_report().c0),
        io::fmt_f64(first.energy),
        io::fmt_f64(last.energy),
        io::fmt_f64(last.mass - first.mass),
        io::fmt_f64(worst),
    );
    write_text(&s.path("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn optimize_ocp(s: &Setup) -> Result<()> {
    let pb = s.ocp()?;
    let steps = s.model.config().steps();
    let dt = s.model.config().dt;
    let guess = ControlSignal::zeros_distributed(*s.model.grid(), steps);
    let result = optimize(&pb, &guess, &s.cfg.optimizer.to_config())?;
    write_history(&s.path("history.csv"), &result.history)?;

    let control = result.control.as_distributed().expect("distributed control");
    let dir = s.path("control");
    fs::create_dir_all(&dir).map_err(|e| RunError::Io(dir.clone(), e))?;
    let mut index = String::from("n,t,file\n");
    for (n, u) in control.iter().enumerate() {
        let name = format!("U_{n:06}.bin");
        io::write_vector(&dir.join(&name), u)?;
        index.push_str(&format!("{n},{},{name}\n", io::fmt_f64(n as f64 * dt)));
    }
    write_text(&dir.join("index.csv"), &index)?;

    let e = pb.evaluate(control)?;
    for n in s.dumps(steps) {
        let st = &e.trajectory.states()[n];
        let a = &e.adjoint.states()[n];
        io::write_vector(&s.path(&format!("u_{n:06}.bin")), &st.u)?;
        io::write_scalar(&s.path(&format!("phi_{n:06}.bin")), &st.phi)?;
        io::write_vector(&s.path(&format!("p_{n:06}.bin")), &a.p)?;
        io::write_scalar(&s.path(&format!("eta_{n:06}.bin")), &a.eta)?;
    }
    let trials = default_trial_controls(s.model.spectral(), &e.adjoint, s.seed);
    let residual = minimum_principle_residual(control, &e.adjoint, &trials)?;
    let worst = residual.iter().fold(f64::NEG_INFINITY, |a, r| a.max(*r));
    let c = e.cost;
    let report = format!(
        "iterations: {}\nconverged: {}\ninitial_cost: {}\nfinal_cost: {}\nvelocity_tracking: {}\nphase_tracking: {}\n\
         terminal_velocity: {}\nterminal_phase: {}\ncontrol_cost: {}\nmax_minimum_principle_residual: {}\n",
        result.history.len() - 1,
        result.converged,
        io::fmt_f64(result.history[0].cost),
        io::fmt_f64(c.total),
        io::fmt_f64(c.velocity_tracking),
        io::fmt_f64(c.phase_tracking),
        io::fmt_f64(c.terminal_velocity),
        io::fmt_f64(c.terminal_phase),
        io::fmt_f64(c.control),
        io::fmt_f64(worst),
    );
    write_text(&s.path("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn assimilate(s: &Setup) -> Result<()> {
    let pb = s.assimilation();
    let truth = vector_field(&s.cfg.problem.truth, s.model.spectral(), s.seed, SALT_TRUTH)?;
    let truth = s.model.spectral().leray_project(&truth)?;
    let rep = twin_experiment(&truth, s.cfg.problem.noise, &pb, &s.cfg.optimizer.to_config(), s.seed)?;
    write_history(&s.path("history.csv"), &rep.history)?;
    io::write_vector(&s.path("recovered_u0.bin"), &rep.recovered)?;
    io::write_vector(&s.path("true_u0.bin"), &truth)?;
    let text = rep.to_text();
    write_text(&s.path("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn check(s: &Setup) -> Result<()> {
    let outcomes = check_suite(&s.model, &s.initial, s.seed)?;
    let mut csv = String::from("check,value,tolerance,passed\n");
    let mut failed = 0;
    for o in &outcomes {
        csv.push_str(&format!("{},{},{},{}\n", o.name, io::fmt_f64(o.value), io::fmt_f64(o.tolerance), o.passed));
        println!(
            "{} {}: {:.3e} (tolerance {:.1e})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.value,
            o.tolerance
        );
        if !o.passed {
            failed += 1;
        }
    }
    write_text(&s.path("check.csv"), &csv)?;
    if failed > 0 {
        return Err(RunError::ChecksFailed(failed));
    }
    Ok(())
}

fn gradient_test(s: &Setup) -> Result<()> {
    let hs = &s.cfg.problem.taylor_steps;
    let steps = s.model.config().steps();
    let v = synthetic::random_divergence_free(s.model.spectral(), s.seed.wrapping_mul(1000) + SALT_DIRECTION, 3);
    let ladder: Ladder = if s.cfg.problem.kind == Some(ProblemKind::Da) {
        let mut pb = s.assimilation();
        let truth = vector_field(&s.cfg.problem.truth, s.model.spectral(), s.seed, SALT_TRUTH)?;
        let traj = pb.simulate(&s.model.spectral().leray_project(&truth)?)?;
        pb.measurements = CostTargets::from_trajectory(&traj);
        let u = ControlSignal::Initial(VectorField::zeros(*s.model.grid()));
        gradient_taylor_test(&pb, &u, &ControlSignal::Initial(v), hs)?
    } else {
        let pb = s.ocp()?;
        let u = ControlSignal::zeros_distributed(*s.model.grid(), steps);
        let dir = ControlSignal::Distributed(vec![v; steps + 1]);
        gradient_taylor_test(&pb, &u, &dir, hs)?
    };
    io::write_csv(&s.path("gradient_test.csv"), &["h", "remainder", "order"], &ladder.to_rows())?;
    println!("{:>12} {:>24} {:>8}", "h", "remainder", "order");
    for row in ladder.to_rows() {
        println!("{:>12.3e} {:>24.16e} {:>8.3}", row[0], row[1], row[2]);
    }
    println!("observed order: {:.3}", ladder.fitted_order());
    Ok(())
}
