//! Experiment configuration read from TOML. Unknown keys are rejected.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use chns_core::forward::SolverConfig;
use chns_core::grid::{ScalarField, Spectral, TorusGrid, VectorField};
use chns_core::physics::{Kernel, KernelFamily, Potential};
use chns_core::{io, synthetic, Error};
use chns_core::control::OptimizerConfig;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub kernel: KernelSection,
    #[serde(default)]
    pub potential: PotentialSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub problem: ProblemSection,
    #[serde(default)]
    pub targets: TargetsSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    #[serde(default = "two_pi")]
    pub l: f64,
}

fn two_pi() -> f64 {
    TAU
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub nu: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub stabilization: f64,
    #[serde(default = "yes")]
    pub dealias: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: String,
    #[serde(default = "one")]
    pub epsilon: f64,
    pub mass: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    #[serde(default = "double_well")]
    pub family: String,
    /// Ascending polynomial coefficients, for `family = "polynomial"`.
    #[serde(default)]
    pub coefficients: Option<Vec<f64>>,
}

fn double_well() -> String {
    "double-well".into()
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            family: double_well(),
            coefficients: None,
        }
    }
}

/// A field produced by a built-in generator or read from a snapshot.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero {},
    Constant {
        value: f64,
    },
    TaylorGreen {
        amplitude: f64,
    },
    SingleMode {
        mx: i32,
        my: i32,
        amplitude: f64,
    },
    /// Smooth random field with `L^2` norm `amplitude` (plus `mean` for scalars).
    Random {
        amplitude: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "three")]
        max_mode: i32,
        #[serde(default)]
        mean: f64,
    },
    File {
        path: PathBuf,
    },
}

fn three() -> i32 {
    3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default = "default_velocity")]
    pub velocity: FieldSpec,
    #[serde(default = "default_phase")]
    pub phase: FieldSpec,
}

fn default_velocity() -> FieldSpec {
    FieldSpec::TaylorGreen { amplitude: 0.5 }
}

fn default_phase() -> FieldSpec {
    FieldSpec::Random {
        amplitude: 2.0,
        seed: None,
        max_mode: 3,
        mean: 0.0,
    }
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            velocity: default_velocity(),
            phase: default_phase(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Ocp,
    Da,
    Simulate,
    Check,
    GradientTest,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// Optional; when present it must agree with the subcommand (`gradient-test`
    /// accepts `ocp` or `da` to pick the objective).
    #[serde(default)]
    pub kind: Option<ProblemKind>,
    /// Weight of `|U|^2` in the assimilation cost.
    #[serde(default = "one")]
    pub control_weight: f64,
    /// Relative noise added to the twin measurements.
    #[serde(default)]
    pub noise: f64,
    /// True initial velocity of the twin experiment.
    #[serde(default = "default_truth")]
    pub truth: FieldSpec,
    /// Step sizes of the gradient Taylor test.
    #[serde(default = "default_hs")]
    pub taylor_steps: Vec<f64>,
}

fn default_truth() -> FieldSpec {
    FieldSpec::Random {
        amplitude: 3.0,
        seed: None,
        max_mode: 3,
        mean: 0.0,
    }
}

fn default_hs() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            kind: None,
            control_weight: 1.0,
            noise: 0.0,
            truth: default_truth(),
            taylor_steps: default_hs(),
        }
    }
}

/// Tracking targets of the distributed-control problem.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsSection {
    /// `constant`: the fields below at every time. `trajectory`: the
    /// uncontrolled flow started from the fields below.
    #[serde(default = "trajectory")]
    pub mode: String,
    #[serde(default = "default_target_velocity")]
    pub velocity: FieldSpec,
    #[serde(default = "default_target_phase")]
    pub phase: FieldSpec,
}

fn trajectory() -> String {
    "trajectory".into()
}

fn default_target_velocity() -> FieldSpec {
    FieldSpec::TaylorGreen { amplitude: 0.2 }
}

fn default_target_phase() -> FieldSpec {
    FieldSpec::Zero {}
}

impl Default for TargetsSection {
    fn default() -> Self {
        Self {
            mode: trajectory(),
            velocity: default_target_velocity(),
            phase: default_target_phase(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iters: usize,
    pub step0: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub grad_tol: f64,
    /// Radius of the pointwise control ball; absent means unconstrained.
    pub radius: Option<f64>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            max_iters: d.max_iters,
            step0: d.step0,
            armijo_c: d.armijo_c,
            armijo_shrink: d.armijo_shrink,
            grad_tol: d.grad_tol,
            radius: d.ball_radius,
        }
    }
}

impl OptimizerSection {
    pub fn to_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_iters: self.max_iters,
            step0: self.step0,
            armijo_c: self.armijo_c,
            armijo_shrink: self.armijo_shrink,
            grad_tol: self.grad_tol,
            ball_radius: self.radius,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "out_dir")]
    pub directory: PathBuf,
    /// Snapshot interval in steps; 0 writes only the first and last states.
    #[serde(default)]
    pub dump_every: usize,
}

fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: out_dir(),
            dump_every: 0,
        }
    }
}

/// Problems found while loading a configuration. All map to exit code 2.
#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(String),
    Invalid(String),
    Core(Error),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Parse(m) => write!(f, "invalid config: {m}"),
            ConfigError::Invalid(m) => write!(f, "invalid config: {m}"),
            ConfigError::Core(e) => write!(f, "invalid config: {e}"),
        }
    }
}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        ConfigError::Core(e)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        let mut cfg = Self::parse(&text)?;
        // relative snapshot paths are resolved against the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in cfg.field_specs_mut() {
            if let FieldSpec::File { path } = spec {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        // one line: toml reports a multi-line excerpt by default
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))
    }

    fn field_specs_mut(&mut self) -> [&mut FieldSpec; 5] {
        [
            &mut self.initial.velocity,
            &mut self.initial.phase,
            &mut self.problem.truth,
            &mut self.targets.velocity,
            &mut self.targets.phase,
        ]
    }

    /// Checks everything that does not need the fields themselves.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        self.solver_config().validate()?;
        self.optimizer.to_config().validate()?;
        if self.targets.mode != "trajectory" && self.targets.mode != "constant" {
            return Err(ConfigError::Invalid(format!(
                "targets.mode must be \"trajectory\" or \"constant\", got {:?}",
                self.targets.mode
            )));
        }
        if !(self.problem.noise.is_finite() && self.problem.noise >= 0.0) {
            return Err(ConfigError::Invalid(format!("problem.noise must be nonnegative, got {}", self.problem.noise)));
        }
        if self.problem.taylor_steps.len() < 2 || self.problem.taylor_steps.iter().any(|h| h.is_nan() || *h <= 0.0) {
            return Err(ConfigError::Invalid("problem.taylor_steps needs at least two positive entries".into()));
        }
        let mut specs = vec![&self.initial.velocity, &self.initial.phase, &self.problem.truth];
        specs.extend([&self.targets.velocity, &self.targets.phase]);
        for spec in specs {
            if let FieldSpec::File { path } = spec {
                if !path.is_file() {
                    return Err(ConfigError::Invalid(format!("snapshot {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid, ConfigError> {
        Ok(TorusGrid::new(self.grid.n, self.grid.n, self.grid.l, self.grid.l)?)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            dt: self.solver.dt,
            t_final: self.solver.t_final,
            nu: self.solver.nu,
            stabilization: self.solver.stabilization,
            dealias: self.solver.dealias,
        }
    }

    pub fn kernel(&self, spectral: &Spectral) -> Result<Kernel, ConfigError> {
        let family = KernelFamily::parse(&self.kernel.family)?;
        Ok(Kernel::new(family, self.kernel.epsilon, self.kernel.mass, spectral)?)
    }

    pub fn potential(&self) -> Result<Potential, ConfigError> {
        match (self.potential.family.as_str(), &self.potential.coefficients) {
            ("double-well", None) => Ok(Potential::double_well()),
            ("double-well", Some(_)) => Err(ConfigError::Invalid(
                "potential.coefficients only apply to family \"polynomial\"".into(),
            )),
            ("polynomial", Some(c)) => Ok(Potential::polynomial(c.clone())?),
            ("polynomial", None) => Err(ConfigError::Invalid(
                "potential.coefficients is required for family \"polynomial\"".into(),
            )),
            (other, _) => Err(ConfigError::Invalid(format!(
                "potential.family must be \"double-well\" or \"polynomial\", got {other:?}"
            ))),
        }
    }
}

/// Seeds of generators without an explicit seed are derived from the run seed
/// and a per-field salt, so every field differs but the run stays reproducible.
pub fn vector_field(spec: &FieldSpec, spectral: &Spectral, seed: u64, salt: u64) -> Result<VectorField, ConfigError> {
    let g = *spectral.grid();
    Ok(match spec {
        FieldSpec::Zero {} => VectorField::zeros(g),
        FieldSpec::Constant { .. } => {
            return Err(ConfigError::Invalid("generator \"constant\" is only defined for the phase".into()))
        }
        FieldSpec::TaylorGreen { amplitude } => synthetic::taylor_green(g, *amplitude),
        FieldSpec::SingleMode { mx, my, amplitude } => synthetic::single_mode(g, *mx, *my, *amplitude),
        FieldSpec::Random {
            amplitude,
            seed: s,
            max_mode,
            ..
        } => synthetic::random_divergence_free(spectral, s.unwrap_or(seed.wrapping_mul(1000).wrapping_add(salt)), *max_mode)
            .scale(*amplitude),
        FieldSpec::File { path } => {
            let v = io::read_vector(path)?;
            v.grid().check_same(&g)?;
            v
        }
    })
}

pub fn scalar_field(spec: &FieldSpec, grid: TorusGrid, seed: u64, salt: u64) -> Result<ScalarField, ConfigError> {
    Ok(match spec {
        FieldSpec::Zero {} => ScalarField::zeros(grid),
        FieldSpec::Constant { value } => ScalarField::constant(grid, *value),
        FieldSpec::Random {
            amplitude,
            seed: s,
            max_mode,
            mean,
        } => {
            let r = synthetic::random_scalar(grid, s.unwrap_or(seed.wrapping_mul(1000).wrapping_add(salt)), *max_mode);
            let m = *mean;
            r.scale(*amplitude).map(|v| v + m)
        }
        FieldSpec::File { path } => {
            let f = io::read_scalar(path)?;
            f.grid().check_same(&grid)?;
            f
        }
        FieldSpec::TaylorGreen { .. } | FieldSpec::SingleMode { .. } => {
            return Err(ConfigError::Invalid("velocity generators cannot produce a phase field".into()))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
n = 16
[solver]
nu = 0.1
dt = 1e-3
T = 0.01
[kernel]
family = "gaussian"
mass = 5.0
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.grid.l, TAU);
        assert!(c.solver.dealias);
        assert_eq!(c.optimizer.max_iters, 200);
        assert_eq!(c.output.directory, PathBuf::from("out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("nu = 0.1", "nu = 0.1\nviscosity = 0.2");
        let e = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(e.contains("viscosity"), "{e}");
        let text = format!("{MINIMAL}\n[initial.velocity]\ngenerator = \"zero\"\namplitude = 1.0\n");
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = format!("{MINIMAL}\n[initial.velocity]\ngenerator = \"taylor-green\"\namplitude = 1.0\nseed = 2\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn missing_field_is_named() {
        let e = ExperimentConfig::parse(&MINIMAL.replace("nu = 0.1", "")).unwrap_err().to_string();
        assert!(e.contains("nu"), "{e}");
    }

    #[test]
    fn generators() {
        let text = format!(
            "{MINIMAL}\n[initial.velocity]\ngenerator = \"single-mode\"\nmx = 1\nmy = 2\namplitude = 0.3\n\
             [initial.phase]\ngenerator = \"random\"\namplitude = 1.0\nmean = 0.25\n"
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        let g = c.grid().unwrap();
        let sp = Spectral::new(g);
        let u = vector_field(&c.initial.velocity, &sp, c.seed, 0).unwrap();
        assert!(sp.relative_divergence(&u).unwrap() < 1e-12);
        let p = scalar_field(&c.initial.phase, g, c.seed, 1).unwrap();
        assert!((p.mean() - 0.25).abs() < 1e-12);
        assert!(scalar_field(&c.initial.velocity, g, 0, 0).is_err());
    }

    #[test]
    fn taylor_green_on_a_larger_box_is_divergence_free() {
        let g = TorusGrid::square(16).unwrap();
        let g = TorusGrid::new(16, 16, 2.0 * g.lx(), 2.0 * g.ly()).unwrap();
        let sp = Spectral::new(g);
        let u = vector_field(&FieldSpec::TaylorGreen { amplitude: 1.0 }, &sp, 0, 0).unwrap();
        assert!(sp.relative_divergence(&u).unwrap() < 1e-12);
    }

    #[test]
    fn missing_snapshot_is_a_validation_error() {
        let text = format!("{MINIMAL}\n[initial.phase]\ngenerator = \"file\"\npath = \"/nonexistent/phi.bin\"\n");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn potential_choices() {
        let mut c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert!(c.potential().is_ok());
        c.potential.family = "polynomial".into();
        assert!(c.potential().is_err());
        c.potential.coefficients = Some(vec![0.0, 0.0, 1.0]);
        assert!(c.potential().is_ok());
        c.potential.family = "quartic".into();
        assert!(c.potential().is_err());
    }
}
