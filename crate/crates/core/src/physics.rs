//! Nonlocal interaction kernels, polynomial potentials, the chemical potential,
//! the capillary (Korteweg) force, and the runtime check of the structural
//! assumptions on `(J, F)`.

use crate::error::{Error, Result};
use crate::grid::{KernelTransform, ScalarField, Spectral, TorusGrid, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    /// `exp(-|x|^2 / eps^2)`, periodized by minimum image.
    Gaussian,
    /// `log(eps / |x|)` inside the ball of radius `eps`, zero outside. The
    /// singularity at the origin is cut at half a cell.
    TruncatedNewtonian,
    /// Unit weight at the origin node only: `J * f = mass * f`.
    DiscreteDelta,
}

impl KernelFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::Gaussian),
            "truncated-newtonian" => Ok(Self::TruncatedNewtonian),
            "discrete-delta" => Ok(Self::DiscreteDelta),
            other => Err(Error::InvalidParameter {
                name: "kernel.family",
                reason: format!(
                    "unknown family `{other}` (expected gaussian, truncated-newtonian or discrete-delta)"
                ),
            }),
        }
    }
}

/// Even convolution kernel rescaled to an exact discrete mass, with its
/// transform cached for one grid.
#[derive(Clone, Debug)]
pub struct Kernel {
    family: KernelFamily,
    epsilon: f64,
    mass: f64,
    transform: KernelTransform,
}

impl Kernel {
    pub fn new(family: KernelFamily, epsilon: f64, mass: f64, spectral: &Spectral) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "kernel.epsilon",
                reason: format!("{epsilon} must be positive"),
            });
        }
        if !mass.is_finite() {
            return Err(Error::InvalidParameter {
                name: "kernel.mass",
                reason: format!("{mass} must be finite"),
            });
        }
        let grid = *spectral.grid();
        let raw = ScalarField::from_vec_unchecked(grid, kernel_samples(family, epsilon, &grid));
        let raw_mass = raw.integral();
        if raw_mass <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "kernel.epsilon",
                reason: format!("{epsilon} is too small for the grid spacing"),
            });
        }
        let samples = raw.scale(mass / raw_mass);
        let transform = spectral.kernel_transform(&samples)?;
        Ok(Self {
            family,
            epsilon,
            mass,
            transform,
        })
    }

    /// The zero kernel (`a = 0`, `J = 0`).
    pub fn disabled(spectral: &Spectral) -> Self {
        Self::new(KernelFamily::DiscreteDelta, 1.0, 0.0, spectral).expect("valid zero kernel")
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn grid(&self) -> &TorusGrid {
        self.transform.grid()
    }

    pub fn transform(&self) -> &KernelTransform {
        &self.transform
    }

    /// `a = J * 1`, which on the torus is the constant kernel mass.
    pub fn a(&self) -> f64 {
        self.transform.mass()
    }
}

fn kernel_samples(family: KernelFamily, eps: f64, grid: &TorusGrid) -> Vec<f64> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let r_min = 0.5 * grid.dx().min(grid.dy());
    let mut out = Vec::with_capacity(grid.len());
    for j in 0..ny {
        let y = j.min(ny - j) as f64 * grid.dy();
        for i in 0..nx {
            let x = i.min(nx - i) as f64 * grid.dx();
            let r = (x * x + y * y).sqrt();
            out.push(match family {
                KernelFamily::Gaussian => (-(r * r) / (eps * eps)).exp(),
                KernelFamily::TruncatedNewtonian if r < eps => (eps / r.max(r_min)).ln(),
                KernelFamily::TruncatedNewtonian => 0.0,
                KernelFamily::DiscreteDelta if i == 0 && j == 0 => 1.0,
                KernelFamily::DiscreteDelta => 0.0,
            });
        }
    }
    out
}

/// `a(x) = (J * 1)(x)` as a field.
pub fn kernel_weight_a(kernel: &Kernel, spectral: &Spectral) -> Result<ScalarField> {
    spectral.convolve(kernel.transform(), &ScalarField::constant(*spectral.grid(), 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialFamily {
    DoubleWell,
    UserPolynomial,
}

/// Polynomial potential `F(s) = sum c_k s^k` with its first three derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    family: PotentialFamily,
    coeffs: [Vec<f64>; 4],
}

fn derivative(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter().enumerate().skip(1).map(|(k, v)| k as f64 * v).collect()
}

fn horner(c: &[f64], s: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * s + v)
}

fn trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    c
}

/// A potential derivative of some order.
type Eval = fn(&Potential, f64) -> f64;

impl Potential {
    /// `F(s) = (s^2 - 1)^2`.
    pub fn double_well() -> Self {
        let mut p = Self::polynomial(vec![1.0, 0.0, -2.0, 0.0, 1.0]).expect("valid coefficients");
        p.family = PotentialFamily::DoubleWell;
        p
    }

    /// Coefficients in ascending powers of `s`.
    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "potential.coefficients",
                reason: "need at least one finite coefficient".into(),
            });
        }
        let f = trim(coefficients);
        let f1 = derivative(&f);
        let f2 = derivative(&f1);
        let f3 = derivative(&f2);
        Ok(Self {
            family: PotentialFamily::UserPolynomial,
            coeffs: [f, f1, f2, f3],
        })
    }

    pub fn family(&self) -> PotentialFamily {
        self.family
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs[0]
    }

    pub fn degree(&self) -> usize {
        self.coeffs[0].len() - 1
    }

    pub fn f(&self, s: f64) -> f64 {
        horner(&self.coeffs[0], s)
    }

    pub fn f1(&self, s: f64) -> f64 {
        horner(&self.coeffs[1], s)
    }

    pub fn f2(&self, s: f64) -> f64 {
        horner(&self.coeffs[2], s)
    }

    pub fn f3(&self, s: f64) -> f64 {
        horner(&self.coeffs[3], s)
    }

    /// Largest relative mismatch between each derivative and a centered
    /// difference of the one below it, over `samples` points of `range`.
    pub fn derivative_mismatch(&self, range: (f64, f64), samples: usize) -> f64 {
        let mut worst = 0.0_f64;
        for s in linspace(range, samples) {
            let h = 1e-5 * s.abs().max(1.0);
            let pairs: [(Eval, Eval); 3] = [
                (Self::f, Self::f1),
                (Self::f1, Self::f2),
                (Self::f2, Self::f3),
            ];
            for (lower, exact) in pairs {
                let fd = (lower(self, s + h) - lower(self, s - h)) / (2.0 * h);
                let e = exact(self, s);
                worst = worst.max((fd - e).abs() / e.abs().max(1.0));
            }
        }
        worst
    }
}

fn linspace(range: (f64, f64), n: usize) -> impl Iterator<Item = f64> {
    let (lo, hi) = range;
    let step = (hi - lo) / (n.max(2) - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + step * i as f64 })
}

/// Chemical potential `mu = a phi - J * phi + F'(phi)`.
pub fn chemical_potential(
    phi: &ScalarField,
    kernel: &Kernel,
    potential: &Potential,
    spectral: &Spectral,
) -> Result<ScalarField> {
    let jphi = spectral.convolve(kernel.transform(), phi)?;
    let a = kernel.a();
    let values: Vec<f64> = phi
        .values()
        .iter()
        .zip(jphi.values())
        .map(|(&p, &jp)| a * p - jp + potential.f1(p))
        .collect();
    ScalarField::new(*phi.grid(), values)
        .map_err(|_| Error::NonFinite("chemical potential".into()))
}

/// Capillary force `P(mu grad phi)`.
pub fn korteweg_force(mu: &ScalarField, phi: &ScalarField, spectral: &Spectral) -> Result<VectorField> {
    mu.grid().check_same(phi.grid())?;
    let g = spectral.grad(phi)?;
    let fx = g.x().iter().zip(mu.values()).map(|(d, m)| d * m).collect();
    let fy = g.y().iter().zip(mu.values()).map(|(d, m)| d * m).collect();
    spectral.leray_project(&VectorField::from_vecs_unchecked(*phi.grid(), fx, fy, false))
}

/// Outcome of [`validate_assumptions`].
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    /// Certified lower bound of `F''(s) + a(x)` over `s_range`.
    pub c0: f64,
    pub min_f2: f64,
    pub min_a: f64,
    /// `F''(s) + a >= c1 |s|^{2q} - c2` holds with the fitted constants.
    pub growth_ok: bool,
    pub growth: Option<(f64, f64, f64)>,
    /// `|F'(s)|^r <= c3 |F(s)| + c4` holds with `r` in `(1, 2]`.
    pub coercivity_ok: bool,
    pub coercivity: Option<(f64, f64, f64)>,
    pub s_range: (f64, f64),
}

pub const DEFAULT_S_RANGE: (f64, f64) = (-3.0, 3.0);
pub const DEFAULT_SAMPLES: usize = 601;

/// Certifies the structural conditions on `(J, F)` over a sampled range of the
/// phase variable. `c0 <= 0` is an error; the growth and coercivity items are
/// reported.
pub fn validate_assumptions(
    kernel: &Kernel,
    potential: &Potential,
    s_range: (f64, f64),
    samples: usize,
) -> Result<AssumptionReport> {
    if samples < 100 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("{samples} < 100"),
        });
    }
    let (lo, hi) = s_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter {
            name: "s_range",
            reason: format!("[{lo}, {hi}] is not a proper interval"),
        });
    }
    let grid_s: Vec<f64> = linspace(s_range, samples).collect();

    // Sampled minimum, refined at interior critical points of F''.
    let mut min_f2 = grid_s.iter().map(|&s| potential.f2(s)).fold(f64::INFINITY, f64::min);
    for w in grid_s.windows(2) {
        let (mut l, mut r) = (w[0], w[1]);
        let (fl, fr) = (potential.f3(l), potential.f3(r));
        if fl == 0.0 {
            min_f2 = min_f2.min(potential.f2(l));
        }
        if fl * fr < 0.0 {
            for _ in 0..80 {
                let m = 0.5 * (l + r);
                if potential.f3(m) * fl > 0.0 {
                    l = m;
                } else {
                    r = m;
                }
            }
            min_f2 = min_f2.min(potential.f2(0.5 * (l + r)));
        }
    }
    let min_a = kernel.transform().mass();
    let c0 = min_f2 + min_a;
    if c0.is_nan() || c0 <= 0.0 {
        return Err(Error::AssumptionViolation {
            item: "F''(s) + a(x) >= C0 > 0",
            detail: format!(
                "C0 = min F'' + min a = {min_f2} + {min_a} = {c0} on s in [{lo}, {hi}]"
            ),
        });
    }

    let f2 = &potential.coeffs[2];
    let d2 = f2.len() - 1;
    let lead2 = *f2.last().unwrap();
    let growth = if d2 >= 2 && d2.is_multiple_of(2) && lead2 > 0.0 {
        let q = d2 as f64 / 2.0;
        let c1 = lead2 / 2.0;
        let c2 = grid_s
            .iter()
            .map(|&s| c1 * s.abs().powf(2.0 * q) - potential.f2(s) - min_a)
            .fold(f64::MIN_POSITIVE, f64::max);
        Some((c1, c2, q))
    } else {
        None
    };

    let d = potential.degree();
    let coercivity = if d >= 2 {
        let lead = *potential.coeffs[0].last().unwrap();
        let r = (d as f64 / (d as f64 - 1.0)).min(2.0);
        let c3 = if (r * (d as f64 - 1.0) - d as f64).abs() < 1e-12 {
            2.0 * (d as f64 * lead).abs().powf(r) / lead.abs()
        } else {
            1.0
        };
        let c4 = grid_s
            .iter()
            .map(|&s| potential.f1(s).abs().powf(r) - c3 * potential.f(s).abs())
            .fold(0.0, f64::max);
        c4.is_finite().then_some((r, c3, c4))
    } else {
        None
    };

    Ok(AssumptionReport {
        c0,
        min_f2,
        min_a,
        growth_ok: growth.is_some(),
        growth,
        coercivity_ok: coercivity.is_some(),
        coercivity,
        s_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup(n: usize) -> (TorusGrid, Spectral) {
        let g = TorusGrid::square(n).unwrap();
        (g, Spectral::new(g))
    }

    #[test]
    fn a_is_the_kernel_mass() {
        let (_, sp) = setup(32);
        for (family, mass) in [
            (KernelFamily::DiscreteDelta, 1.0),
            (KernelFamily::Gaussian, 5.0),
            (KernelFamily::Gaussian, 2.0),
            (KernelFamily::TruncatedNewtonian, 3.0),
        ] {
            let k = Kernel::new(family, 0.8, mass, &sp).unwrap();
            let a = kernel_weight_a(&k, &sp).unwrap();
            assert!(a.values().iter().all(|v| (v - mass).abs() < 1e-12), "{family:?}");
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let (g, sp) = setup(16);
        let k = Kernel::new(KernelFamily::DiscreteDelta, 1.0, 1.0, &sp).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x + y).sin() + 0.3 * (2.0 * x).cos());
        let out = sp.convolve(k.transform(), &f).unwrap();
        assert!(out.sub(&f).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn gaussian_acts_diagonally_on_modes() {
        let (g, sp) = setup(32);
        let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let f = ScalarField::from_fn(g, |x, _| x.sin());
        let out = sp.convolve(k.transform(), &f).unwrap();
        let expect = f.scale(k.transform().at_mode(1, 0));
        assert!(out.sub(&expect).unwrap().max_abs() < 1e-13);
        // close to the continuum symbol 5 exp(-eps^2 |k|^2 / 4); the gap is
        // the periodic tail of the Gaussian
        assert_relative_eq!(k.transform().at_mode(1, 0), 5.0 * (-0.25f64).exp(), max_relative = 1e-4);
    }

    #[test]
    fn kernels_are_even() {
        let (_, sp) = setup(16);
        let k = Kernel::new(KernelFamily::TruncatedNewtonian, 1.3, 2.0, &sp).unwrap();
        for (mx, my) in [(1, 0), (2, 3), (5, -4)] {
            let (a, b) = (k.transform().at_mode(mx, my), k.transform().at_mode(-mx, -my));
            assert!((a - b).abs() <= 1e-14 * k.transform().mass());
        }
    }

    #[test]
    fn chemical_potential_examples() {
        let (g, sp) = setup(32);
        let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let dw = Potential::double_well();
        let mu0 = chemical_potential(&ScalarField::zeros(g), &k, &dw, &sp).unwrap();
        assert_eq!(mu0.max_abs(), 0.0);
        let mu1 = chemical_potential(&ScalarField::constant(g, 1.0), &k, &dw, &sp).unwrap();
        assert!(mu1.max_abs() < 1e-12);

        let off = Kernel::disabled(&sp);
        let phi = ScalarField::from_fn(g, |x, _| x.sin());
        let mu = chemical_potential(&phi, &off, &dw, &sp).unwrap();
        let expect = ScalarField::from_fn(g, |x, _| 4.0 * x.sin() * (x.sin().powi(2) - 1.0));
        assert!(mu.sub(&expect).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn korteweg_examples() {
        let (g, sp) = setup(32);
        let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let dw = Potential::double_well();
        let c = ScalarField::constant(g, 0.4);
        let mu = chemical_potential(&c, &k, &dw, &sp).unwrap();
        assert!(korteweg_force(&mu, &c, &sp).unwrap().max_speed() < 1e-13);

        let phi = ScalarField::from_fn(g, |x, y| 0.5 * x.sin() * y.cos());
        let off = Kernel::disabled(&sp);
        let mu = chemical_potential(&phi, &off, &dw, &sp).unwrap();
        assert!(korteweg_force(&mu, &phi, &sp).unwrap().max_speed() < 1e-12);

        let phi = ScalarField::from_fn(g, |x, y| x.sin() * (2.0 * y).cos() + y.cos());
        let mu = chemical_potential(&phi, &k, &dw, &sp).unwrap();
        let f = korteweg_force(&mu, &phi, &sp).unwrap();
        let jphi = sp.convolve(k.transform(), &phi).unwrap();
        let gphi = sp.grad(&phi).unwrap();
        let neg: (Vec<f64>, Vec<f64>) = (
            gphi.x().iter().zip(jphi.values()).map(|(d, j)| -d * j).collect(),
            gphi.y().iter().zip(jphi.values()).map(|(d, j)| -d * j).collect(),
        );
        let oracle = sp
            .leray_project(&VectorField::new(g, neg.0, neg.1).unwrap())
            .unwrap();
        assert!(f.norm() > 0.1);
        assert!(f.sub(&oracle).unwrap().norm() <= 1e-10 * oracle.norm());
    }

    #[test]
    fn validator_examples() {
        let (_, sp) = setup(16);
        let dw = Potential::double_well();
        let k5 = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
        let r = validate_assumptions(&k5, &dw, DEFAULT_S_RANGE, 601).unwrap();
        assert_relative_eq!(r.c0, 1.0, epsilon = 1e-12);
        assert!(r.growth_ok && r.coercivity_ok);

        let k1 = Kernel::new(KernelFamily::Gaussian, 1.0, 1.0, &sp).unwrap();
        match validate_assumptions(&k1, &dw, DEFAULT_S_RANGE, 601) {
            Err(Error::AssumptionViolation { item, detail }) => {
                assert!(item.contains("F''(s) + a(x)"));
                assert!(detail.contains("= -3"), "{detail}");
            }
            other => panic!("expected rejection, got {other:?}"),
        }

        let k45 = Kernel::new(KernelFamily::Gaussian, 1.0, 4.5, &sp).unwrap();
        let r = validate_assumptions(&k45, &dw, (-2.0, 2.0), 400).unwrap();
        assert_relative_eq!(r.c0, 0.5, epsilon = 1e-12);
        assert!(r.growth_ok && r.coercivity_ok);
        let (r_exp, _, _) = r.coercivity.unwrap();
        assert_relative_eq!(r_exp, 4.0 / 3.0);
        assert!(validate_assumptions(&k45, &dw, (-2.0, 2.0), 99).is_err());
    }

    #[test]
    fn derivatives_match_differences() {
        assert!(Potential::double_well().derivative_mismatch(DEFAULT_S_RANGE, 301) < 1e-6);
        let p = Potential::polynomial(vec![0.2, -1.0, 0.5, 0.0, 0.25, 0.0, 0.01]).unwrap();
        assert!(p.derivative_mismatch(DEFAULT_S_RANGE, 301) < 1e-6);
    }

    proptest! {
        #[test]
        fn convolution_is_self_adjoint(seed in 0u64..1000, eps in 0.3f64..2.0) {
            let (g, sp) = setup(16);
            let k = Kernel::new(KernelFamily::Gaussian, eps, 3.0, &sp).unwrap();
            let s = seed as f64;
            let f = ScalarField::from_fn(g, |x, y| (x + s).sin() * (2.0 * y - s).cos() + 0.1 * s.sin());
            let h = ScalarField::from_fn(g, |x, y| (3.0 * x - y + s).cos() + (y * s).sin());
            let lhs = sp.convolve(k.transform(), &f).unwrap().inner(&h).unwrap();
            let rhs = f.inner(&sp.convolve(k.transform(), &h).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }

        #[test]
        fn constant_phase_gives_f_prime(c in -2.0f64..2.0) {
            let (g, sp) = setup(16);
            let k = Kernel::new(KernelFamily::Gaussian, 1.0, 5.0, &sp).unwrap();
            let dw = Potential::double_well();
            let mu = chemical_potential(&ScalarField::constant(g, c), &k, &dw, &sp).unwrap();
            prop_assert!(mu.values().iter().all(|m| (m - dw.f1(c)).abs() < 1e-12));
        }
    }
}
