//! Periodic torus discretization, grid fields and the Fourier-space operators
//! (derivatives, Leray projection, convolution, 2/3-rule dealiasing).
//!
//! Fields are sampled at `x_i = i * l_x / n_x`, `y_j = j * l_y / n_y` and stored
//! row-major (`index = j * n_x + i`). Inner products use equal quadrature
//! weights `l_x * l_y / (n_x * n_y)`, which is exact for band-limited fields.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Discrete periodic domain `[0, l_x) x [0, l_y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusGrid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl TorusGrid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        for (name, n) in [("n_x", nx), ("n_y", ny)] {
            if n < 8 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "{name} = {n} must be even and at least 8"
                )));
            }
        }
        for (name, l) in [("l_x", lx), ("l_y", ly)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("{name} = {l} must be positive")));
            }
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// `n x n` grid on the `2 pi`-periodic square.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n, 2.0 * PI, 2.0 * PI)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Quadrature weight of one grid node.
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Physical coordinates of node `(i, j)`.
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.dx(), j as f64 * self.dy())
    }

    /// Signed integer mode index for FFT bin `i` of an `n`-point transform.
    pub fn signed_mode(i: usize, n: usize) -> i64 {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Smallest nonzero squared wavenumber: the first eigenvalue of the
    /// Stokes operator on the torus, i.e. the Poincare constant.
    pub fn poincare_constant(&self) -> f64 {
        let kx = 2.0 * PI / self.lx;
        let ky = 2.0 * PI / self.ly;
        (kx * kx).min(ky * ky)
    }

    /// Errors unless `other` is the same grid.
    pub fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} on [0,{})x[0,{})", self.nx, self.ny, self.lx, self.ly)
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Real scalar field on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        check_finite(&values, "scalar field")?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: TorusGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x, y)` at the grid nodes.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.coords(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &ScalarField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.add_scaled(1.0, other)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Integral over the torus.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// `L^2(Omega)` inner product.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(dot(&self.values, &other.values) * self.grid.cell_area())
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values) * self.grid.cell_area()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Two-component field on a [`TorusGrid`].
///
/// `divergence_free` is set by [`Spectral::leray_project`] and survives linear
/// combinations of divergence-free fields.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    x: Vec<f64>,
    y: Vec<f64>,
    divergence_free: bool,
}

impl VectorField {
    pub fn new(grid: TorusGrid, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != grid.len() || y.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "expected {} values per component, got {} and {}",
                grid.len(),
                x.len(),
                y.len()
            )));
        }
        check_finite(&x, "vector field x-component")?;
        check_finite(&y, "vector field y-component")?;
        Ok(Self {
            grid,
            x,
            y,
            divergence_free: false,
        })
    }

    pub(crate) fn from_vecs_unchecked(
        grid: TorusGrid,
        x: Vec<f64>,
        y: Vec<f64>,
        divergence_free: bool,
    ) -> Self {
        debug_assert_eq!(x.len(), grid.len());
        debug_assert_eq!(y.len(), grid.len());
        Self {
            grid,
            x,
            y,
            divergence_free,
        }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
            divergence_free: true,
        }
    }

    /// Samples `f(x, y) -> (v_x, v_y)` at the grid nodes.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut vx = Vec::with_capacity(grid.len());
        let mut vy = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.coords(i, j);
                let (a, b) = f(x, y);
                vx.push(a);
                vy.push(b);
            }
        }
        Self {
            grid,
            x: vx,
            y: vy,
            divergence_free: false,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn divergence_free(&self) -> bool {
        self.divergence_free
    }

    pub fn into_components(self) -> (Vec<f64>, Vec<f64>) {
        (self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            x: self.x.iter().map(|v| s * v).collect(),
            y: self.y.iter().map(|v| s * v).collect(),
            divergence_free: self.divergence_free,
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &VectorField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + s * b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a + s * b).collect(),
            divergence_free: self.divergence_free && other.divergence_free,
        })
    }

    pub fn add(&self, other: &VectorField) -> Result<Self> {
        self.add_scaled(1.0, other)
    }

    pub fn sub(&self, other: &VectorField) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok((dot(&self.x, &other.x) + dot(&self.y, &other.y)) * self.grid.cell_area())
    }

    pub fn norm_sq(&self) -> f64 {
        (dot(&self.x, &self.x) + dot(&self.y, &self.y)) * self.grid.cell_area()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest pointwise speed.
    pub fn max_speed(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .fold(0.0_f64, |m, (a, b)| m.max((a * a + b * b).sqrt()))
    }

    pub fn max_abs_diff(&self, other: &VectorField) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.y.iter().zip(&other.y))
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fourier transform of a convolution kernel, scaled so that
/// `convolve(J, f) = F^{-1}[hat * F f]` reproduces `integral J(x - y) f(y) dy`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTransform {
    grid: TorusGrid,
    hat: Vec<f64>,
}

impl KernelTransform {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Multiplier per Fourier mode (real because the kernel is even).
    pub fn multipliers(&self) -> &[f64] {
        &self.hat
    }

    /// Value at mode `(k_x, k_y)` in integer mode units.
    pub fn at_mode(&self, mx: i64, my: i64) -> f64 {
        let nx = self.grid.nx() as i64;
        let ny = self.grid.ny() as i64;
        let i = mx.rem_euclid(nx) as usize;
        let j = my.rem_euclid(ny) as usize;
        self.hat[j * self.grid.nx() + i]
    }

    /// Total mass `integral J`.
    pub fn mass(&self) -> f64 {
        self.hat[0]
    }
}

/// FFT plans and wavenumber tables for one grid.
///
/// The Nyquist bin is given a zero wavenumber in first derivatives (the only
/// choice that keeps them real and skew-adjoint), and the Leray projection uses
/// the same effective wavenumbers so `div` of a projected field vanishes to
/// round-off.
pub struct Spectral {
    grid: TorusGrid,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    k2_eff: Vec<f64>,
    dealias: Vec<bool>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Clone for Spectral {
    fn clone(&self) -> Self {
        Spectral::new(self.grid)
    }
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        let (nx, ny) = (grid.nx(), grid.ny());
        let fft_x = planner.plan_fft_forward(nx);
        let ifft_x = planner.plan_fft_inverse(nx);
        let fft_y = planner.plan_fft_forward(ny);
        let ifft_y = planner.plan_fft_inverse(ny);

        let cx = 2.0 * PI / grid.lx();
        let cy = 2.0 * PI / grid.ly();
        let n = grid.len();
        let mut kx = Vec::with_capacity(n);
        let mut ky = Vec::with_capacity(n);
        let mut k2 = Vec::with_capacity(n);
        let mut k2_eff = Vec::with_capacity(n);
        let mut dealias = Vec::with_capacity(n);
        for j in 0..ny {
            let my = TorusGrid::signed_mode(j, ny);
            for i in 0..nx {
                let mx = TorusGrid::signed_mode(i, nx);
                let kx_true = cx * mx as f64;
                let ky_true = cy * my as f64;
                let kx_eff = if i == nx / 2 { 0.0 } else { kx_true };
                let ky_eff = if j == ny / 2 { 0.0 } else { ky_true };
                kx.push(kx_eff);
                ky.push(ky_eff);
                k2.push(kx_true * kx_true + ky_true * ky_true);
                k2_eff.push(kx_eff * kx_eff + ky_eff * ky_eff);
                dealias.push(3 * mx.unsigned_abs() < nx as u64 && 3 * my.unsigned_abs() < ny as u64);
            }
        }
        Self {
            grid,
            fft_x,
            ifft_x,
            fft_y,
            ifft_y,
            kx,
            ky,
            k2,
            k2_eff,
            dealias,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Squared wavenumber `|k|^2` per mode (Laplacian symbol is `-|k|^2`).
    pub fn k2(&self) -> &[f64] {
        &self.k2
    }

    pub(crate) fn k2_eff(&self) -> &[f64] {
        &self.k2_eff
    }

    /// Modes retained by the 2/3 rule.
    pub fn dealias_mask(&self) -> &[bool] {
        &self.dealias
    }

    // ---- raw transforms ----

    fn columns(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut t = vec![Complex64::default(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                t[i * ny + j] = buf[j * nx + i];
            }
        }
        plan.process(&mut t);
        for j in 0..ny {
            for i in 0..nx {
                buf[j * nx + i] = t[i * ny + j];
            }
        }
    }

    /// Unnormalized forward transform of real grid data.
    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.grid.len());
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_x.process(&mut buf);
        self.columns(&mut buf, &self.fft_y);
        buf
    }

    /// Inverse transform (normalized), keeping the real part.
    pub fn inverse(&self, mut hat: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(hat.len(), self.grid.len());
        self.ifft_x.process(&mut hat);
        self.columns(&mut hat, &self.ifft_y);
        let s = 1.0 / self.grid.len() as f64;
        hat.into_iter().map(|c| c.re * s).collect()
    }

    pub(crate) fn ddx_hat(&self, hat: &[Complex64]) -> Vec<Complex64> {
        hat.iter()
            .zip(&self.kx)
            .map(|(c, &k)| Complex64::new(-k * c.im, k * c.re))
            .collect()
    }

    pub(crate) fn ddy_hat(&self, hat: &[Complex64]) -> Vec<Complex64> {
        hat.iter()
            .zip(&self.ky)
            .map(|(c, &k)| Complex64::new(-k * c.im, k * c.re))
            .collect()
    }

    pub(crate) fn ddx(&self, hat: &[Complex64]) -> Vec<f64> {
        self.inverse(self.ddx_hat(hat))
    }

    pub(crate) fn ddy(&self, hat: &[Complex64]) -> Vec<f64> {
        self.inverse(self.ddy_hat(hat))
    }

    pub(crate) fn project_hat(&self, hx: &mut [Complex64], hy: &mut [Complex64]) {
        for m in 0..hx.len() {
            let k2 = self.k2_eff[m];
            if k2 > 0.0 {
                let (kx, ky) = (self.kx[m], self.ky[m]);
                let kdotv = hx[m] * kx + hy[m] * ky;
                hx[m] -= kdotv * (kx / k2);
                hy[m] -= kdotv * (ky / k2);
            }
        }
    }

    pub(crate) fn dealias_hat(&self, hat: &mut [Complex64]) {
        for (c, &keep) in hat.iter_mut().zip(&self.dealias) {
            if !keep {
                *c = Complex64::default();
            }
        }
    }

    /// Divergence of the flux `(fx, fy)` given on the grid, as grid values.
    pub(crate) fn div_raw(&self, fx: &[f64], fy: &[f64]) -> Vec<f64> {
        let hx = self.forward(fx);
        let hy = self.forward(fy);
        let mut out = self.ddx_hat(&hx);
        for (o, d) in out.iter_mut().zip(self.ddy_hat(&hy)) {
            *o += d;
        }
        self.inverse(out)
    }

    // ---- field-level operators ----

    fn check(&self, grid: &TorusGrid) -> Result<()> {
        self.grid.check_same(grid)
    }

    /// Exact spectral gradient.
    pub fn grad(&self, f: &ScalarField) -> Result<VectorField> {
        self.check(f.grid())?;
        let hat = self.forward(f.values());
        Ok(VectorField::from_vecs_unchecked(
            self.grid,
            self.ddx(&hat),
            self.ddy(&hat),
            false,
        ))
    }

    /// Spectral divergence.
    pub fn div(&self, v: &VectorField) -> Result<ScalarField> {
        self.check(v.grid())?;
        Ok(ScalarField::from_vec_unchecked(
            self.grid,
            self.div_raw(v.x(), v.y()),
        ))
    }

    /// Scalar vorticity `d_x v_y - d_y v_x`.
    pub fn curl2d(&self, v: &VectorField) -> Result<ScalarField> {
        self.check(v.grid())?;
        let hx = self.forward(v.x());
        let hy = self.forward(v.y());
        let mut out = self.ddx_hat(&hy);
        for (o, d) in out.iter_mut().zip(self.ddy_hat(&hx)) {
            *o -= d;
        }
        Ok(ScalarField::from_vec_unchecked(self.grid, self.inverse(out)))
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check(f.grid())?;
        let mut hat = self.forward(f.values());
        for (c, &k2) in hat.iter_mut().zip(&self.k2) {
            *c *= -k2;
        }
        Ok(ScalarField::from_vec_unchecked(self.grid, self.inverse(hat)))
    }

    /// Helmholtz-Hodge (Leray) projection onto divergence-free fields. The
    /// mean mode is left untouched.
    pub fn leray_project(&self, v: &VectorField) -> Result<VectorField> {
        self.check(v.grid())?;
        let mut hx = self.forward(v.x());
        let mut hy = self.forward(v.y());
        self.project_hat(&mut hx, &mut hy);
        Ok(VectorField::from_vecs_unchecked(
            self.grid,
            self.inverse(hx),
            self.inverse(hy),
            true,
        ))
    }

    /// Periodic convolution `J * f`.
    pub fn convolve(&self, kernel: &KernelTransform, f: &ScalarField) -> Result<ScalarField> {
        self.check(f.grid())?;
        self.check(kernel.grid())?;
        Ok(ScalarField::from_vec_unchecked(
            self.grid,
            self.convolve_raw(kernel, f.values()),
        ))
    }

    pub(crate) fn convolve_raw(&self, kernel: &KernelTransform, f: &[f64]) -> Vec<f64> {
        let mut hat = self.forward(f);
        for (c, &j) in hat.iter_mut().zip(&kernel.hat) {
            *c *= j;
        }
        self.inverse(hat)
    }

    /// Builds the transform of a kernel sampled at the grid nodes (node 0 is
    /// the origin), scaled by the quadrature weight.
    pub fn kernel_transform(&self, samples: &ScalarField) -> Result<KernelTransform> {
        self.check(samples.grid())?;
        let w = self.grid.cell_area();
        let hat = self
            .forward(samples.values())
            .into_iter()
            .map(|c| c.re * w)
            .collect();
        Ok(KernelTransform {
            grid: self.grid,
            hat,
        })
    }

    /// 2/3-rule truncation of a field.
    pub fn dealias(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check(f.grid())?;
        let mut hat = self.forward(f.values());
        self.dealias_hat(&mut hat);
        Ok(ScalarField::from_vec_unchecked(self.grid, self.inverse(hat)))
    }

    /// `||grad v||^2` (Frobenius norm of the velocity gradient).
    pub fn grad_norm_sq(&self, v: &VectorField) -> Result<f64> {
        self.check(v.grid())?;
        Ok(self.weighted_energy(v.x(), &self.k2_eff) + self.weighted_energy(v.y(), &self.k2_eff))
    }

    /// `||grad f||^2` for a scalar field.
    pub fn scalar_grad_norm_sq(&self, f: &ScalarField) -> Result<f64> {
        self.check(f.grid())?;
        Ok(self.weighted_energy(f.values(), &self.k2_eff))
    }

    /// Dual norm of `H^1` on the torus, `sum |f_k|^2 / (1 + |k|^2)`.
    pub fn dual_h1_norm_sq(&self, f: &ScalarField) -> Result<f64> {
        self.check(f.grid())?;
        let weights: Vec<f64> = self.k2.iter().map(|k2| 1.0 / (1.0 + k2)).collect();
        Ok(self.weighted_energy(f.values(), &weights))
    }

    fn weighted_energy(&self, data: &[f64], weights: &[f64]) -> f64 {
        let hat = self.forward(data);
        let s: f64 = hat
            .iter()
            .zip(weights)
            .map(|(c, w)| c.norm_sqr() * w)
            .sum();
        s * self.grid.cell_area() / self.grid.len() as f64
    }

    /// Inner product evaluated in transform space (Parseval).
    pub fn spectral_inner(&self, a: &ScalarField, b: &ScalarField) -> Result<f64> {
        self.check(a.grid())?;
        self.check(b.grid())?;
        let ha = self.forward(a.values());
        let hb = self.forward(b.values());
        let s: f64 = ha.iter().zip(&hb).map(|(p, q)| (p * q.conj()).re).sum();
        Ok(s * self.grid.cell_area() / self.grid.len() as f64)
    }

    /// `||div v|| / ||grad v||`, zero for a constant field.
    pub fn relative_divergence(&self, v: &VectorField) -> Result<f64> {
        let div = self.div(v)?.norm();
        let g = self.grad_norm_sq(v)?.sqrt();
        Ok(if g > 0.0 { div / g } else { div })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> TorusGrid {
        TorusGrid::square(32).unwrap()
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::new(6, 8, 1.0, 1.0).is_err());
        assert!(TorusGrid::new(9, 8, 1.0, 1.0).is_err());
        assert!(TorusGrid::new(8, 8, 0.0, 1.0).is_err());
        assert!(TorusGrid::new(8, 8, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn poincare_constant_is_first_stokes_eigenvalue() {
        assert_eq!(TorusGrid::square(16).unwrap().poincare_constant(), 1.0);
        let g = TorusGrid::new(16, 16, 4.0 * PI, 2.0 * PI).unwrap();
        assert_relative_eq!(g.poincare_constant(), 0.25);
    }

    #[test]
    fn grad_single_mode_and_constant() {
        let g = grid();
        let sp = Spectral::new(g);
        let v = sp.grad(&ScalarField::from_fn(g, |x, _| x.sin())).unwrap();
        let cx = ScalarField::from_fn(g, |x, _| x.cos());
        assert!(max_err(v.x(), cx.values()) < 1e-13);
        assert!(v.y().iter().all(|a| a.abs() < 1e-13));

        let c = sp.grad(&ScalarField::constant(g, 3.0)).unwrap();
        assert!(c.max_speed() < 1e-13);
    }

    #[test]
    fn grad_product_mode_matches_pointwise_oracle() {
        let g = grid();
        let sp = Spectral::new(g);
        let f = ScalarField::from_fn(g, |x, y| x.sin() * (2.0 * y).cos());
        let v = sp.grad(&f).unwrap();
        let ex = ScalarField::from_fn(g, |x, y| x.cos() * (2.0 * y).cos());
        let ey = ScalarField::from_fn(g, |x, y| -2.0 * x.sin() * (2.0 * y).sin());
        assert!(max_err(v.x(), ex.values()) < 1e-12);
        assert!(max_err(v.y(), ey.values()) < 1e-12);
        assert!(v.x().iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn div_examples() {
        let g = grid();
        let sp = Spectral::new(g);
        let tg = VectorField::from_fn(g, |x, y| (x.sin() * y.cos(), -x.cos() * y.sin()));
        assert!(sp.div(&tg).unwrap().max_abs() < 1e-13);
        let c = VectorField::from_fn(g, |_, _| (1.5, -0.5));
        assert!(sp.div(&c).unwrap().max_abs() < 1e-13);
        let v = VectorField::from_fn(g, |x, y| (x.sin(), y.sin()));
        let expect = ScalarField::from_fn(g, |x, y| x.cos() + y.cos());
        assert!(max_err(sp.div(&v).unwrap().values(), expect.values()) < 1e-13);
    }

    #[test]
    fn curl_examples() {
        let g = grid();
        let sp = Spectral::new(g);
        let f = ScalarField::from_fn(g, |x, y| (x + 2.0 * y).sin() * (3.0 * x).cos());
        assert!(sp.curl2d(&sp.grad(&f).unwrap()).unwrap().max_abs() < 1e-12);
        let v = VectorField::from_fn(g, |_, y| (-y.sin(), 0.0));
        let expect = ScalarField::from_fn(g, |_, y| y.cos());
        assert!(max_err(sp.curl2d(&v).unwrap().values(), expect.values()) < 1e-13);
        let tg = VectorField::from_fn(g, |x, y| (x.sin() * y.cos(), -x.cos() * y.sin()));
        let expect = ScalarField::from_fn(g, |x, y| 2.0 * x.sin() * y.sin());
        assert!(max_err(sp.curl2d(&tg).unwrap().values(), expect.values()) < 1e-13);
    }

    #[test]
    fn leray_examples() {
        let g = grid();
        let sp = Spectral::new(g);
        let f = ScalarField::from_fn(g, |x, y| x.sin() * y.cos());
        assert!(sp.leray_project(&sp.grad(&f).unwrap()).unwrap().max_speed() < 1e-13);

        let tg = VectorField::from_fn(g, |x, y| (x.sin() * y.cos(), -x.cos() * y.sin()));
        let p = sp.leray_project(&tg).unwrap();
        assert!(p.divergence_free());
        assert!(p.max_abs_diff(&tg) < 1e-13);

        // sin x e_x and sin y e_y are purely longitudinal modes.
        let v = VectorField::from_fn(g, |x, y| (x.sin(), y.sin()));
        assert!(sp.leray_project(&v).unwrap().max_speed() < 1e-13);

        // The mean flow passes through unchanged.
        let m = VectorField::from_fn(g, |x, _| (0.7 + x.sin(), -0.2));
        let pm = sp.leray_project(&m).unwrap();
        assert_relative_eq!(pm.x().iter().sum::<f64>() / g.len() as f64, 0.7, epsilon = 1e-14);
        assert_relative_eq!(pm.y().iter().sum::<f64>() / g.len() as f64, -0.2, epsilon = 1e-14);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let sp = Spectral::new(grid());
        let other = ScalarField::zeros(TorusGrid::square(16).unwrap());
        assert!(matches!(sp.grad(&other), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = TorusGrid::square(8).unwrap();
        let mut v = vec![0.0; 64];
        v[3] = f64::INFINITY;
        assert!(matches!(ScalarField::new(g, v), Err(Error::NonFinite(_))));
    }
}
