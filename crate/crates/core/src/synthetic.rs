//! Built-in fields for targets, initial data and test directions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::{ScalarField, Spectral, TorusGrid, VectorField};

/// Taylor-Green vortex `A (sin x cos y, -cos x sin y)` in the lowest modes of
/// the box.
pub fn taylor_green(grid: TorusGrid, amplitude: f64) -> VectorField {
    let kx = 2.0 * std::f64::consts::PI / grid.lx();
    let ky = 2.0 * std::f64::consts::PI / grid.ly();
    let (x, y) = VectorField::from_fn(grid, |x, y| {
        (
            amplitude * (kx * x).sin() * (ky * y).cos(),
            -amplitude * (kx * x).cos() * (ky * y).sin() * kx / ky,
        )
    })
    .into_components();
    VectorField::from_vecs_unchecked(grid, x, y, true)
}

/// Divergence-free shear wave `A (-m_y, m_x)/|m| cos(k . x)` for integer mode
/// numbers `(m_x, m_y)`.
pub fn single_mode(grid: TorusGrid, mx: i32, my: i32, amplitude: f64) -> VectorField {
    let kx = 2.0 * std::f64::consts::PI / grid.lx() * mx as f64;
    let ky = 2.0 * std::f64::consts::PI / grid.ly() * my as f64;
    let norm = (kx * kx + ky * ky).sqrt().max(f64::MIN_POSITIVE);
    let (x, y) = VectorField::from_fn(grid, |x, y| {
        let c = amplitude * (kx * x + ky * y).cos();
        (-ky / norm * c, kx / norm * c)
    })
    .into_components();
    VectorField::from_vecs_unchecked(grid, x, y, true)
}

/// Random zero-mean divergence-free field built from a streamfunction with
/// Gaussian coefficients on modes `1 <= |m|_inf <= max_mode`, normalized to
/// unit `L^2` norm.
pub fn random_divergence_free(spectral: &Spectral, seed: u64, max_mode: i32) -> VectorField {
    let grid = *spectral.grid();
    let psi = random_scalar(grid, seed, max_mode);
    let g = spectral.grad(&psi).expect("same grid");
    let (gx, gy) = g.into_components();
    let v = VectorField::from_vecs_unchecked(grid, gy, gx.into_iter().map(|v| -v).collect(), true);
    let v = spectral.leray_project(&v).expect("same grid");
    let n = v.norm();
    v.scale(1.0 / n)
}

/// Random zero-mean smooth scalar field with unit `L^2` norm.
pub fn random_scalar(grid: TorusGrid, seed: u64, max_mode: i32) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kx0 = 2.0 * std::f64::consts::PI / grid.lx();
    let ky0 = 2.0 * std::f64::consts::PI / grid.ly();
    let mut modes = Vec::new();
    for mx in 0..=max_mode {
        for my in -max_mode..=max_mode {
            if mx == 0 && my <= 0 {
                continue;
            }
            let decay = 1.0 / (1.0 + (mx * mx + my * my) as f64);
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            modes.push((kx0 * mx as f64, ky0 * my as f64, a * decay, b * decay));
        }
    }
    let f = ScalarField::from_fn(grid, |x, y| {
        modes
            .iter()
            .map(|&(kx, ky, a, b)| {
                let th = kx * x + ky * y;
                a * th.cos() + b * th.sin()
            })
            .sum()
    });
    let n = f.norm();
    f.scale(1.0 / n)
}
