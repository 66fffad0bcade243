//! Uniform 1-D grids, wavefunctions and the Riemann-sum inner product.

use std::ops::Range;

use ndarray::Array1;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QgrError, Result};
use crate::op_algebra::Operator;

/// Tolerance on `|<psi|psi> - 1|` below which a state counts as normalized.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Dirichlet,
    Periodic,
}

/// Uniform sample domain. Dirichlet grids include both endpoints; periodic
/// grids omit `x_max` since it is identified with `x_min`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n: usize,
    h: f64,
    boundary: Boundary,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n: usize, boundary: Boundary) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(QgrError::InvalidRange { x_min, x_max });
        }
        if n < 8 {
            return Err(QgrError::TooSmall(n));
        }
        let len = x_max - x_min;
        let h = match boundary {
            Boundary::Dirichlet => len / (n - 1) as f64,
            Boundary::Periodic => len / n as f64,
        };
        Ok(Grid {
            x_min,
            x_max,
            n,
            h,
            boundary,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn point(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h
    }

    pub fn points(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n).map(|i| self.point(i)))
    }

    /// Evaluate `f` at every sample point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Array1<f64> {
        Array1::from_iter((0..self.n).map(|i| f(self.point(i))))
    }

    /// Indices with a 5% margin trimmed from each side; continuum checks
    /// are measured here so boundary stencils never enter.
    pub fn interior(&self) -> Range<usize> {
        let margin = (self.n as f64 * 0.05).ceil() as usize;
        margin..self.n - margin
    }
}

pub fn make_grid(x_min: f64, x_max: f64, n: usize, boundary: Boundary) -> Result<Grid> {
    Grid::new(x_min, x_max, n, boundary)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            hbar: 1.0,
            mass: 1.0,
        }
    }
}

impl PhysicalConstants {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(QgrError::InvalidConstant("hbar must be positive"));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(QgrError::InvalidConstant("mass must be positive"));
        }
        Ok(PhysicalConstants { hbar, mass })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    amplitudes: Array1<Complex64>,
    normalized: bool,
}

impl WaveFunction {
    /// Wrap raw amplitudes. The state is not rescaled; `is_normalized`
    /// reports whether it already has unit norm.
    pub fn new(grid: Grid, amplitudes: Array1<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.n() {
            return Err(QgrError::LengthMismatch {
                expected: grid.n(),
                got: amplitudes.len(),
            });
        }
        if amplitudes.iter().any(|z| !z.is_finite()) {
            return Err(QgrError::NonFinite("wavefunction amplitudes"));
        }
        let norm2 = grid.h() * amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let normalized = (norm2 - 1.0).abs() <= NORM_TOL;
        Ok(WaveFunction {
            grid,
            amplitudes,
            normalized,
        })
    }

    /// Rescale to unit norm.
    pub fn normalized(mut self) -> Result<Self> {
        let norm2 = self.norm_sqr();
        if norm2 <= 0.0 {
            return Err(QgrError::ZeroNorm);
        }
        let k = 1.0 / norm2.sqrt();
        self.amplitudes.mapv_inplace(|z| z * k);
        self.normalized = (self.norm_sqr() - 1.0).abs() <= NORM_TOL;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &Array1<Complex64> {
        &self.amplitudes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_sqr(&self) -> f64 {
        self.grid.h() * self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    /// Largest modulus among the first and last samples.
    pub fn edge_amplitude(&self) -> f64 {
        let n = self.amplitudes.len();
        self.amplitudes[0].norm().max(self.amplitudes[n - 1].norm())
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(QgrError::NotNormalized(self.norm_sqr()))
        }
    }
}

/// Normalized packet `exp(-(x-x0)^2 / (2 w^2)) exp(i p0 x / hbar)`.
pub fn gaussian_packet(
    grid: &Grid,
    x0: f64,
    p0: f64,
    width: f64,
    constants: &PhysicalConstants,
) -> Result<WaveFunction> {
    if !(width.is_finite() && width > 0.0) {
        return Err(QgrError::NonpositiveWidth(width));
    }
    let k = p0 / constants.hbar;
    let amps = Array1::from_iter((0..grid.n()).map(|i| {
        let x = grid.point(i);
        let env = (-(x - x0).powi(2) / (2.0 * width * width)).exp();
        Complex64::from_polar(env, k * x)
    }));
    WaveFunction::new(*grid, amps)?.normalized()
}

/// `h * sum(conj(phi_i) psi_i)`.
pub fn inner_product(phi: &WaveFunction, psi: &WaveFunction) -> Result<Complex64> {
    if phi.grid != psi.grid {
        return Err(QgrError::GridMismatch);
    }
    Ok(vec_inner(&phi.grid, &phi.amplitudes, &psi.amplitudes))
}

pub(crate) fn vec_inner(grid: &Grid, a: &Array1<Complex64>, b: &Array1<Complex64>) -> Complex64 {
    let s: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
    s * grid.h()
}

/// `<psi|op psi>`. Works on unnormalized states too; callers that need a
/// normalized state check `WaveFunction::is_normalized`.
pub fn expectation(op: &Operator, psi: &WaveFunction) -> Result<Complex64> {
    check_op_state(op, psi)?;
    let v = op.apply(psi.amplitudes());
    Ok(vec_inner(&psi.grid, &psi.amplitudes, &v))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variance {
    pub variance: Complex64,
    pub std_dev: Complex64,
}

/// `<op^2> - <op>^2` with its principal square root.
pub fn variance(op: &Operator, psi: &WaveFunction) -> Result<Variance> {
    check_op_state(op, psi)?;
    let v1 = op.apply(psi.amplitudes());
    let v2 = op.apply(&v1);
    let mean = vec_inner(&psi.grid, &psi.amplitudes, &v1);
    let second = vec_inner(&psi.grid, &psi.amplitudes, &v2);
    let variance = second - mean * mean;
    Ok(Variance {
        variance,
        std_dev: variance.sqrt(),
    })
}

pub(crate) fn check_op_state(op: &Operator, psi: &WaveFunction) -> Result<()> {
    if op.dim() != psi.grid.n() {
        return Err(QgrError::DimensionMismatch {
            expected: psi.grid.n(),
            got: op.dim(),
        });
    }
    if op.grid() != psi.grid() {
        return Err(QgrError::GridMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_follows_boundary() {
        let g = make_grid(-20.0, 20.0, 512, Boundary::Dirichlet).unwrap();
        assert_eq!(g.h(), 40.0 / 511.0);
        let p = make_grid(0.0, 1.0, 8, Boundary::Periodic).unwrap();
        assert_eq!(p.h(), 1.0 / 8.0);
        assert_eq!(p.point(7), 7.0 / 8.0);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(
            make_grid(1.0, 1.0, 16, Boundary::Dirichlet),
            Err(QgrError::InvalidRange { .. })
        ));
        assert_eq!(
            make_grid(0.0, 1.0, 7, Boundary::Periodic),
            Err(QgrError::TooSmall(7))
        );
    }

    #[test]
    fn interior_trims_five_percent() {
        let g = make_grid(0.0, 1.0, 100, Boundary::Dirichlet).unwrap();
        assert_eq!(g.interior(), 5..95);
    }

    #[test]
    fn gaussian_is_normalized_and_centered() {
        let g = make_grid(-20.0, 20.0, 512, Boundary::Dirichlet).unwrap();
        let psi = gaussian_packet(&g, 0.0, 0.0, 1.0, &PhysicalConstants::default()).unwrap();
        assert!(psi.is_normalized());
        let one = inner_product(&psi, &psi).unwrap();
        assert!((one - 1.0).norm() < 1e-12);
        assert!(psi.edge_amplitude() < 1e-10);
    }

    #[test]
    fn nonpositive_width_is_rejected() {
        let g = make_grid(-20.0, 20.0, 64, Boundary::Dirichlet).unwrap();
        let r = gaussian_packet(&g, 0.0, 0.0, -1.0, &PhysicalConstants::default());
        assert_eq!(r, Err(QgrError::NonpositiveWidth(-1.0)));
    }

    #[test]
    fn distant_packets_are_orthogonal() {
        let g = make_grid(-30.0, 30.0, 600, Boundary::Dirichlet).unwrap();
        let c = PhysicalConstants::default();
        let a = gaussian_packet(&g, -5.0, 0.0, 1.0, &c).unwrap();
        let b = gaussian_packet(&g, 5.0, 0.0, 1.0, &c).unwrap();
        // analytic overlap of unit-width packets 10 apart is exp(-25)
        let ov = inner_product(&a, &b).unwrap();
        assert!(ov.norm() < 1e-10);
        assert!((ov.re - (-25.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_detected() {
        let g1 = make_grid(-5.0, 5.0, 32, Boundary::Dirichlet).unwrap();
        let g2 = make_grid(-5.0, 5.0, 32, Boundary::Periodic).unwrap();
        let c = PhysicalConstants::default();
        let a = gaussian_packet(&g1, 0.0, 0.0, 1.0, &c).unwrap();
        let b = gaussian_packet(&g2, 0.0, 0.0, 1.0, &c).unwrap();
        assert_eq!(inner_product(&a, &b), Err(QgrError::GridMismatch));
    }

    #[test]
    fn constants_validate() {
        assert!(PhysicalConstants::new(0.0, 1.0).is_err());
        assert!(PhysicalConstants::new(1.0, -2.0).is_err());
        assert!(PhysicalConstants::new(0.5, 2.0).is_ok());
    }
}
