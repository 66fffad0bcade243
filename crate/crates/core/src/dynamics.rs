//! Covariant time-derivative operators. No time stepping: only the
//! operator-valued rates and their decomposition are computed.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{QgrError, Result};
use crate::geobracket::{ggc_bracket, IdentityResidual, ResidualKind, StructureFunction};
use crate::grid::{check_op_state, Grid, PhysicalConstants, WaveFunction};
use crate::op_algebra::{
    build_derivative, build_geomentum, build_momentum_classical, build_multiplication_real,
    commutator_cr, compose, same_grid, DerivativeScheme, Operator, C64,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KineticKind {
    #[default]
    Classical,
    Geomentum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub kinetic_kind: KineticKind,
    /// `V(x)` sampled on the grid
    pub potential: Array1<f64>,
    pub constants: PhysicalConstants,
}

/// `p^2 / 2m + M_V`.
pub fn build_hamiltonian(
    spec: &HamiltonianSpec,
    grid: &Grid,
    scheme: DerivativeScheme,
    s: &StructureFunction,
) -> Result<Operator> {
    if s.grid() != grid {
        return Err(QgrError::GridMismatch);
    }
    if spec.potential.iter().any(|v| !v.is_finite()) {
        return Err(QgrError::NonFinite("potential"));
    }
    let p = match spec.kinetic_kind {
        KineticKind::Classical => build_momentum_classical(grid, scheme, &spec.constants)?,
        KineticKind::Geomentum => build_geomentum(grid, scheme, s, &spec.constants)?,
    };
    let kinetic = compose(&p, &p)?.scaled(C64::new(0.5 / spec.constants.mass, 0.0));
    let v = build_multiplication_real(grid, &spec.potential)?;
    Ok(kinetic.plus(&v)?.with_label("H"))
}

fn check(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<()> {
    same_grid(a, b)?;
    if s.grid() != a.grid() {
        return Err(QgrError::GridMismatch);
    }
    Ok(())
}

/// `w = (1/i hbar) [M_s, H]`.
pub fn g_dynamics(
    s: &StructureFunction,
    h: &Operator,
    constants: &PhysicalConstants,
) -> Result<Operator> {
    check(s, h, h)?;
    let c = commutator_cr(&s.multiplication(), h)?;
    Ok(c.scaled(1.0 / (I * constants.hbar)).with_label("w"))
}

/// `(1/i hbar)([f,H] - H [M_s,f])`.
pub fn generalized_heisenberg_rhs(
    f: &Operator,
    h: &Operator,
    s: &StructureFunction,
    constants: &PhysicalConstants,
) -> Result<Operator> {
    check(s, f, h)?;
    let fh = commutator_cr(f, h)?;
    let hsf = compose(h, &commutator_cr(&s.multiplication(), f)?)?;
    Ok(fh.minus(&hsf)?.scaled(1.0 / (I * constants.hbar)))
}

/// `(1/i hbar) [f,H]_s`.
pub fn covariant_rhs(
    f: &Operator,
    h: &Operator,
    s: &StructureFunction,
    constants: &PhysicalConstants,
) -> Result<Operator> {
    check(s, f, h)?;
    Ok(ggc_bracket(s, f, h)?.scaled(1.0 / (I * constants.hbar)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// covariant = generalized Heisenberg + f∘w
    pub forward: IdentityResidual,
    /// covariant = generalized Heisenberg + w∘f (reported, usually fails)
    pub reversed: IdentityResidual,
}

pub fn decomposition_residual(
    f: &Operator,
    h: &Operator,
    s: &StructureFunction,
    constants: &PhysicalConstants,
    tol: f64,
) -> Result<Decomposition> {
    let cov = covariant_rhs(f, h, s, constants)?;
    let ghe = generalized_heisenberg_rhs(f, h, s, constants)?;
    let w = g_dynamics(s, h, constants)?;
    let fw = ghe.plus(&compose(f, &w)?)?;
    let wf = ghe.plus(&compose(&w, f)?)?;
    Ok(Decomposition {
        forward: IdentityResidual::operators("covariant = GHE + f∘w", &cov, &fw, tol),
        reversed: IdentityResidual::operators("covariant = GHE + w∘f", &cov, &wf, tol),
    })
}

/// For a free classical Hamiltonian, `w psi` against
/// `(1/i hbar)(hbar^2/2m)(2 s' psi' + s'' psi)`.
pub fn g_dynamics_free_residual(
    s: &StructureFunction,
    scheme: DerivativeScheme,
    constants: &PhysicalConstants,
    psi: &WaveFunction,
    tol: f64,
) -> Result<IdentityResidual> {
    let grid = *s.grid();
    let spec = HamiltonianSpec {
        kinetic_kind: KineticKind::Classical,
        potential: Array1::zeros(grid.n()),
        constants: *constants,
    };
    let h = build_hamiltonian(&spec, &grid, scheme, s)?;
    let w = g_dynamics(s, &h, constants)?;
    check_op_state(&w, psi)?;
    let d = build_derivative(&grid, scheme)?;
    let psi_v = psi.amplitudes();
    let dpsi = d.apply(psi_v);
    let k = constants.hbar * constants.hbar / (2.0 * constants.mass) / (I * constants.hbar);
    let rhs = (&dpsi * &s.s1().mapv(|v| C64::new(2.0 * v, 0.0))
        + psi_v * &s.s2().mapv(|v| C64::new(v, 0.0)))
        * k;
    let lhs = w.apply(psi_v);
    Ok(IdentityResidual::states(
        "w = (hbar/2im)(2s'D + s'')",
        ResidualKind::Continuum,
        &grid,
        &lhs,
        &rhs,
        tol,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{expectation, gaussian_packet, make_grid, Boundary};
    use crate::op_algebra::{build_position, max_diff};

    fn harmonic(g: &Grid) -> HamiltonianSpec {
        HamiltonianSpec {
            kinetic_kind: KineticKind::Classical,
            potential: g.sample(|x| 0.5 * x * x),
            constants: PhysicalConstants::default(),
        }
    }

    #[test]
    fn oscillator_ground_energy() {
        let g = make_grid(-10.0, 10.0, 256, Boundary::Dirichlet).unwrap();
        let z = StructureFunction::zero(&g);
        let h = build_hamiltonian(&harmonic(&g), &g, DerivativeScheme::Fd4, &z).unwrap();
        let psi = gaussian_packet(&g, 0.0, 0.0, 1.0, &PhysicalConstants::default()).unwrap();
        let e = expectation(&h, &psi).unwrap();
        assert!((e.re - 0.5).abs() < 1e-4 && e.im.abs() < 1e-12);
    }

    #[test]
    fn constant_structure_has_no_g_dynamics() {
        let g = make_grid(-5.0, 5.0, 40, Boundary::Dirichlet).unwrap();
        let s = StructureFunction::from_fns(&g, |_| 0.7, |_| 0.0, |_| 0.0).unwrap();
        let h = build_hamiltonian(&harmonic(&g), &g, DerivativeScheme::Fd2, &s).unwrap();
        let w = g_dynamics(&s, &h, &PhysicalConstants::default()).unwrap();
        assert!(w.max_norm() < 1e-12);
    }

    #[test]
    fn geomentum_kinetic_reduces() {
        let g = make_grid(-5.0, 5.0, 40, Boundary::Dirichlet).unwrap();
        let z = StructureFunction::zero(&g);
        let mut spec = harmonic(&g);
        let a = build_hamiltonian(&spec, &g, DerivativeScheme::Fd4, &z).unwrap();
        spec.kinetic_kind = KineticKind::Geomentum;
        let b = build_hamiltonian(&spec, &g, DerivativeScheme::Fd4, &z).unwrap();
        assert_eq!(max_diff(&a, &b), 0.0);
    }

    #[test]
    fn decomposition_prefers_f_then_w() {
        let g = make_grid(-6.0, 6.0, 48, Boundary::Dirichlet).unwrap();
        let s = StructureFunction::from_fns(&g, f64::sin, f64::cos, |x| -x.sin()).unwrap();
        let k = PhysicalConstants::default();
        let h = build_hamiltonian(&harmonic(&g), &g, DerivativeScheme::Fd4, &s).unwrap();
        let x = build_position(&g);
        let d = decomposition_residual(&x, &h, &s, &k, 1e-12).unwrap();
        assert!(d.forward.pass, "{:?}", d.forward);
        assert!(!d.reversed.pass);
    }

    #[test]
    fn self_rate_is_minus_h_w() {
        let g = make_grid(-6.0, 6.0, 48, Boundary::Dirichlet).unwrap();
        let s = StructureFunction::from_fns(
            &g,
            |x| 0.2 * x.sin(),
            |x| 0.2 * x.cos(),
            |x| -0.2 * x.sin(),
        )
        .unwrap();
        let k = PhysicalConstants::default();
        let h = build_hamiltonian(&harmonic(&g), &g, DerivativeScheme::Fd4, &s).unwrap();
        let ghe = generalized_heisenberg_rhs(&h, &h, &s, &k).unwrap();
        let w = g_dynamics(&s, &h, &k).unwrap();
        let want = compose(&h, &w).unwrap().scaled(C64::new(-1.0, 0.0));
        assert!(max_diff(&ghe, &want) <= 1e-12 * want.max_norm().max(1.0));
        let cov = covariant_rhs(&h, &h, &s, &k).unwrap();
        assert_eq!(cov.max_norm(), 0.0);
    }

    #[test]
    fn free_g_dynamics_matches_product_rule() {
        let g = make_grid(-10.0, 10.0, 400, Boundary::Dirichlet).unwrap();
        let s = StructureFunction::from_fns(
            &g,
            |x| 0.1 * x.sin(),
            |x| 0.1 * x.cos(),
            |x| -0.1 * x.sin(),
        )
        .unwrap();
        let k = PhysicalConstants::default();
        let psi = gaussian_packet(&g, 0.0, 1.0, 1.0, &k).unwrap();
        let r = g_dynamics_free_residual(&s, DerivativeScheme::Fd4, &k, &psi, 1e-4).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
