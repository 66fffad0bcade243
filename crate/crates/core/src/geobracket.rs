//! Geometric brackets built on a structure function `s`.
//!
//! Inside every bracket `s` stands for the multiplication operator `M_s`,
//! and products such as `[a,b] s` compose on the right.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{QgrError, Result};
use crate::grid::{expectation, Grid, WaveFunction};
use crate::op_algebra::{
    anticommutator_ir, build_derivative, build_multiplication_real, commutator_cr, compose,
    max_diff, same_grid, DerivativeScheme, Operator, C64,
};

/// Norms below this are treated as zero and the absolute residual decides.
pub const NORM_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    NumericDifferentiated,
}

/// Real samples of `s` with its first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureFunction {
    grid: Grid,
    s: Array1<f64>,
    s1: Array1<f64>,
    s2: Array1<f64>,
    provenance: Provenance,
}

impl StructureFunction {
    pub fn analytic(grid: &Grid, s: Array1<f64>, s1: Array1<f64>, s2: Array1<f64>) -> Result<Self> {
        for (name, v) in [("s", &s), ("s'", &s1), ("s''", &s2)] {
            if v.len() != grid.n() {
                return Err(QgrError::LengthMismatch {
                    expected: grid.n(),
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(QgrError::NonFinite(name));
            }
        }
        Ok(StructureFunction {
            grid: *grid,
            s,
            s1,
            s2,
            provenance: Provenance::Analytic,
        })
    }

    pub fn from_fns(
        grid: &Grid,
        f: impl Fn(f64) -> f64,
        f1: impl Fn(f64) -> f64,
        f2: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        Self::analytic(grid, grid.sample(f), grid.sample(f1), grid.sample(f2))
    }

    pub fn zero(grid: &Grid) -> Self {
        let z = Array1::zeros(grid.n());
        StructureFunction {
            grid: *grid,
            s: z.clone(),
            s1: z.clone(),
            s2: z,
            provenance: Provenance::Analytic,
        }
    }

    /// Tabulated `s`; derivatives come from the derivative matrix.
    pub fn numeric(grid: &Grid, s: Array1<f64>, scheme: DerivativeScheme) -> Result<Self> {
        if s.len() != grid.n() {
            return Err(QgrError::LengthMismatch {
                expected: grid.n(),
                got: s.len(),
            });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(QgrError::NonFinite("s"));
        }
        let d = build_derivative(grid, scheme)?;
        let diff = |v: &Array1<f64>| d.apply(&v.mapv(|x| C64::new(x, 0.0))).mapv(|z| z.re);
        let s1 = diff(&s);
        let s2 = diff(&s1);
        Ok(StructureFunction {
            grid: *grid,
            s,
            s1,
            s2,
            provenance: Provenance::NumericDifferentiated,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn s(&self) -> &Array1<f64> {
        &self.s
    }

    pub fn s1(&self) -> &Array1<f64> {
        &self.s1
    }

    pub fn s2(&self) -> &Array1<f64> {
        &self.s2
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_zero(&self) -> bool {
        self.s.iter().all(|&v| v == 0.0)
    }

    /// `M_s`.
    pub fn multiplication(&self) -> Operator {
        build_multiplication_real(&self.grid, &self.s)
            .expect("structure samples are validated")
            .with_label("s")
    }

    /// Re-differentiate `s` numerically and compare with the stored `s'`
    /// on the interior.
    pub fn derivative_consistency(
        &self,
        scheme: DerivativeScheme,
        tol: f64,
    ) -> Result<IdentityResidual> {
        let d = build_derivative(&self.grid, scheme)?;
        let lhs = d.apply(&self.s.mapv(|x| C64::new(x, 0.0)));
        let rhs = self.s1.mapv(|x| C64::new(x, 0.0));
        Ok(IdentityResidual::states(
            "s' consistency",
            ResidualKind::Continuum,
            &self.grid,
            &lhs,
            &rhs,
            tol,
        ))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    Algebraic,
    Continuum,
}

/// Outcome of one identity check. `rel_residual` divides by the larger of
/// the two side norms (and any supplied term scale); when both sides are
/// below [`NORM_FLOOR`] the absolute residual is compared instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub name: String,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub tolerance: f64,
    pub kind: ResidualKind,
    pub pass: bool,
}

impl IdentityResidual {
    pub fn evaluate(
        name: impl Into<String>,
        kind: ResidualKind,
        lhs_norm: f64,
        rhs_norm: f64,
        scale: f64,
        abs_residual: f64,
        tolerance: f64,
    ) -> Self {
        let denom = lhs_norm.max(rhs_norm).max(scale);
        let (rel_residual, pass) = if lhs_norm.max(rhs_norm) < NORM_FLOOR {
            (abs_residual, abs_residual <= tolerance)
        } else {
            let rel = abs_residual / denom;
            (rel, rel <= tolerance)
        };
        // NaN residuals never pass
        let pass = pass && abs_residual.is_finite();
        IdentityResidual {
            name: name.into(),
            lhs_norm,
            rhs_norm,
            abs_residual,
            rel_residual,
            tolerance,
            kind,
            pass,
        }
    }

    pub fn operators(
        name: impl Into<String>,
        lhs: &Operator,
        rhs: &Operator,
        tolerance: f64,
    ) -> Self {
        Self::evaluate(
            name,
            ResidualKind::Algebraic,
            lhs.max_norm(),
            rhs.max_norm(),
            0.0,
            max_diff(lhs, rhs),
            tolerance,
        )
    }

    /// State-level check; continuum kinds only look at the grid interior.
    pub fn states(
        name: impl Into<String>,
        kind: ResidualKind,
        grid: &Grid,
        lhs: &Array1<C64>,
        rhs: &Array1<C64>,
        tolerance: f64,
    ) -> Self {
        let range = match kind {
            ResidualKind::Continuum => grid.interior(),
            ResidualKind::Algebraic => 0..grid.n(),
        };
        let mut ln = 0.0f64;
        let mut rn = 0.0f64;
        let mut diff = 0.0f64;
        for i in range {
            ln = ln.max(lhs[i].norm());
            rn = rn.max(rhs[i].norm());
            diff = diff.max((lhs[i] - rhs[i]).norm());
        }
        Self::evaluate(name, kind, ln, rn, 0.0, diff, tolerance)
    }

    /// Scalar identity; `scale` is the magnitude of the largest term that
    /// entered either side, so cancellation does not inflate the ratio.
    pub fn scalars(
        name: impl Into<String>,
        lhs: C64,
        rhs: C64,
        scale: f64,
        tolerance: f64,
    ) -> Self {
        Self::evaluate(
            name,
            ResidualKind::Algebraic,
            lhs.norm(),
            rhs.norm(),
            scale,
            (lhs - rhs).norm(),
            tolerance,
        )
    }

    /// Inequality `slack ≥ -tolerance`, recorded with the violation as residual.
    pub fn inequality(name: impl Into<String>, slack: f64, tolerance: f64) -> Self {
        let violation = if slack.is_nan() {
            f64::NAN
        } else {
            (-slack).max(0.0)
        };
        Self::evaluate(
            name,
            ResidualKind::Algebraic,
            0.0,
            0.0,
            0.0,
            violation,
            tolerance,
        )
    }
}

fn check_s(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<Operator> {
    same_grid(a, b)?;
    if s.grid() != a.grid() {
        return Err(QgrError::GridMismatch);
    }
    Ok(s.multiplication())
}

/// `G(s,a,b) = a[s,b] - b[s,a]`.
pub fn geomutator(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<Operator> {
    let ms = check_s(s, a, b)?;
    let sb = commutator_cr(&ms, b)?;
    let sa = commutator_cr(&ms, a)?;
    let g = compose(a, &sb)?.minus(&compose(b, &sa)?)?;
    Ok(g.with_label(format!("G({},{})", a.label(), b.label())))
}

/// `[a,b]_cr + G(s,a,b)`.
pub fn ggc_bracket(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<Operator> {
    let c = commutator_cr(a, b)?;
    let g = geomutator(s, a, b)?;
    Ok(c.plus(&g)?
        .with_label(format!("[{},{}]_s", a.label(), b.label())))
}

/// `Z(s,a,b) = a{s,b} + b{s,a}`.
pub fn anti_geomutator(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<Operator> {
    let ms = check_s(s, a, b)?;
    let sb = anticommutator_ir(&ms, b)?;
    let sa = anticommutator_ir(&ms, a)?;
    let z = compose(a, &sb)?.plus(&compose(b, &sa)?)?;
    Ok(z.with_label(format!("Z({},{})", a.label(), b.label())))
}

/// `{a,b}_ir + Z(s,a,b)`.
pub fn gac_bracket(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<Operator> {
    let c = anticommutator_ir(a, b)?;
    let z = anti_geomutator(s, a, b)?;
    Ok(c.plus(&z)?
        .with_label(format!("{{{},{}}}_s", a.label(), b.label())))
}

fn sandwiches(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<(Operator, Operator)> {
    let ms = check_s(s, a, b)?;
    let asb = compose(a, &compose(&ms, b)?)?;
    let bsa = compose(b, &compose(&ms, a)?)?;
    Ok((asb, bsa))
}

/// `asb - bsa`.
pub fn sandwich_asym(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<Operator> {
    let (asb, bsa) = sandwiches(s, a, b)?;
    Ok(asb
        .minus(&bsa)?
        .with_label(format!("<{}:s:{}>", a.label(), b.label())))
}

/// `asb + bsa`.
pub fn sandwich_sym(s: &StructureFunction, a: &Operator, b: &Operator) -> Result<Operator> {
    let (asb, bsa) = sandwiches(s, a, b)?;
    Ok(asb
        .plus(&bsa)?
        .with_label(format!("({}:s:{})", a.label(), b.label())))
}

/// Does the pair covariant-commute on `psi`? Residual of `[a,b]_s psi` against zero.
pub fn equilibrium_residual(
    s: &StructureFunction,
    a: &Operator,
    b: &Operator,
    psi: &WaveFunction,
    tolerance: f64,
) -> Result<IdentityResidual> {
    let g = ggc_bracket(s, a, b)?;
    if g.grid() != psi.grid() {
        return Err(QgrError::GridMismatch);
    }
    let lhs = g.apply(psi.amplitudes());
    let zero = Array1::zeros(lhs.len());
    Ok(IdentityResidual::states(
        "covariant equilibrium",
        ResidualKind::Algebraic,
        psi.grid(),
        &lhs,
        &zero,
        tolerance,
    ))
}

/// Expectation moduli entering the bracket triangle inequalities, with
/// each inequality's slack (nonnegative when it holds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketBounds {
    pub ggc_abs: f64,
    pub qpb_abs: f64,
    pub g_abs: f64,
    pub a_sb_abs: f64,
    pub b_sa_abs: f64,
    /// `|<qpb>| + |<G>| - |<ggc>|`
    pub slack_upper: f64,
    /// `|<a[s,b]>| + |<b[s,a]>| - |<G>|`
    pub slack_geometric: f64,
    /// `|<qpb>| + |<a[s,b]>| + |<b[s,a]>| - |<ggc>|`
    pub slack_combined: f64,
    /// `|<ggc>| - (|<qpb>| - |<G>|)`
    pub slack_lower: f64,
}

impl BracketBounds {
    pub fn min_slack(&self) -> f64 {
        self.slack_upper
            .min(self.slack_geometric)
            .min(self.slack_combined)
            .min(self.slack_lower)
    }
}

pub fn bracket_bound_report(
    s: &StructureFunction,
    a: &Operator,
    b: &Operator,
    psi: &WaveFunction,
) -> Result<BracketBounds> {
    let ms = check_s(s, a, b)?;
    let qpb = commutator_cr(a, b)?;
    let a_sb = compose(a, &commutator_cr(&ms, b)?)?;
    let b_sa = compose(b, &commutator_cr(&ms, a)?)?;
    let e_qpb = expectation(&qpb, psi)?;
    let e_asb = expectation(&a_sb, psi)?;
    let e_bsa = expectation(&b_sa, psi)?;
    let e_g = e_asb - e_bsa;
    let e_ggc = e_qpb + e_g;
    let (ggc_abs, qpb_abs, g_abs) = (e_ggc.norm(), e_qpb.norm(), e_g.norm());
    let (a_sb_abs, b_sa_abs) = (e_asb.norm(), e_bsa.norm());
    Ok(BracketBounds {
        ggc_abs,
        qpb_abs,
        g_abs,
        a_sb_abs,
        b_sa_abs,
        slack_upper: qpb_abs + g_abs - ggc_abs,
        slack_geometric: a_sb_abs + b_sa_abs - g_abs,
        slack_combined: qpb_abs + a_sb_abs + b_sa_abs - ggc_abs,
        slack_lower: ggc_abs - (qpb_abs - g_abs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_packet, make_grid, Boundary, PhysicalConstants};
    use crate::op_algebra::{
        build_momentum_classical, build_multiplication_real, build_position, linear_combine,
    };

    fn setup() -> (Grid, StructureFunction) {
        let g = make_grid(-6.0, 6.0, 48, Boundary::Dirichlet).unwrap();
        let s = StructureFunction::from_fns(
            &g,
            |x| 0.3 * x.sin(),
            |x| 0.3 * x.cos(),
            |x| -0.3 * x.sin(),
        )
        .unwrap();
        (g, s)
    }

    #[test]
    fn functions_covariant_commute() {
        let (g, s) = setup();
        let f = build_multiplication_real(&g, &g.sample(|x| x * x)).unwrap();
        let h = build_multiplication_real(&g, &g.sample(|x| x.cos())).unwrap();
        assert_eq!(ggc_bracket(&s, &f, &h).unwrap().max_norm(), 0.0);
        assert_eq!(geomutator(&s, &f, &h).unwrap().max_norm(), 0.0);
        let psi = gaussian_packet(&g, 0.0, 0.0, 1.0, &PhysicalConstants::default()).unwrap();
        let r = equilibrium_residual(&s, &f, &h, &psi, 1e-10).unwrap();
        assert!(r.pass && r.abs_residual <= 1e-12);
    }

    #[test]
    fn canonical_pair_is_not_in_equilibrium() {
        let (g, _) = setup();
        let z = StructureFunction::zero(&g);
        let x = build_position(&g);
        let p = build_momentum_classical(&g, DerivativeScheme::Fd4, &PhysicalConstants::default())
            .unwrap();
        let psi = gaussian_packet(&g, 0.0, 0.0, 1.0, &PhysicalConstants::default()).unwrap();
        let r = equilibrium_residual(&z, &x, &p, &psi, 1e-10).unwrap();
        assert!(!r.pass);
        // roughly hbar * max|psi|
        let peak = psi.amplitudes().iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!((r.abs_residual - peak).abs() < 0.05 * peak);
    }

    #[test]
    fn zsx_is_diagonal() {
        let (g, s) = setup();
        let x = build_position(&g);
        let z = anti_geomutator(&s, &x, &x).unwrap();
        let want: Array1<f64> = g.points() * g.points() * s.s() * 4.0;
        let want = build_multiplication_real(&g, &want).unwrap();
        assert!(max_diff(&z, &want) < 1e-12);
        let gac = gac_bracket(&s, &x, &x).unwrap();
        let want = g.points().mapv(|v| 2.0 * v * v) * s.s().mapv(|v| 1.0 + 2.0 * v);
        assert!(max_diff(&gac, &build_multiplication_real(&g, &want).unwrap()) < 1e-12);
    }

    #[test]
    fn zero_structure_reduces_brackets() {
        let (g, _) = setup();
        let z = StructureFunction::zero(&g);
        let x = build_position(&g);
        let p = build_momentum_classical(&g, DerivativeScheme::Fd2, &PhysicalConstants::default())
            .unwrap();
        assert_eq!(
            max_diff(
                &ggc_bracket(&z, &x, &p).unwrap(),
                &commutator_cr(&x, &p).unwrap()
            ),
            0.0
        );
        assert_eq!(
            max_diff(
                &gac_bracket(&z, &x, &p).unwrap(),
                &anticommutator_ir(&x, &p).unwrap()
            ),
            0.0
        );
        assert_eq!(anti_geomutator(&z, &x, &p).unwrap().max_norm(), 0.0);
        assert_eq!(sandwich_sym(&z, &x, &p).unwrap().max_norm(), 0.0);
    }

    #[test]
    fn bounds_with_zero_structure_are_tight() {
        let (g, _) = setup();
        let z = StructureFunction::zero(&g);
        let x = build_position(&g);
        let p = build_momentum_classical(&g, DerivativeScheme::Fd4, &PhysicalConstants::default())
            .unwrap();
        let psi = gaussian_packet(&g, 0.0, 1.0, 1.0, &PhysicalConstants::default()).unwrap();
        let b = bracket_bound_report(&z, &x, &p, &psi).unwrap();
        assert_eq!(b.ggc_abs, b.qpb_abs);
        assert_eq!(b.g_abs, 0.0);
        assert_eq!(b.slack_lower, 0.0);
        let same = bracket_bound_report(&z, &x, &x, &psi).unwrap();
        assert_eq!(same.ggc_abs + same.qpb_abs + same.g_abs, 0.0);
    }

    #[test]
    fn numeric_structure_tracks_analytic() {
        let g = make_grid(-6.0, 6.0, 400, Boundary::Dirichlet).unwrap();
        let s = StructureFunction::numeric(&g, g.sample(|x| (-x * x).exp()), DerivativeScheme::Fd4)
            .unwrap();
        let exact = StructureFunction::from_fns(
            &g,
            |x| (-x * x).exp(),
            |x| -2.0 * x * (-x * x).exp(),
            |_| 0.0,
        )
        .unwrap();
        let r = exact
            .derivative_consistency(DerivativeScheme::Fd4, 1e-5)
            .unwrap();
        assert!(r.pass, "{r:?}");
        for i in g.interior() {
            assert!((s.s1()[i] - exact.s1()[i]).abs() < 1e-5);
        }
        assert_eq!(s.provenance(), Provenance::NumericDifferentiated);
    }

    #[test]
    fn residual_floor_uses_absolute() {
        let r =
            IdentityResidual::evaluate("t", ResidualKind::Algebraic, 0.0, 0.0, 0.0, 1e-20, 1e-12);
        assert!(r.pass);
        let r = IdentityResidual::evaluate(
            "t",
            ResidualKind::Algebraic,
            1.0,
            0.0,
            0.0,
            f64::NAN,
            1e-12,
        );
        assert!(!r.pass);
        let neg = IdentityResidual::inequality("t", -1e-3, 1e-10);
        assert!(!neg.pass);
        assert!(IdentityResidual::inequality("t", 0.5, 1e-10).pass);
    }

    #[test]
    fn geomutator_of_quadratic_structure_with_fd2() {
        // [M_s, D] ~ -s' as a continuum identity, so G(x^2, x, D) ~ -2x^2
        let g = make_grid(-4.0, 4.0, 801, Boundary::Dirichlet).unwrap();
        let s = StructureFunction::from_fns(&g, |x| x * x, |x| 2.0 * x, |_| 2.0).unwrap();
        let x = build_position(&g);
        let d = build_derivative(&g, DerivativeScheme::Fd2).unwrap();
        let gm = geomutator(&s, &x, &d).unwrap();
        let psi = gaussian_packet(&g, 0.0, 0.0, 1.0, &PhysicalConstants::default()).unwrap();
        let lhs = gm.apply(psi.amplitudes());
        let rhs = linear_combine(&[(
            C64::new(-1.0, 0.0),
            &build_multiplication_real(&g, &g.sample(|v| 2.0 * v * v)).unwrap(),
        )])
        .unwrap()
        .apply(psi.amplitudes());
        let r =
            IdentityResidual::states("G(x^2,x,D)", ResidualKind::Continuum, &g, &lhs, &rhs, 1e-3);
        assert!(r.pass, "{r:?}");
    }
}
