//! Geometric lifts, generalized variances and the QGR report.
//!
//! Two readings of the interaction term `u = X s` are supported
//! ([`LiftMode`]), and two evaluations of `<f|g>` ([`InnerProductMode`]).
//! The report computes the `Gamma` split from the direct lifted inner
//! products and separately from the bracket formulas, so the two can be
//! checked against each other.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{QgrError, Result};
use crate::geobracket::{
    gac_bracket, ggc_bracket, IdentityResidual, ResidualKind, StructureFunction,
};
use crate::grid::{check_op_state, vec_inner, Grid, PhysicalConstants, WaveFunction};
use crate::op_algebra::{
    anticommutator_ir, build_derivative, build_geomentum, build_momentum_classical,
    build_multiplication, build_multiplication_real, build_position, commutator_cr, compose,
    linear_combine, same_grid, DerivativeScheme, Operator, C64,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum LiftMode {
    /// `u = X ∘ M_s`
    #[default]
    Composition,
    /// `u = M_{X[s]}`, X applied to the samples of `s`
    Function,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum InnerProductMode {
    /// `<f|g>` read as `<psi| dA dB psi>`
    #[default]
    #[serde(rename = "paper-literal")]
    Literal,
    /// `<f|g>` as a vector inner product of `f = dA psi`, `g = dB psi`
    AdjointConsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Modes {
    #[serde(default)]
    pub lift: LiftMode,
    #[serde(default)]
    pub inner_product: InnerProductMode,
}

#[derive(Clone, Debug)]
pub struct Lift {
    pub lifted: Operator,
    pub u: Operator,
}

pub fn geometric_lift(x: &Operator, s: &StructureFunction, mode: LiftMode) -> Result<Lift> {
    if x.grid() != s.grid() {
        return Err(QgrError::GridMismatch);
    }
    let grid = *x.grid();
    match mode {
        LiftMode::Composition => {
            let ms = s.multiplication();
            let u = compose(x, &ms)?;
            let one_plus = build_multiplication_real(&grid, &s.s().mapv(|v| 1.0 + v))?;
            let lifted = compose(x, &one_plus)?;
            Ok(Lift {
                lifted: lifted.with_label(format!("{}^s", x.label())),
                u: u.with_label(format!("{}s", x.label())),
            })
        }
        LiftMode::Function => {
            let xs = x.apply(&s.s().mapv(c));
            let u = build_multiplication(&grid, &xs)?.with_label(format!("{}[s]", x.label()));
            let lifted = x.plus(&u)?.with_label(format!("{}^s", x.label()));
            Ok(Lift { lifted, u })
        }
    }
}

// Shorthand for expectations against one fixed state.
struct Probe<'a> {
    grid: &'a Grid,
    psi: &'a Array1<C64>,
}

impl<'a> Probe<'a> {
    fn new(psi: &'a WaveFunction) -> Self {
        Probe {
            grid: psi.grid(),
            psi: psi.amplitudes(),
        }
    }

    fn ev(&self, v: &Array1<C64>) -> C64 {
        vec_inner(self.grid, self.psi, v)
    }

    fn dot(&self, a: &Array1<C64>, b: &Array1<C64>) -> C64 {
        vec_inner(self.grid, a, b)
    }

    fn mean(&self, op: &Operator) -> C64 {
        self.ev(&op.apply(self.psi))
    }

    /// `<psi| a b psi>`
    fn ev2(&self, a: &Operator, b: &Operator) -> C64 {
        self.ev(&a.apply(&b.apply(self.psi)))
    }

    /// `(op - <op>) psi`
    fn centered(&self, op: &Operator) -> Array1<C64> {
        let v = op.apply(self.psi);
        let m = self.ev(&v);
        &v - &(self.psi * m)
    }

    fn variance_literal(&self, op: &Operator) -> C64 {
        let m = self.mean(op);
        self.ev2(op, op) - m * m
    }

    fn variance_adjoint(&self, op: &Operator) -> C64 {
        let d = self.centered(op);
        c(self.dot(&d, &d).re)
    }

    fn rho_literal(&self, x: &Operator, u: &Operator) -> C64 {
        let ub = self.mean(u);
        let xb = self.mean(x);
        let sigma_u = self.ev2(u, u) - ub * ub;
        sigma_u - 2.0 * ub * xb + self.ev2(x, u) + self.ev2(u, x)
    }

    fn rho_adjoint(&self, x: &Operator, u: &Operator) -> C64 {
        let dx = self.centered(x);
        let du = self.centered(u);
        c(self.dot(&du, &du).re + 2.0 * self.dot(&dx, &du).re)
    }
}

fn check_normalized(psi: &WaveFunction) -> Result<()> {
    psi.require_normalized()
}

fn check_pair(a: &Operator, b: &Operator, s: &StructureFunction, psi: &WaveFunction) -> Result<()> {
    same_grid(a, b)?;
    if s.grid() != a.grid() {
        return Err(QgrError::GridMismatch);
    }
    check_op_state(a, psi)
}

/// Generalized variance in both inner-product readings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedVariance {
    /// value for the requested mode
    pub value: C64,
    pub literal: C64,
    pub adjoint: C64,
}

pub fn generalized_variance(
    x: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    modes: Modes,
) -> Result<GeneralizedVariance> {
    check_pair(x, x, s, psi)?;
    let lift = geometric_lift(x, s, modes.lift)?;
    let p = Probe::new(psi);
    let literal = p.variance_literal(&lift.lifted);
    let adjoint = p.variance_adjoint(&lift.lifted);
    let value = match modes.inner_product {
        InnerProductMode::Literal => literal,
        InnerProductMode::AdjointConsistent => adjoint,
    };
    Ok(GeneralizedVariance {
        value,
        literal,
        adjoint,
    })
}

/// `rho(X,s)`. Literal: `sigma_u^2 - 2 u X + <{X,u}>`. Adjoint: the
/// same gap measured with vector norms, `|du psi|^2 + 2 Re <dX psi|du psi>`.
pub fn entanglement_rho(
    x: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    modes: Modes,
) -> Result<C64> {
    check_pair(x, x, s, psi)?;
    let lift = geometric_lift(x, s, modes.lift)?;
    let p = Probe::new(psi);
    Ok(match modes.inner_product {
        InnerProductMode::Literal => p.rho_literal(x, &lift.u),
        InnerProductMode::AdjointConsistent => p.rho_adjoint(x, &lift.u),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTerms {
    pub j: C64,
    pub theta: C64,
    pub vartheta: C64,
}

/// `J`, `theta`, `vartheta`. With `independent_uv` the product `<uv>` is
/// replaced by `<u><v>`.
pub fn cross_terms(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    lift: LiftMode,
    independent_uv: bool,
) -> Result<CrossTerms> {
    check_pair(a, b, s, psi)?;
    let la = geometric_lift(a, s, lift)?;
    let lb = geometric_lift(b, s, lift)?;
    let p = Probe::new(psi);
    Ok(cross_from(
        &p,
        a,
        b,
        &la.u,
        &lb.u,
        &s.multiplication(),
        independent_uv,
    ))
}

fn cross_from(
    p: &Probe,
    a: &Operator,
    b: &Operator,
    u: &Operator,
    v: &Operator,
    ms: &Operator,
    indep: bool,
) -> CrossTerms {
    let (ab, bb, ub, vb) = (p.mean(a), p.mean(b), p.mean(u), p.mean(v));
    let uv = if indep { ub * vb } else { p.ev2(u, v) };
    let j = uv - ub * vb - ub * bb - vb * ab;
    let theta = uv - (ab + ub) * (bb + vb);
    // -i <[A,B] M_s>
    let spsi = ms.apply(p.psi);
    let comm = p.ev(&a.apply(&b.apply(&spsi))) - p.ev(&b.apply(&a.apply(&spsi)));
    CrossTerms {
        j,
        theta,
        vartheta: -I * comm,
    }
}

/// `Theta = rho_A sigma_B^2 + sigma_A^2 rho_B + rho_A rho_B` in the
/// requested mode.
pub fn big_theta(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    modes: Modes,
) -> Result<C64> {
    let r = qgr_core(
        a,
        b,
        s,
        psi,
        QgrOptions {
            modes,
            ..Default::default()
        },
    )?;
    Ok(r.theta_big)
}

/// `(Gamma_po, Gamma_ne)` for the requested mode, from the lifted inner products.
pub fn gamma_terms(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    modes: Modes,
) -> Result<(C64, C64)> {
    let r = qgr_core(
        a,
        b,
        s,
        psi,
        QgrOptions {
            modes,
            ..Default::default()
        },
    )?;
    Ok((r.gamma_po, r.gamma_ne))
}

/// `(Xi, epsilon)` with `Xi = |Gamma_po|^2 + |Gamma_ne|^2` and
/// `epsilon = Sigma_A^2 Sigma_B^2 - Xi`.
pub fn xi_and_epsilon(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    modes: Modes,
) -> Result<(C64, C64)> {
    let r = qgr_core(
        a,
        b,
        s,
        psi,
        QgrOptions {
            modes,
            ..Default::default()
        },
    )?;
    Ok((r.xi, r.epsilon))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchrodingerTerms {
    pub n1: C64,
    pub n2: C64,
    pub delta_fg: C64,
    pub robertson_c: f64,
}

/// Relative hermiticity tolerance for inputs that must be observables.
pub const HERMITIAN_INPUT_TOL: f64 = 1e-10;

pub fn schrodinger_terms(
    a: &Operator,
    b: &Operator,
    psi: &WaveFunction,
) -> Result<SchrodingerTerms> {
    same_grid(a, b)?;
    check_op_state(a, psi)?;
    for op in [a, b] {
        if !op.is_hermitian_within(HERMITIAN_INPUT_TOL) {
            return Err(QgrError::NonHermitianInput(op.label().to_string()));
        }
    }
    Ok(schrodinger_from(&Probe::new(psi), a, b))
}

fn schrodinger_from(p: &Probe, a: &Operator, b: &Operator) -> SchrodingerTerms {
    let (am, bm) = (p.mean(a), p.mean(b));
    let ab = p.ev2(a, b);
    let ba = p.ev2(b, a);
    let n1 = 0.5 * (ab + ba) - am * bm;
    let n2 = (ab - ba) / (2.0 * I);
    let delta_fg = p.variance_literal(a) * p.variance_literal(b) - n1 * n1 - n2 * n2;
    SchrodingerTerms {
        n1,
        n2,
        delta_fg,
        robertson_c: (ab - ba).norm() / 2.0,
    }
}

/// `<A^2><B^2> >= (<C>^2 + <D>^2)/4` with `iC = [A,B]` and `D = {A,B}`,
/// recorded as an inequality on the slack.
pub fn product_moment_bound(
    a: &Operator,
    b: &Operator,
    psi: &WaveFunction,
    tol: f64,
) -> Result<IdentityResidual> {
    same_grid(a, b)?;
    check_op_state(a, psi)?;
    let p = Probe::new(psi);
    let (ab, ba) = (p.ev2(a, b), p.ev2(b, a));
    let c_mean = (-I * (ab - ba)).re;
    let d_mean = (ab + ba).re;
    let slack = (p.ev2(a, a) * p.ev2(b, b)).re - 0.25 * (c_mean * c_mean + d_mean * d_mean);
    Ok(IdentityResidual::inequality(
        "<A^2><B^2> >= (<C>^2 + <D>^2)/4",
        slack,
        tol,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QgrOptions {
    pub modes: Modes,
    /// Replace `<uv>` by `<u><v>` (mutual-independence simplification).
    pub independent_uv: bool,
    pub tolerance: f64,
}

impl Default for QgrOptions {
    fn default() -> Self {
        QgrOptions {
            modes: Modes::default(),
            independent_uv: false,
            tolerance: 1e-10,
        }
    }
}

/// Imaginary parts that vanish when the lifted operators are Hermitian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiticityDefects {
    pub gamma_po_im: f64,
    pub gamma_ne_im: f64,
    pub sigma2_a_im: f64,
    pub sigma2_b_im: f64,
    pub big_sigma2_a_im: f64,
    pub big_sigma2_b_im: f64,
}

impl HermiticityDefects {
    pub fn max_abs(&self) -> f64 {
        [
            self.gamma_po_im,
            self.gamma_ne_im,
            self.sigma2_a_im,
            self.sigma2_b_im,
            self.big_sigma2_a_im,
            self.big_sigma2_b_im,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Cross-mode quantities kept for inspection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QgrDiagnostics {
    pub mean_a: C64,
    pub mean_b: C64,
    /// `<psi| dA^s dB^s psi>`
    pub direct_p: C64,
    /// `<psi| dB^s dA^s psi>`
    pub direct_q: C64,
    /// `<dA^s psi | dB^s psi>`
    pub inner_fg: C64,
    /// bracket-formula Gamma: `<GAC>/2 + theta`, `<GGC>/2i + vartheta`
    pub gamma_po_formula: C64,
    pub gamma_ne_formula: C64,
    pub epsilon_literal: C64,
    pub epsilon_adjoint: C64,
    pub epsilon_mode_difference: C64,
    /// `Sigma^2 Sigma^2 - |<psi|dA^s dB^s psi>|^2`, the literal reading of
    /// the external disturbance without the Gamma split
    pub epsilon_direct_modulus: C64,
    /// `|Gamma_po|^2 + |Gamma_ne|^2 - |P|^2` in the literal reading
    pub split_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct QgrReport {
    pub modes: Modes,
    pub independent_uv: bool,
    pub sigma2_A: C64,
    pub sigma2_B: C64,
    pub Sigma2_A: C64,
    pub Sigma2_B: C64,
    pub rho_A: C64,
    pub rho_B: C64,
    pub J: C64,
    pub theta: C64,
    pub vartheta: C64,
    pub alpha1: C64,
    pub alpha2: C64,
    pub N1: C64,
    pub N2: C64,
    pub delta_fg: C64,
    pub Theta: C64,
    pub Gamma_po: C64,
    pub Gamma_ne: C64,
    pub Xi: C64,
    pub epsilon: C64,
    pub robertson_C: f64,
    /// `sigma_A sigma_B` (principal roots)
    pub sigma_product: C64,
    /// `sqrt(Xi - Theta + epsilon)`
    pub qgr_value: C64,
    pub hermiticity_defects: HermiticityDefects,
    pub diagnostics: QgrDiagnostics,
    pub residuals: Vec<IdentityResidual>,
}

impl QgrReport {
    pub fn all_pass(&self) -> bool {
        self.residuals.iter().all(|r| r.pass)
    }
}

// Everything the report needs, computed once.
struct Core {
    sigma2_a: C64,
    sigma2_b: C64,
    big_sigma2_a: C64,
    big_sigma2_b: C64,
    rho_a: C64,
    rho_b: C64,
    theta_big: C64,
    gamma_po: C64,
    gamma_ne: C64,
    xi: C64,
    epsilon: C64,
    cross: CrossTerms,
    alpha1: C64,
    alpha2: C64,
    schr: SchrodingerTerms,
    diag: QgrDiagnostics,
    sigma2_a_lit: C64,
    sigma2_b_lit: C64,
    big_sigma2_a_lit: C64,
    big_sigma2_b_lit: C64,
    gamma_po_lit: C64,
    gamma_ne_lit: C64,
}

fn mode_terms(
    p: &Probe,
    a: &Operator,
    b: &Operator,
    la: &Lift,
    lb: &Lift,
    inner: InnerProductMode,
) -> (C64, C64, C64, C64, C64, C64, C64, C64) {
    // returns sigma2_a, sigma2_b, Sigma2_a, Sigma2_b, rho_a, rho_b, gamma_po, gamma_ne
    match inner {
        InnerProductMode::Literal => {
            let pm = p.mean(&la.lifted) * p.mean(&lb.lifted);
            let pp = p.ev2(&la.lifted, &lb.lifted) - pm;
            let qq = p.ev2(&lb.lifted, &la.lifted) - pm;
            (
                p.variance_literal(a),
                p.variance_literal(b),
                p.variance_literal(&la.lifted),
                p.variance_literal(&lb.lifted),
                p.rho_literal(a, &la.u),
                p.rho_literal(b, &lb.u),
                (pp + qq) / 2.0,
                (pp - qq) / (2.0 * I),
            )
        }
        InnerProductMode::AdjointConsistent => {
            let f = p.centered(&la.lifted);
            let g = p.centered(&lb.lifted);
            let fg = p.dot(&f, &g);
            (
                p.variance_adjoint(a),
                p.variance_adjoint(b),
                p.variance_adjoint(&la.lifted),
                p.variance_adjoint(&lb.lifted),
                p.rho_adjoint(a, &la.u),
                p.rho_adjoint(b, &lb.u),
                c(fg.re),
                c(fg.im),
            )
        }
    }
}

fn qgr_core(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    opts: QgrOptions,
) -> Result<Core> {
    check_pair(a, b, s, psi)?;
    check_normalized(psi)?;
    let p = Probe::new(psi);
    let la = geometric_lift(a, s, opts.modes.lift)?;
    let lb = geometric_lift(b, s, opts.modes.lift)?;
    let ms = s.multiplication();

    let lit = mode_terms(&p, a, b, &la, &lb, InnerProductMode::Literal);
    let adj = mode_terms(&p, a, b, &la, &lb, InnerProductMode::AdjointConsistent);
    let chosen = match opts.modes.inner_product {
        InnerProductMode::Literal => lit,
        InnerProductMode::AdjointConsistent => adj,
    };
    let (sigma2_a, sigma2_b, big_sigma2_a, big_sigma2_b, rho_a, rho_b, gamma_po, gamma_ne) = chosen;
    let theta_of = |t: &(C64, C64, C64, C64, C64, C64, C64, C64)| t.4 * t.1 + t.0 * t.5 + t.4 * t.5;
    let xi_of = |t: &(C64, C64, C64, C64, C64, C64, C64, C64)| c(t.6.norm_sqr() + t.7.norm_sqr());
    let eps_of = |t: &(C64, C64, C64, C64, C64, C64, C64, C64)| t.2 * t.3 - xi_of(t);
    let theta_big = theta_of(&chosen);
    let xi = xi_of(&chosen);
    let epsilon = eps_of(&chosen);

    // bracket-formula route, always with literal-mode expectations
    let cross = cross_from(&p, a, b, &la.u, &lb.u, &ms, opts.independent_uv);
    let psi_v = p.psi;
    let (apsi, bpsi, spsi) = (a.apply(psi_v), b.apply(psi_v), ms.apply(psi_v));
    let ab = p.ev(&a.apply(&bpsi));
    let ba = p.ev(&b.apply(&apsi));
    let sb = ms.apply(&bpsi);
    let sa = ms.apply(&apsi);
    let bs = b.apply(&spsi);
    let as_ = a.apply(&spsi);
    let a_sb = p.ev(&a.apply(&sb)); // <A s B>
    let a_bs = p.ev(&a.apply(&bs)); // <A B s>
    let b_sa = p.ev(&b.apply(&sa));
    let b_as = p.ev(&b.apply(&as_));
    let ggc = ab - ba + (a_sb - a_bs) - (b_sa - b_as);
    let gac = ab + ba + (a_sb + a_bs) + (b_sa + b_as);
    let gamma_po_formula = 0.5 * gac + cross.theta;
    let gamma_ne_formula = ggc / (2.0 * I) + cross.vartheta;
    let schr = schrodinger_from(&p, a, b);
    let alpha1 = cross.j + 0.5 * (a_sb + b_sa) + 0.5 * (a_bs + b_as);
    let alpha2 = ((a_bs - b_as) + (a_sb - b_sa)) / (2.0 * I);

    let pm = p.mean(&la.lifted) * p.mean(&lb.lifted);
    let direct_p = p.ev2(&la.lifted, &lb.lifted) - pm;
    let direct_q = p.ev2(&lb.lifted, &la.lifted) - pm;
    let f = p.centered(&la.lifted);
    let g = p.centered(&lb.lifted);
    let inner_fg = p.dot(&f, &g);
    let epsilon_literal = eps_of(&lit);
    let epsilon_adjoint = eps_of(&adj);
    let diag = QgrDiagnostics {
        mean_a: p.mean(a),
        mean_b: p.mean(b),
        direct_p,
        direct_q,
        inner_fg,
        gamma_po_formula,
        gamma_ne_formula,
        epsilon_literal,
        epsilon_adjoint,
        epsilon_mode_difference: epsilon_literal - epsilon_adjoint,
        epsilon_direct_modulus: lit.2 * lit.3 - c(direct_p.norm_sqr()),
        split_defect: xi_of(&lit).re - direct_p.norm_sqr(),
    };
    Ok(Core {
        sigma2_a,
        sigma2_b,
        big_sigma2_a,
        big_sigma2_b,
        rho_a,
        rho_b,
        theta_big,
        gamma_po,
        gamma_ne,
        xi,
        epsilon,
        cross,
        alpha1,
        alpha2,
        schr,
        diag,
        sigma2_a_lit: lit.0,
        sigma2_b_lit: lit.1,
        big_sigma2_a_lit: lit.2,
        big_sigma2_b_lit: lit.3,
        gamma_po_lit: lit.6,
        gamma_ne_lit: lit.7,
    })
}

fn maxn(vals: &[C64]) -> f64 {
    vals.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

pub fn qgr_report(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    psi: &WaveFunction,
    opts: QgrOptions,
) -> Result<QgrReport> {
    let k = qgr_core(a, b, s, psi, opts)?;
    let tol = opts.tolerance;
    let mut residuals = vec![
        IdentityResidual::scalars(
            "Sigma2_A = sigma2_A + rho_A",
            k.big_sigma2_a,
            k.sigma2_a + k.rho_a,
            maxn(&[k.sigma2_a, k.rho_a]),
            tol,
        ),
        IdentityResidual::scalars(
            "Sigma2_B = sigma2_B + rho_B",
            k.big_sigma2_b,
            k.sigma2_b + k.rho_b,
            maxn(&[k.sigma2_b, k.rho_b]),
            tol,
        ),
        IdentityResidual::scalars(
            "Sigma2_A Sigma2_B = sigma2_A sigma2_B + Theta",
            k.big_sigma2_a * k.big_sigma2_b,
            k.sigma2_a * k.sigma2_b + k.theta_big,
            maxn(&[
                k.sigma2_a * k.sigma2_b,
                k.rho_a * k.sigma2_b,
                k.sigma2_a * k.rho_b,
                k.rho_a * k.rho_b,
            ]),
            tol,
        ),
        IdentityResidual::scalars(
            "sigma2_A sigma2_B + Theta = Xi + epsilon",
            k.sigma2_a * k.sigma2_b + k.theta_big,
            k.xi + k.epsilon,
            maxn(&[k.sigma2_a * k.sigma2_b, k.theta_big, k.xi, k.epsilon]),
            tol,
        ),
        IdentityResidual::scalars(
            "theta = J - <A><B>",
            k.cross.theta,
            k.cross.j - k.diag.mean_a * k.diag.mean_b,
            maxn(&[k.cross.j, k.diag.mean_a * k.diag.mean_b]),
            tol,
        ),
        IdentityResidual::scalars(
            "Gamma_po = N1 + alpha1",
            k.diag.gamma_po_formula,
            k.schr.n1 + k.alpha1,
            maxn(&[k.schr.n1, k.alpha1]),
            tol,
        ),
        IdentityResidual::scalars(
            "Gamma_ne = N2 + alpha2",
            k.diag.gamma_ne_formula,
            k.schr.n2 + k.alpha2,
            maxn(&[k.schr.n2, k.alpha2]),
            tol,
        ),
    ];
    if opts.modes.lift == LiftMode::Composition && !opts.independent_uv {
        residuals.push(IdentityResidual::scalars(
            "<dA^s dB^s> = Gamma_po + i Gamma_ne",
            k.diag.direct_p,
            k.diag.gamma_po_formula + I * k.diag.gamma_ne_formula,
            maxn(&[k.diag.gamma_po_formula, k.diag.gamma_ne_formula]),
            tol,
        ));
    }
    if opts.modes.inner_product == InnerProductMode::AdjointConsistent {
        residuals.push(IdentityResidual::inequality(
            "epsilon >= 0",
            k.epsilon.re,
            tol,
        ));
    }
    let sigma_product = k.sigma2_a.sqrt() * k.sigma2_b.sqrt();
    let defects = HermiticityDefects {
        gamma_po_im: k.gamma_po_lit.im,
        gamma_ne_im: k.gamma_ne_lit.im,
        sigma2_a_im: k.sigma2_a_lit.im,
        sigma2_b_im: k.sigma2_b_lit.im,
        big_sigma2_a_im: k.big_sigma2_a_lit.im,
        big_sigma2_b_im: k.big_sigma2_b_lit.im,
    };
    Ok(QgrReport {
        modes: opts.modes,
        independent_uv: opts.independent_uv,
        sigma2_A: k.sigma2_a,
        sigma2_B: k.sigma2_b,
        Sigma2_A: k.big_sigma2_a,
        Sigma2_B: k.big_sigma2_b,
        rho_A: k.rho_a,
        rho_B: k.rho_b,
        J: k.cross.j,
        theta: k.cross.theta,
        vartheta: k.cross.vartheta,
        alpha1: k.alpha1,
        alpha2: k.alpha2,
        N1: k.schr.n1,
        N2: k.schr.n2,
        delta_fg: k.schr.delta_fg,
        Theta: k.theta_big,
        Gamma_po: k.gamma_po,
        Gamma_ne: k.gamma_ne,
        Xi: k.xi,
        epsilon: k.epsilon,
        robertson_C: k.schr.robertson_c,
        sigma_product,
        qgr_value: (k.xi - k.theta_big + k.epsilon).sqrt(),
        hermiticity_defects: defects,
        diagnostics: k.diag,
        residuals,
    })
}

/// Lift-product identities under the composition lift, in full:
/// `[A^s,B^s] = [A,B]_s + 2[A,B]s + AsBs - BsAs` and
/// `{A^s,B^s} = {A,B}_s + AsBs + BsAs`.
pub fn lift_identity_residuals(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    tol: f64,
) -> Result<[IdentityResidual; 2]> {
    let t = LiftTerms::new(a, b, s)?;
    let one = c(1.0);
    let rhs_c = linear_combine(&[
        (one, &t.ggc),
        (c(2.0), &t.comm_s),
        (one, &t.asbs),
        (c(-1.0), &t.bsas),
    ])?;
    let rhs_a = linear_combine(&[(one, &t.gac), (one, &t.asbs), (one, &t.bsas)])?;
    Ok([
        IdentityResidual::operators(
            "[A^s,B^s] = [A,B]_s + 2[A,B]s + AsBs - BsAs",
            &t.lhs_c,
            &rhs_c,
            tol,
        ),
        IdentityResidual::operators("{A^s,B^s} = {A,B}_s + AsBs + BsAs", &t.lhs_a, &rhs_a, tol),
    ])
}

/// The short forms `[A^s,B^s] = [A,B]_s + 2[A,B]s` and
/// `{A^s,B^s} = {A,B}_s + 2AsBs`. They drop `AsBs - BsAs` (resp. replace
/// `BsAs` by `AsBs`), so they only hold when `AsBs = BsAs`.
pub fn lift_short_form_residuals(
    a: &Operator,
    b: &Operator,
    s: &StructureFunction,
    tol: f64,
) -> Result<[IdentityResidual; 2]> {
    let t = LiftTerms::new(a, b, s)?;
    let one = c(1.0);
    let rhs_c = linear_combine(&[(one, &t.ggc), (c(2.0), &t.comm_s)])?;
    let rhs_a = linear_combine(&[(one, &t.gac), (c(2.0), &t.asbs)])?;
    Ok([
        IdentityResidual::operators("[A^s,B^s] = [A,B]_s + 2[A,B]s", &t.lhs_c, &rhs_c, tol),
        IdentityResidual::operators("{A^s,B^s} = {A,B}_s + 2AsBs", &t.lhs_a, &rhs_a, tol),
    ])
}

struct LiftTerms {
    lhs_c: Operator,
    lhs_a: Operator,
    ggc: Operator,
    gac: Operator,
    comm_s: Operator,
    asbs: Operator,
    bsas: Operator,
}

impl LiftTerms {
    fn new(a: &Operator, b: &Operator, s: &StructureFunction) -> Result<Self> {
        same_grid(a, b)?;
        let la = geometric_lift(a, s, LiftMode::Composition)?.lifted;
        let lb = geometric_lift(b, s, LiftMode::Composition)?.lifted;
        let ms = s.multiplication();
        let as_ = compose(a, &ms)?;
        let bs = compose(b, &ms)?;
        Ok(LiftTerms {
            lhs_c: commutator_cr(&la, &lb)?,
            lhs_a: anticommutator_ir(&la, &lb)?,
            ggc: ggc_bracket(s, a, b)?,
            gac: gac_bracket(s, a, b)?,
            comm_s: compose(&commutator_cr(a, b)?, &ms)?,
            asbs: compose(&as_, &bs)?,
            bsas: compose(&bs, &as_)?,
        })
    }
}

/// Continuum tolerance `base * (32 h / width)^p`, capped at 0.1; spectral
/// schemes use a fixed 1e-8.
pub fn continuum_tolerance(base: f64, scheme: DerivativeScheme, h: f64, width: f64) -> f64 {
    match scheme.order() {
        None => SPECTRAL_TOL,
        Some(p) => (base * (32.0 * h / width).powi(p as i32)).min(0.1),
    }
}

pub const SPECTRAL_TOL: f64 = 1e-8;

/// `[x, p_geo]_s psi` against `i hbar (1 + x s') psi`.
pub fn geometric_ccr_residual(
    grid: &Grid,
    s: &StructureFunction,
    scheme: DerivativeScheme,
    constants: &PhysicalConstants,
    psi: &WaveFunction,
    tol: f64,
) -> Result<IdentityResidual> {
    let p = build_geomentum(grid, scheme, s, constants)?;
    geometric_ccr_with(s, &p, constants, psi, tol)
}

/// Same check with a caller-supplied momentum matrix.
pub fn geometric_ccr_with(
    s: &StructureFunction,
    p: &Operator,
    constants: &PhysicalConstants,
    psi: &WaveFunction,
    tol: f64,
) -> Result<IdentityResidual> {
    let grid = *s.grid();
    let x = build_position(&grid);
    let lhs_op = ggc_bracket(s, &x, p)?;
    check_op_state(&lhs_op, psi)?;
    let b = &grid.points() * s.s1() + 1.0;
    let rhs_op = build_multiplication(&grid, &b.mapv(|v| I * constants.hbar * v))?;
    let lhs = lhs_op.apply(psi.amplitudes());
    let rhs = rhs_op.apply(psi.amplitudes());
    Ok(IdentityResidual::states(
        "[x,p_geo]_s = i hbar (1 + x s')",
        ResidualKind::Continuum,
        &grid,
        &lhs,
        &rhs,
        tol,
    ))
}

/// `[M_s, D] psi` against `-s' psi`.
pub fn product_rule_residual(
    s: &StructureFunction,
    scheme: DerivativeScheme,
    psi: &WaveFunction,
    tol: f64,
) -> Result<IdentityResidual> {
    let grid = *s.grid();
    let d = build_derivative(&grid, scheme)?;
    product_rule_with(s, &d, psi, tol)
}

pub fn product_rule_with(
    s: &StructureFunction,
    d: &Operator,
    psi: &WaveFunction,
    tol: f64,
) -> Result<IdentityResidual> {
    let grid = *s.grid();
    let lhs_op = commutator_cr(&s.multiplication(), d)?;
    check_op_state(&lhs_op, psi)?;
    let lhs = lhs_op.apply(psi.amplitudes());
    let rhs = psi.amplitudes() * &s.s1().mapv(|v| c(-v));
    Ok(IdentityResidual::states(
        "[s,D] = -s'",
        ResidualKind::Continuum,
        &grid,
        &lhs,
        &rhs,
        tol,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureField {
    pub grid: Grid,
    /// `s'' + s'^2`
    pub q: Array1<f64>,
}

pub fn curvature_field(s: &StructureFunction) -> CurvatureField {
    let q = s.s2() + &(s.s1() * s.s1());
    CurvatureField { grid: *s.grid(), q }
}

/// One-dimensional curvature identity `D b = x Q + 2 s'` with
/// `b = 1 + x s'` and `D = d/dx + s'`, probed on `psi` as
/// `(D M_b - M_b d/dx) psi` against `(x Q + 2 s') psi`.
pub fn dk_ccr_residual(
    s: &StructureFunction,
    grid: &Grid,
    scheme: DerivativeScheme,
    psi: &WaveFunction,
    tol: f64,
) -> Result<IdentityResidual> {
    if s.grid() != grid {
        return Err(QgrError::GridMismatch);
    }
    let d = build_derivative(grid, scheme)?;
    let dcov = d.plus(&build_multiplication_real(grid, s.s1())?)?;
    let x = grid.points();
    let b = build_multiplication_real(grid, &(&x * s.s1() + 1.0))?;
    let lhs_op = compose(&dcov, &b)?.minus(&compose(&b, &d)?)?;
    check_op_state(&lhs_op, psi)?;
    let q = curvature_field(s).q;
    let rhs_f = &x * &q + &(s.s1() * 2.0);
    let lhs = lhs_op.apply(psi.amplitudes());
    let rhs = psi.amplitudes() * &rhs_f.mapv(c);
    Ok(IdentityResidual::states(
        "D(1 + x s') = x Q + 2 s'",
        ResidualKind::Continuum,
        grid,
        &lhs,
        &rhs,
        tol,
    ))
}

/// Direct `rho(p_geo, s)` (function lift) next to the five-term curvature
/// expansion. The gap is reported, not asserted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoExpansion {
    pub direct: C64,
    pub expanded: C64,
    pub residual: f64,
    /// `Sigma^2_p - sigma^2_p` from the generalized variance
    pub master: C64,
}

pub fn rho_curvature_expansion(
    s: &StructureFunction,
    grid: &Grid,
    scheme: DerivativeScheme,
    constants: &PhysicalConstants,
    psi: &WaveFunction,
) -> Result<RhoExpansion> {
    if s.grid() != grid {
        return Err(QgrError::GridMismatch);
    }
    let modes = Modes {
        lift: LiftMode::Function,
        inner_product: InnerProductMode::Literal,
    };
    let pg = build_geomentum(grid, scheme, s, constants)?;
    let direct = entanglement_rho(&pg, s, psi, modes)?;
    let gv = generalized_variance(&pg, s, psi, modes)?;
    let sigma2 = Probe::new(psi).variance_literal(&pg);

    let d = build_derivative(grid, scheme)?;
    let dcov = d.plus(&build_multiplication_real(grid, s.s1())?)?;
    let ds = dcov.apply(&s.s().mapv(c));
    let d2s = dcov.apply(&ds);
    let p = Probe::new(psi);
    let m = |f: Array1<C64>| build_multiplication(grid, &f);
    let e_ds = p.mean(&m(ds.clone())?);
    let e_ds2 = p.mean(&m(&ds * &ds)?);
    let e_d = p.mean(&dcov);
    let e_d2s = p.mean(&m(d2s)?);
    let e_dsd = p.ev2(&m(ds)?, &dcov);
    let hb2 = constants.hbar * constants.hbar;
    let expanded = hb2 * (e_ds * e_ds - e_ds2 + 2.0 * e_ds * e_d - e_d2s - e_dsd);
    Ok(RhoExpansion {
        direct,
        expanded,
        residual: (direct - expanded).norm(),
        master: gv.value - sigma2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentumKind {
    Geomentum,
    Classical,
}

/// Closed form of `{x, p}_s` in one dimension applied to `psi`.
pub fn gac_closed_form(
    s: &StructureFunction,
    grid: &Grid,
    scheme: DerivativeScheme,
    constants: &PhysicalConstants,
    kind: MomentumKind,
) -> Result<Operator> {
    let d = build_derivative(grid, scheme)?;
    let x = grid.points();
    let (sv, q) = (s.s(), s.s1());
    let mul = |f: Array1<f64>| build_multiplication_real(grid, &f);
    let id = Operator::identity(grid);
    let x_d = compose(&mul(x.clone())?, &d)?;
    let hb = constants.hbar;
    match kind {
        MomentumKind::Geomentum => {
            // K = x (d(s^2)/dx + ... ) read with d(s^2)/dx = 2 s s'
            let ds2 = sv * q * 2.0;
            let inner = mul(&ds2 * 2.0 + &(q * 5.0))?.plus(&compose(&mul(sv * 4.0)?, &d)?)?;
            let k = compose(&mul(x.clone())?, &inner)?.plus(&mul(sv * 2.0)?)?;
            let total = linear_combine(&[(c(2.0), &x_d), (c(1.0), &id), (c(1.0), &k)])?;
            Ok(total.scaled(-I * hb))
        }
        MomentumKind::Classical => {
            let sx = sv * &x;
            let k = linear_combine(&[
                (c(1.0), &mul(sv.clone())?),
                (c(2.0), &compose(&mul(sx)?, &d)?),
                (c(1.5), &mul(&x * q)?),
            ])?;
            let total = linear_combine(&[(c(0.5), &id), (c(1.0), &x_d), (c(1.0), &k)])?;
            Ok(total.scaled(-2.0 * I * hb))
        }
    }
}

pub fn gac_1d_closed_forms(
    s: &StructureFunction,
    grid: &Grid,
    scheme: DerivativeScheme,
    constants: &PhysicalConstants,
    psi: &WaveFunction,
    kind: MomentumKind,
    tol: f64,
) -> Result<IdentityResidual> {
    if s.grid() != grid {
        return Err(QgrError::GridMismatch);
    }
    let p = match kind {
        MomentumKind::Geomentum => build_geomentum(grid, scheme, s, constants)?,
        MomentumKind::Classical => build_momentum_classical(grid, scheme, constants)?,
    };
    let x = build_position(grid);
    let lhs_op = gac_bracket(s, &x, &p)?;
    check_op_state(&lhs_op, psi)?;
    let rhs_op = gac_closed_form(s, grid, scheme, constants, kind)?;
    let name = match kind {
        MomentumKind::Geomentum => "{x,p_geo}_s closed form",
        MomentumKind::Classical => "{x,p}_s closed form",
    };
    let lhs = lhs_op.apply(psi.amplitudes());
    let rhs = rhs_op.apply(psi.amplitudes());
    Ok(IdentityResidual::states(
        name,
        ResidualKind::Continuum,
        grid,
        &lhs,
        &rhs,
        tol,
    ))
}
