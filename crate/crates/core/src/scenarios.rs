//! Scenario configs, materialized bundles, the identity suite and sweeps.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{
    build_hamiltonian, decomposition_residual, g_dynamics_free_residual, HamiltonianSpec,
    KineticKind,
};
use crate::error::{QgrError, Result};
use crate::geobracket::{
    anti_geomutator, bracket_bound_report, equilibrium_residual, gac_bracket, geomutator,
    ggc_bracket, sandwich_asym, sandwich_sym, BracketBounds, IdentityResidual, ResidualKind,
    StructureFunction,
};
use crate::geomertainty::{
    continuum_tolerance, dk_ccr_residual, gac_1d_closed_forms, geometric_ccr_with,
    lift_identity_residuals, lift_short_form_residuals, product_moment_bound, product_rule_with,
    qgr_report, rho_curvature_expansion, schrodinger_terms, InnerProductMode, LiftMode, Modes,
    MomentumKind, QgrOptions, QgrReport, RhoExpansion, HERMITIAN_INPUT_TOL,
};
use crate::grid::{gaussian_packet, variance, Boundary, Grid, PhysicalConstants, WaveFunction};
use crate::op_algebra::{
    adjoint, anticommutator_ir, build_derivative, build_momentum_classical,
    build_multiplication_real, build_position, commutator_cr, compose, linear_combine,
    DerivativeScheme, Operator, C64,
};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Grid size used by the randomized operator battery.
pub const FUZZ_N: usize = 64;
/// Random pairs drawn per suite run.
pub const FUZZ_PAIRS: usize = 6;
/// Largest grid accepted by the validator; operators are dense.
pub const MAX_N: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub boundary: Boundary,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            x_min: -20.0,
            x_max: 20.0,
            n: 512,
            boundary: Boundary::Dirichlet,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsConfig {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            hbar: 1.0,
            mass: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateFamily {
    #[default]
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub family: StateFamily,
    pub x0: f64,
    pub p0: f64,
    pub width: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig {
            family: StateFamily::Gaussian,
            x0: 0.0,
            p0: 0.0,
            width: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FunctionFamily {
    #[default]
    Zero,
    Constant,
    Linear,
    Quadratic,
    GaussBump,
    Sine,
}

/// A real function from a closed family. Used both for the structure
/// function and for custom multiplication operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionSpec {
    pub family: FunctionFamily,
    pub amplitude: f64,
    /// `k` in `sin(k x)`
    pub wavenumber: f64,
    /// `w` in `exp(-x^2 / w^2)`
    pub width: f64,
}

impl Default for FunctionSpec {
    fn default() -> Self {
        FunctionSpec {
            family: FunctionFamily::Zero,
            amplitude: 0.1,
            wavenumber: 1.0,
            width: 1.0,
        }
    }
}

impl FunctionSpec {
    pub fn new(family: FunctionFamily, amplitude: f64) -> Self {
        FunctionSpec {
            family,
            amplitude,
            ..Default::default()
        }
    }

    /// `(f, f', f'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let a = self.amplitude;
        match self.family {
            FunctionFamily::Zero => (0.0, 0.0, 0.0),
            FunctionFamily::Constant => (a, 0.0, 0.0),
            FunctionFamily::Linear => (a * x, a, 0.0),
            FunctionFamily::Quadratic => (a * x * x, 2.0 * a * x, 2.0 * a),
            FunctionFamily::GaussBump => {
                let w2 = self.width * self.width;
                let f = a * (-x * x / w2).exp();
                (
                    f,
                    -2.0 * x / w2 * f,
                    (4.0 * x * x / (w2 * w2) - 2.0 / w2) * f,
                )
            }
            FunctionFamily::Sine => {
                let k = self.wavenumber;
                let (sn, cs) = (k * x).sin_cos();
                (a * sn, a * k * cs, -a * k * k * sn)
            }
        }
    }

    pub fn structure(&self, grid: &Grid) -> Result<StructureFunction> {
        if self.family == FunctionFamily::Zero {
            return Ok(StructureFunction::zero(grid));
        }
        StructureFunction::from_fns(
            grid,
            |x| self.eval(x).0,
            |x| self.eval(x).1,
            |x| self.eval(x).2,
        )
    }

    fn validate(&self, path: &str) -> Result<()> {
        finite(&format!("{path}.amplitude"), self.amplitude)?;
        finite(&format!("{path}.wavenumber"), self.wavenumber)?;
        positive(&format!("{path}.width"), self.width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorSpec {
    X,
    PClassical,
    PGeomentum,
    CustomMult(FunctionSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    #[serde(rename = "A")]
    pub a: OperatorSpec,
    #[serde(rename = "B")]
    pub b: OperatorSpec,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            a: OperatorSpec::X,
            b: OperatorSpec::PGeomentum,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PotentialFamily {
    Zero,
    #[default]
    Harmonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialConfig {
    pub family: PotentialFamily,
    pub omega: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            family: PotentialFamily::Harmonic,
            omega: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct HamiltonianConfig {
    pub kinetic: KineticKind,
    pub potential: PotentialConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub algebraic: f64,
    /// multiplied by `(32 h / width)^p` for a scheme of order `p`
    pub continuum_base: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            algebraic: 1e-10,
            continuum_base: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    pub scheme: DerivativeScheme,
    pub constants: ConstantsConfig,
    pub state: StateConfig,
    pub structure: FunctionSpec,
    pub pair: PairConfig,
    pub modes: Modes,
    pub hamiltonian: HamiltonianConfig,
    pub tolerances: Tolerances,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid: GridConfig::default(),
            scheme: DerivativeScheme::default(),
            constants: ConstantsConfig::default(),
            state: StateConfig::default(),
            structure: FunctionSpec::default(),
            pair: PairConfig::default(),
            modes: Modes::default(),
            hamiltonian: HamiltonianConfig::default(),
            tolerances: Tolerances::default(),
            seed: 42,
        }
    }
}

fn invalid(path: &str, reason: impl Into<String>) -> QgrError {
    QgrError::Validation {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, "must be finite"))
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(path, "must be positive"))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        finite("grid.x_min", g.x_min)?;
        finite("grid.x_max", g.x_max)?;
        if g.x_max <= g.x_min {
            return Err(invalid("grid.x_max", "must exceed grid.x_min"));
        }
        if g.n < 8 {
            return Err(invalid("grid.n", "must be ≥ 8"));
        }
        if g.n > MAX_N {
            return Err(invalid("grid.n", format!("must be ≤ {MAX_N}")));
        }
        if self.scheme == DerivativeScheme::Spectral && g.boundary != Boundary::Periodic {
            return Err(invalid(
                "scheme",
                "spectral requires grid.boundary = periodic",
            ));
        }
        positive("constants.hbar", self.constants.hbar)?;
        positive("constants.mass", self.constants.mass)?;
        finite("state.x0", self.state.x0)?;
        finite("state.p0", self.state.p0)?;
        positive("state.width", self.state.width)?;
        self.structure.validate("structure")?;
        for (path, op) in [("pair.A", &self.pair.a), ("pair.B", &self.pair.b)] {
            if let OperatorSpec::CustomMult(f) = op {
                f.validate(&format!("{path}.custom_mult"))?;
            }
        }
        finite(
            "hamiltonian.potential.omega",
            self.hamiltonian.potential.omega,
        )?;
        positive("tolerances.algebraic", self.tolerances.algebraic)?;
        positive("tolerances.continuum_base", self.tolerances.continuum_base)?;
        Ok(())
    }

    pub fn constants(&self) -> Result<PhysicalConstants> {
        PhysicalConstants::new(self.constants.hbar, self.constants.mass)
    }
}

// serde_json appends " at line L column C"; the position is carried separately.
fn strip_position(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg,
    }
}

/// Parse and validate a JSON config. Missing fields take defaults,
/// unknown fields are rejected with their path.
pub fn load_config(text: &str) -> Result<ScenarioConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => QgrError::Validation {
                path,
                reason: strip_position(&inner),
            },
            _ => QgrError::Parse {
                line: inner.line(),
                column: inner.column(),
                message: strip_position(&inner),
            },
        }
    })?;
    de.end().map_err(|e| QgrError::Parse {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a suite run needs, on one shared grid.
#[derive(Clone, Debug)]
pub struct ScenarioBundle {
    pub config: ScenarioConfig,
    pub grid: Grid,
    pub constants: PhysicalConstants,
    pub scheme: DerivativeScheme,
    pub psi: WaveFunction,
    pub s: StructureFunction,
    /// `d/dx`; continuum checks build their momenta from this matrix
    pub derivative: Operator,
    pub a: Operator,
    pub b: Operator,
    pub h: Operator,
    pub warnings: Vec<String>,
}

fn build_pair_op(
    spec: &OperatorSpec,
    grid: &Grid,
    d: &Operator,
    s: &StructureFunction,
    k: &PhysicalConstants,
) -> Result<Operator> {
    let minus_ih = C64::new(0.0, -k.hbar);
    Ok(match spec {
        OperatorSpec::X => build_position(grid),
        OperatorSpec::PClassical => d.scaled(minus_ih).with_label("p"),
        OperatorSpec::PGeomentum => d
            .plus(&build_multiplication_real(grid, s.s1())?)?
            .scaled(minus_ih)
            .with_label("p_geo"),
        OperatorSpec::CustomMult(f) => {
            build_multiplication_real(grid, &grid.sample(|x| f.eval(x).0))?
                .with_label(format!("{:?}", f.family))
        }
    })
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<ScenarioBundle> {
    cfg.validate()?;
    let g = &cfg.grid;
    let grid = Grid::new(g.x_min, g.x_max, g.n, g.boundary)?;
    let constants = cfg.constants()?;
    let psi = match cfg.state.family {
        StateFamily::Gaussian => gaussian_packet(
            &grid,
            cfg.state.x0,
            cfg.state.p0,
            cfg.state.width,
            &constants,
        )?,
    };
    let s = cfg.structure.structure(&grid)?;
    let derivative = build_derivative(&grid, cfg.scheme)?;
    let a = build_pair_op(&cfg.pair.a, &grid, &derivative, &s, &constants)?;
    let b = build_pair_op(&cfg.pair.b, &grid, &derivative, &s, &constants)?;
    let pot = &cfg.hamiltonian.potential;
    let potential = match pot.family {
        PotentialFamily::Zero => Array1::zeros(grid.n()),
        PotentialFamily::Harmonic => {
            let k = 0.5 * constants.mass * pot.omega * pot.omega;
            grid.sample(|x| k * x * x)
        }
    };
    let spec = HamiltonianSpec {
        kinetic_kind: cfg.hamiltonian.kinetic,
        potential,
        constants,
    };
    let h = build_hamiltonian(&spec, &grid, cfg.scheme, &s)?;
    let mut warnings = Vec::new();
    if psi.edge_amplitude() > 1e-8 {
        warnings.push(format!(
            "state amplitude {:.3e} at the grid edge",
            psi.edge_amplitude()
        ));
    }
    Ok(ScenarioBundle {
        config: cfg.clone(),
        grid,
        constants,
        scheme: cfg.scheme,
        psi,
        s,
        derivative,
        a,
        b,
        h,
        warnings,
    })
}

/// Exact matrix identities for one operator pair.
pub fn operator_identities(
    s: &StructureFunction,
    a: &Operator,
    b: &Operator,
    tol: f64,
) -> Result<Vec<IdentityResidual>> {
    let one = C64::new(1.0, 0.0);
    let two = C64::new(2.0, 0.0);
    let neg = C64::new(-1.0, 0.0);
    let ms = s.multiplication();
    let op = IdentityResidual::operators;

    let comm = commutator_cr(a, b)?;
    let anti = anticommutator_ir(a, b)?;
    let ab = compose(a, b)?;
    let ba = compose(b, a)?;
    let g_ab = geomutator(s, a, b)?;
    let g_ba = geomutator(s, b, a)?;
    let ggc_ab = ggc_bracket(s, a, b)?;
    let ggc_ba = ggc_bracket(s, b, a)?;
    let z_ab = anti_geomutator(s, a, b)?;
    let z_ba = anti_geomutator(s, b, a)?;
    let gac_ab = gac_bracket(s, a, b)?;
    let gac_ba = gac_bracket(s, b, a)?;
    let asb = compose(a, &compose(&ms, b)?)?;
    let bsa = compose(b, &compose(&ms, a)?)?;
    let bas = compose(&ba, &ms)?;
    let abs = compose(&ab, &ms)?;

    let mut out = vec![
        op(
            "[a,b] = -[b,a]",
            &comm,
            &commutator_cr(b, a)?.scaled(neg),
            tol,
        ),
        op("{a,b} = {b,a}", &anti, &anticommutator_ir(b, a)?, tol),
        op(
            "ab = ([a,b] + {a,b})/2",
            &ab,
            &comm.plus(&anti)?.scaled(C64::new(0.5, 0.0)),
            tol,
        ),
        op(
            "(ab)† = b†a†",
            &adjoint(&ab),
            &compose(&adjoint(b), &adjoint(a))?,
            tol,
        ),
        op("G(a,b) = -G(b,a)", &g_ab, &g_ba.scaled(neg), tol),
        op("[a,b]_s = -[b,a]_s", &ggc_ab, &ggc_ba.scaled(neg), tol),
        op("Z(a,b) = Z(b,a)", &z_ab, &z_ba, tol),
        op("{a,b}_s = {b,a}_s", &gac_ab, &gac_ba, tol),
        op(
            "G = <a:s:b> - [a,b]s",
            &g_ab,
            &sandwich_asym(s, a, b)?.minus(&compose(&comm, &ms)?)?,
            tol,
        ),
        op(
            "Z = (a:s:b) + {a,b}s",
            &z_ab,
            &sandwich_sym(s, a, b)?.plus(&compose(&anti, &ms)?)?,
            tol,
        ),
        op(
            "[a,b]_s + {a,b}_s = 2(ab + asb + bas)",
            &ggc_ab.plus(&gac_ab)?,
            &linear_combine(&[(two, &ab), (two, &asb), (two, &bas)])?,
            tol,
        ),
        op(
            "{a,b}_s - [a,b]_s = 2(ba + bsa + abs)",
            &gac_ab.minus(&ggc_ab)?,
            &linear_combine(&[(two, &ba), (two, &bsa), (two, &abs)])?,
            tol,
        ),
        op(
            "G(a,a) = 0",
            &geomutator(s, a, a)?,
            &Operator::zero(a.grid()),
            tol,
        ),
        op(
            "G(s,a) = s[s,a]",
            &geomutator(s, &ms, a)?,
            &compose(&ms, &commutator_cr(&ms, a)?)?,
            tol,
        ),
    ];
    // bilinearity: G(a + lb, a) = l G(b,a)
    let l = C64::new(0.7, -0.3);
    let mixed = linear_combine(&[(one, a), (l, b)])?;
    out.push(op(
        "G(a + lb, a) = l G(b,a)",
        &geomutator(s, &mixed, a)?,
        &g_ba.scaled(l),
        tol,
    ));
    out.extend(lift_identity_residuals(a, b, s, tol)?);
    Ok(out)
}

/// Seeded Hermitian matrix `(M + M†)/2`, entries of `M` uniform in `[-1, 1]`.
pub fn random_hermitian(grid: &Grid, rng: &mut impl Rng, label: &str) -> Result<Operator> {
    let n = grid.n();
    let m = Array2::from_shape_fn((n, n), |_| {
        C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
    });
    let h = (&m + &m.t().mapv(|z| z.conj())).mapv(|z| z * 0.5);
    Operator::from_matrix(*grid, h, label)
}

/// Seeded normalized state with entries uniform in the unit square.
pub fn random_state(grid: &Grid, rng: &mut impl Rng) -> Result<WaveFunction> {
    let v = Array1::from_shape_fn(grid.n(), |_| {
        C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
    });
    WaveFunction::new(*grid, v)?.normalized()
}

const ALL_MODES: [Modes; 4] = [
    Modes {
        lift: LiftMode::Composition,
        inner_product: InnerProductMode::Literal,
    },
    Modes {
        lift: LiftMode::Composition,
        inner_product: InnerProductMode::AdjointConsistent,
    },
    Modes {
        lift: LiftMode::Function,
        inner_product: InnerProductMode::Literal,
    },
    Modes {
        lift: LiftMode::Function,
        inner_product: InnerProductMode::AdjointConsistent,
    },
];

fn mode_tag(m: Modes) -> &'static str {
    match (m.lift, m.inner_product) {
        (LiftMode::Composition, InnerProductMode::Literal) => "composition/literal",
        (LiftMode::Composition, InnerProductMode::AdjointConsistent) => "composition/adjoint",
        (LiftMode::Function, InnerProductMode::Literal) => "function/literal",
        (LiftMode::Function, InnerProductMode::AdjointConsistent) => "function/adjoint",
    }
}

/// Every check for one random Hermitian triple `(a, b, H)` and state.
pub fn fuzz_case(
    s: &StructureFunction,
    a: &Operator,
    b: &Operator,
    h: &Operator,
    psi: &WaveFunction,
    tol: f64,
) -> Result<Vec<IdentityResidual>> {
    let k = PhysicalConstants::default();
    let mut out = operator_identities(s, a, b, tol)?;
    for modes in ALL_MODES {
        let r = qgr_report(
            a,
            b,
            s,
            psi,
            QgrOptions {
                modes,
                independent_uv: false,
                tolerance: tol,
            },
        )?;
        out.extend(r.residuals.into_iter().map(|mut x| {
            x.name = format!("{} [{}]", x.name, mode_tag(modes));
            x
        }));
    }
    let adj = Modes {
        lift: LiftMode::Composition,
        inner_product: InnerProductMode::AdjointConsistent,
    };
    let same = qgr_report(
        a,
        a,
        s,
        psi,
        QgrOptions {
            modes: adj,
            independent_uv: false,
            tolerance: tol,
        },
    )?;
    out.push(IdentityResidual::scalars(
        "A = B: epsilon = 0",
        same.epsilon,
        C64::new(0.0, 0.0),
        same.Xi.norm(),
        tol,
    ));
    let d = decomposition_residual(a, h, s, &k, tol)?;
    out.push(d.forward);
    out.extend(hermitian_pair_checks(a, b, psi, tol)?);
    out.extend(bracket_bound_checks(
        &bracket_bound_report(s, a, b, psi)?,
        tol,
    ));
    Ok(out)
}

fn hermitian_pair_checks(
    a: &Operator,
    b: &Operator,
    psi: &WaveFunction,
    tol: f64,
) -> Result<Vec<IdentityResidual>> {
    if !(a.is_hermitian_within(HERMITIAN_INPUT_TOL) && b.is_hermitian_within(HERMITIAN_INPUT_TOL)) {
        return Ok(Vec::new());
    }
    let t = schrodinger_terms(a, b, psi)?;
    let sa = variance(a, psi)?.std_dev.re;
    let sb = variance(b, psi)?.std_dev.re;
    Ok(vec![
        IdentityResidual::inequality("Schrodinger delta >= 0", t.delta_fg.re, tol),
        IdentityResidual::inequality("sigma_A sigma_B >= C", sa * sb - t.robertson_c, tol),
        product_moment_bound(a, b, psi, tol)?,
    ])
}

fn bracket_bound_checks(bb: &BracketBounds, tol: f64) -> Vec<IdentityResidual> {
    // slacks are differences of O(scale) moduli
    let t = tol
        * bb.ggc_abs
            .max(bb.qpb_abs)
            .max(bb.a_sb_abs)
            .max(bb.b_sa_abs)
            .max(1.0);
    vec![
        IdentityResidual::inequality("|<[a,b]_s>| <= |<[a,b]>| + |<G>|", bb.slack_upper, t),
        IdentityResidual::inequality("|<G>| <= |<a[s,b]>| + |<b[s,a]>|", bb.slack_geometric, t),
        IdentityResidual::inequality(
            "|<[a,b]_s>| <= |<[a,b]>| + |<a[s,b]>| + |<b[s,a]>|",
            bb.slack_combined,
            t,
        ),
        IdentityResidual::inequality("|<[a,b]_s>| >= |<[a,b]>| - |<G>|", bb.slack_lower, t),
    ]
}

/// Keep the worst instance of each named check, in first-seen order.
pub fn aggregate_worst(
    items: impl IntoIterator<Item = IdentityResidual>,
    prefix: &str,
) -> Vec<IdentityResidual> {
    let mut out: Vec<IdentityResidual> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for mut r in items {
        r.name = format!("{prefix}{}", r.name);
        match index.get(&r.name) {
            None => {
                index.insert(r.name.clone(), out.len());
                out.push(r);
            }
            Some(&i) => {
                let cur = &out[i];
                let worse = (cur.pass && !r.pass)
                    || (cur.pass == r.pass && r.rel_residual > cur.rel_residual);
                if worse {
                    out[i] = r;
                }
            }
        }
    }
    out
}

/// Randomized Hermitian battery on `grid` with structure `s`; each named
/// check is reported by its worst instance over `pairs` draws.
pub fn fuzz_battery(
    grid: &Grid,
    s: &StructureFunction,
    seed: u64,
    pairs: usize,
    tol: f64,
) -> Result<Vec<IdentityResidual>> {
    if s.grid() != grid {
        return Err(QgrError::GridMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for _ in 0..pairs {
        let a = random_hermitian(grid, &mut rng, "A")?;
        let b = random_hermitian(grid, &mut rng, "B")?;
        let h = random_hermitian(grid, &mut rng, "H")?;
        let psi = random_state(grid, &mut rng)?;
        all.extend(fuzz_case(s, &a, &b, &h, &psi, tol)?);
    }
    Ok(aggregate_worst(all, "fuzz: "))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteDiagnostics {
    pub continuum_tolerance: f64,
    pub bracket_bounds: BracketBounds,
    /// five-term curvature expansion of `rho(p_geo, s)`; not asserted
    pub rho_expansion: RhoExpansion,
    /// `covariant = GHE + w∘f`; reported only
    pub decomposition_reversed: IdentityResidual,
    /// short lift-product forms, exact only when `AsBs = BsAs`; reported only
    pub lift_short_forms: Vec<IdentityResidual>,
    pub fuzz_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub scenario: ScenarioConfig,
    pub qgr: QgrReport,
    pub residuals: Vec<IdentityResidual>,
    pub pass_count: usize,
    pub fail_count: usize,
    /// only filled in on request, so reports stay reproducible
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub diagnostics: SuiteDiagnostics,
    pub warnings: Vec<String>,
}

impl SuiteResult {
    pub fn all_pass(&self) -> bool {
        self.fail_count == 0
    }

    pub fn find(&self, name: &str) -> Option<&IdentityResidual> {
        self.residuals.iter().find(|r| r.name == name)
    }
}

fn vanishing(name: &str, value: f64) -> IdentityResidual {
    IdentityResidual::evaluate(name, ResidualKind::Algebraic, 0.0, 0.0, 0.0, value, 1e-12)
}

/// Run every check on the bundle. Identity failures are recorded, not
/// returned as errors; `Err` only signals inconsistent inputs.
pub fn run_suite(bundle: &ScenarioBundle, cfg: &ScenarioConfig) -> Result<SuiteResult> {
    let (grid, s, psi, k) = (&bundle.grid, &bundle.s, &bundle.psi, &bundle.constants);
    let (a, b) = (&bundle.a, &bundle.b);
    let tol = cfg.tolerances.algebraic;
    let tol_c = continuum_tolerance(
        cfg.tolerances.continuum_base,
        bundle.scheme,
        grid.h(),
        cfg.state.width,
    );
    let mut res: Vec<IdentityResidual> = Vec::new();

    // scenario operators
    res.extend(operator_identities(s, a, b, tol)?);
    let d = &bundle.derivative;
    let dt = Operator::from_matrix(*grid, d.matrix().t().to_owned(), "D^T")?;
    res.push(IdentityResidual::operators(
        "D^T = -D",
        &dt,
        &d.scaled(C64::new(-1.0, 0.0)),
        tol,
    ));
    let x = build_position(grid);
    res.push(equilibrium_residual(s, &x, &s.multiplication(), psi, tol)?);

    // state-level report
    let qgr = qgr_report(
        a,
        b,
        s,
        psi,
        QgrOptions {
            modes: cfg.modes,
            independent_uv: false,
            tolerance: tol,
        },
    )?;
    res.extend(qgr.residuals.iter().cloned().map(|mut r| {
        r.name = format!("qgr: {}", r.name);
        r
    }));
    res.push(IdentityResidual::evaluate(
        "|<psi|psi> - 1| <= 1e-12",
        ResidualKind::Algebraic,
        0.0,
        0.0,
        0.0,
        (psi.norm_sqr() - 1.0).abs(),
        1e-12,
    ));
    res.extend(hermitian_pair_checks(a, b, psi, tol)?);
    let bb = bracket_bound_report(s, a, b, psi)?;
    res.extend(bracket_bound_checks(&bb, tol));
    let adj = Modes {
        lift: cfg.modes.lift,
        inner_product: InnerProductMode::AdjointConsistent,
    };
    let xx = qgr_report(
        &x,
        &x,
        s,
        psi,
        QgrOptions {
            modes: adj,
            independent_uv: false,
            tolerance: tol,
        },
    )?;
    res.push(IdentityResidual::scalars(
        "A = B = x: epsilon = 0",
        xx.epsilon,
        C64::new(0.0, 0.0),
        xx.Xi.norm(),
        tol,
    ));

    let expansion = rho_curvature_expansion(s, grid, bundle.scheme, k, psi)?;
    res.push(IdentityResidual::scalars(
        "rho(p_geo,s) = Sigma2_p - sigma2_p",
        expansion.direct,
        expansion.master,
        expansion.direct.norm().max(expansion.master.norm()),
        tol,
    ));

    if s.is_zero() {
        let geo = [
            geomutator(s, a, b)?.max_norm(),
            anti_geomutator(s, a, b)?.max_norm(),
            qgr.rho_A.norm(),
            qgr.rho_B.norm(),
            qgr.Theta.norm(),
            qgr.J.norm(),
            qgr.vartheta.norm(),
            qgr.diagnostics.epsilon_mode_difference.norm(),
        ];
        let worst = geo.iter().cloned().fold(0.0f64, f64::max);
        res.push(vanishing("s = 0: geometric terms vanish", worst));
    }

    // dynamics
    let dec = decomposition_residual(a, &bundle.h, s, k, tol)?;
    res.push(dec.forward);

    // continuum identities, built from the bundle's derivative matrix
    let minus_ih = C64::new(0.0, -k.hbar);
    let p_cl = d.scaled(minus_ih);
    let p_geo = d
        .plus(&build_multiplication_real(grid, s.s1())?)?
        .scaled(minus_ih);
    res.push(geometric_ccr_with(s, &p_geo, k, psi, tol_c)?);
    res.push(product_rule_with(s, d, psi, tol_c)?);
    res.push(gac_1d_closed_forms(
        s,
        grid,
        bundle.scheme,
        k,
        psi,
        MomentumKind::Geomentum,
        tol_c,
    )?);
    res.push(gac_1d_closed_forms(
        s,
        grid,
        bundle.scheme,
        k,
        psi,
        MomentumKind::Classical,
        tol_c,
    )?);
    res.push(dk_ccr_residual(s, grid, bundle.scheme, psi, tol_c)?);
    res.push(g_dynamics_free_residual(s, bundle.scheme, k, psi, tol_c)?);
    let psi_v = psi.amplitudes();
    let ccr = commutator_cr(&x, &p_cl)?.apply(psi_v);
    res.push(IdentityResidual::states(
        "[x,p] = i hbar",
        ResidualKind::Continuum,
        grid,
        &ccr,
        &(psi_v * (I * k.hbar)),
        tol_c,
    ));
    let anti = anticommutator_ir(&x, &p_cl)?.apply(psi_v);
    let xd = &grid.points().mapv(|v| C64::new(v, 0.0)) * &d.apply(psi_v);
    let want = (psi_v * 0.5 + &xd) * (-2.0 * I * k.hbar);
    res.push(IdentityResidual::states(
        "{x,p} = -2i hbar (1/2 + x d/dx)",
        ResidualKind::Continuum,
        grid,
        &anti,
        &want,
        tol_c,
    ));
    let sx = variance(&x, psi)?.std_dev.re;
    let sp = variance(&build_momentum_classical(grid, bundle.scheme, k)?, psi)?
        .std_dev
        .re;
    let half = 0.5 * k.hbar;
    res.push(IdentityResidual::evaluate(
        "sigma_x sigma_p = hbar/2",
        ResidualKind::Continuum,
        sx * sp,
        half,
        0.0,
        (sx * sp - half).abs(),
        tol_c,
    ));

    // randomized battery on a coarse copy of the domain
    let fg = Grid::new(grid.x_min(), grid.x_max(), FUZZ_N, grid.boundary())?;
    let fs = cfg.structure.structure(&fg)?;
    res.extend(fuzz_battery(&fg, &fs, cfg.seed, FUZZ_PAIRS, tol)?);

    let pass_count = res.iter().filter(|r| r.pass).count();
    let fail_count = res.len() - pass_count;
    Ok(SuiteResult {
        scenario: cfg.clone(),
        qgr,
        residuals: res,
        pass_count,
        fail_count,
        wall_time_s: None,
        diagnostics: SuiteDiagnostics {
            continuum_tolerance: tol_c,
            bracket_bounds: bb,
            rho_expansion: expansion,
            decomposition_reversed: dec.reversed,
            lift_short_forms: lift_short_form_residuals(a, b, s, tol)?.to_vec(),
            fuzz_pairs: FUZZ_PAIRS,
        },
        warnings: bundle.warnings.clone(),
    })
}

/// Pass/fail totals and the worst relative residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pass: usize,
    pub fail: usize,
    pub worst_residual_name: String,
    pub worst_rel_residual: f64,
}

impl Summary {
    /// The worst residual is measured against its tolerance, so a failing
    /// continuum check outranks a passing algebraic one.
    pub fn of<'a>(residuals: impl IntoIterator<Item = &'a IdentityResidual>) -> Summary {
        let mut s = Summary {
            pass: 0,
            fail: 0,
            worst_residual_name: String::new(),
            worst_rel_residual: 0.0,
        };
        let mut worst_ratio = f64::NEG_INFINITY;
        for r in residuals {
            if r.pass {
                s.pass += 1;
            } else {
                s.fail += 1;
            }
            let ratio = if r.rel_residual.is_nan() {
                f64::INFINITY
            } else {
                r.rel_residual / r.tolerance
            };
            if ratio > worst_ratio {
                worst_ratio = ratio;
                s.worst_residual_name = r.name.clone();
                s.worst_rel_residual = r.rel_residual;
            }
        }
        s
    }
}

/// One row of a parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub sigma_x: f64,
    pub sigma_p: f64,
    pub product: f64,
    pub qgr_value: f64,
    #[serde(rename = "Theta")]
    pub theta: f64,
    #[serde(rename = "Xi")]
    pub xi: f64,
    pub epsilon: f64,
    #[serde(rename = "robertson_C")]
    pub robertson_c: f64,
    pub herm_defect: f64,
}

/// Copy of `cfg` with the numeric field at `path` (dotted) set to `value`.
pub fn with_param(cfg: &ScenarioConfig, path: &str, value: f64) -> Result<ScenarioConfig> {
    let mut root = serde_json::to_value(cfg).expect("config serializes");
    let mut node = &mut root;
    for seg in path.split('.') {
        node = match node {
            Value::Object(map) => map
                .get_mut(seg)
                .ok_or_else(|| QgrError::UnknownParamPath(path.to_string()))?,
            _ => return Err(QgrError::UnknownParamPath(path.to_string())),
        };
    }
    let Value::Number(num) = node else {
        return Err(invalid(path, "not a numeric field"));
    };
    *node = if num.is_f64() {
        serde_json::Number::from_f64(value)
            .map(Value::Number)
            .ok_or_else(|| invalid(path, "must be finite"))?
    } else {
        if !(value.is_finite() && value >= 0.0) {
            return Err(invalid(path, "must be a nonnegative integer"));
        }
        Value::from(value.round() as u64)
    };
    let out: ScenarioConfig =
        serde_json::from_value(root).map_err(|e| invalid(path, strip_position(&e)))?;
    out.validate()?;
    Ok(out)
}

pub fn sweep_row(cfg: &ScenarioConfig, param: f64) -> Result<SweepRow> {
    let b = build_scenario(cfg)?;
    let r = qgr_report(
        &b.a,
        &b.b,
        &b.s,
        &b.psi,
        QgrOptions {
            modes: cfg.modes,
            independent_uv: false,
            tolerance: cfg.tolerances.algebraic,
        },
    )?;
    Ok(SweepRow {
        param,
        sigma_x: r.sigma2_A.sqrt().re,
        sigma_p: r.sigma2_B.sqrt().re,
        product: r.sigma_product.re,
        qgr_value: r.qgr_value.re,
        theta: r.Theta.re,
        xi: r.Xi.re,
        epsilon: r.epsilon.re,
        robertson_c: r.robertson_C,
        herm_defect: r.hermiticity_defects.max_abs(),
    })
}

/// Evaluate the QGR report at `steps` evenly spaced values of `param_path`.
/// Rows come back in parameter order.
pub fn sweep(
    cfg: &ScenarioConfig,
    param_path: &str,
    from: f64,
    to: f64,
    steps: usize,
) -> Result<Vec<SweepRow>> {
    if steps < 2 {
        return Err(QgrError::TooFewSteps);
    }
    if !(from.is_finite() && to.is_finite()) {
        return Err(invalid("from/to", "must be finite"));
    }
    let values: Vec<f64> = (0..steps)
        .map(|i| from + (to - from) * i as f64 / (steps - 1) as f64)
        .collect();
    // resolve the path once so a bad path fails before any work
    with_param(cfg, param_path, values[0])?;
    values
        .par_iter()
        .map(|&v| sweep_row(&with_param(cfg, param_path, v)?, v))
        .collect()
}

/// Built-in matrix for the self-test: structure family x scheme x
/// inner-product mode.
pub fn selftest_matrix(quick: bool, seed: u64) -> Vec<(String, ScenarioConfig)> {
    let n = if quick { 128 } else { 512 };
    let families = [
        ("zero", FunctionSpec::new(FunctionFamily::Zero, 0.0)),
        ("sine", FunctionSpec::new(FunctionFamily::Sine, 0.1)),
        ("linear", FunctionSpec::new(FunctionFamily::Linear, 0.2)),
    ];
    let schemes = [
        (DerivativeScheme::Fd4, Boundary::Dirichlet),
        (DerivativeScheme::Spectral, Boundary::Periodic),
    ];
    let modes = [
        InnerProductMode::Literal,
        InnerProductMode::AdjointConsistent,
    ];
    let mut out = Vec::new();
    for (fname, f) in &families {
        for (scheme, boundary) in schemes {
            for ip in modes {
                let cfg = ScenarioConfig {
                    grid: GridConfig {
                        x_min: -20.0,
                        x_max: 20.0,
                        n,
                        boundary,
                    },
                    scheme,
                    structure: f.clone(),
                    state: StateConfig {
                        x0: 0.5,
                        p0: 0.7,
                        ..Default::default()
                    },
                    modes: Modes {
                        lift: LiftMode::Composition,
                        inner_product: ip,
                    },
                    seed,
                    ..Default::default()
                };
                let ipn = match ip {
                    InnerProductMode::Literal => "paper-literal",
                    InnerProductMode::AdjointConsistent => "adjoint-consistent",
                };
                out.push((format!("{fname}/{}/{ipn}", scheme.name()), cfg));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelftestEntry {
    pub name: String,
    pub result: SuiteResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub version: String,
    pub seed: u64,
    pub quick: bool,
    pub entries: Vec<SelftestEntry>,
    /// number of distinct check names across all entries
    pub distinct_checks: usize,
    pub summary: Summary,
}

/// Run the self-test matrix. `tolerance` overrides both tolerance fields.
pub fn run_selftest(quick: bool, seed: u64, tolerance: Option<f64>) -> Result<SelftestReport> {
    let mut entries = Vec::new();
    for (name, mut cfg) in selftest_matrix(quick, seed) {
        if let Some(t) = tolerance {
            cfg.tolerances = Tolerances {
                algebraic: t,
                continuum_base: t,
            };
        }
        let bundle = build_scenario(&cfg)?;
        let result = run_suite(&bundle, &cfg)?;
        entries.push(SelftestEntry { name, result });
    }
    let mut names: Vec<&str> = entries
        .iter()
        .flat_map(|e| e.result.residuals.iter().map(|r| r.name.as_str()))
        .collect();
    names.sort_unstable();
    names.dedup();
    let distinct_checks = names.len();
    let summary = Summary::of(entries.iter().flat_map(|e| e.result.residuals.iter()));
    Ok(SelftestReport {
        version: crate::VERSION.to_string(),
        seed,
        quick,
        entries,
        distinct_checks,
        summary,
    })
}
