//! Acceptance checks, one line per criterion. Exits nonzero if any fails.

use std::time::Instant;

use qgr_core::cli::to_json;
use qgr_core::geobracket::{anti_geomutator, geomutator, IdentityResidual, StructureFunction};
use qgr_core::geomertainty::{
    gac_1d_closed_forms, geometric_ccr_residual, lift_short_form_residuals, product_rule_residual,
    qgr_report, rho_curvature_expansion, InnerProductMode, LiftMode, Modes, MomentumKind,
    QgrOptions,
};
use qgr_core::grid::{gaussian_packet, make_grid, Boundary, Grid, PhysicalConstants};
use qgr_core::op_algebra::{build_position, DerivativeScheme};
use qgr_core::scenarios::{
    build_scenario, fuzz_case, random_hermitian, random_state, run_selftest, run_suite,
    FunctionFamily, FunctionSpec, GridConfig, OperatorSpec, PairConfig, ScenarioConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ALG_TOL: f64 = 1e-10;
const SEED: u64 = 42;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "[{}] criterion {id}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn sine(grid: &Grid, a: f64) -> StructureFunction {
    StructureFunction::from_fns(grid, |x| a * x.sin(), |x| a * x.cos(), |x| -a * x.sin()).unwrap()
}

fn linear(grid: &Grid, a: f64) -> StructureFunction {
    StructureFunction::from_fns(grid, |x| a * x, |_| a, |_| 0.0).unwrap()
}

fn reduction_config() -> ScenarioConfig {
    ScenarioConfig {
        grid: GridConfig {
            x_min: -20.0,
            x_max: 20.0,
            n: 512,
            boundary: Boundary::Periodic,
        },
        scheme: DerivativeScheme::Spectral,
        pair: PairConfig {
            a: OperatorSpec::X,
            b: OperatorSpec::PClassical,
        },
        ..Default::default()
    }
}

fn criterion_1(rep: &mut Report) {
    let cfg = reduction_config();
    let t0 = Instant::now();
    let bundle = build_scenario(&cfg).unwrap();
    let suite = run_suite(&bundle, &cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let q = &suite.qgr;
    let product = q.sigma_product.re;
    let g = geomutator(&bundle.s, &bundle.a, &bundle.b)
        .unwrap()
        .max_norm();
    let z = anti_geomutator(&bundle.s, &bundle.a, &bundle.b)
        .unwrap()
        .max_norm();
    let geo = [
        ("G", g),
        ("Z", z),
        ("rho_A", q.rho_A.norm()),
        ("rho_B", q.rho_B.norm()),
        ("Theta", q.Theta.norm()),
        ("theta", q.theta.norm()),
        ("vartheta", q.vartheta.norm()),
        (
            "eps mode diff",
            q.diagnostics.epsilon_mode_difference.norm(),
        ),
    ];
    let (worst_name, worst) =
        geo.iter()
            .cloned()
            .fold(("", 0.0f64), |m, (n, v)| if v > m.1 { (n, v) } else { m });
    let pass = (product - 0.5).abs() <= 1e-6 && worst <= 1e-12 && suite.all_pass() && elapsed < 5.0;
    rep.line(
        "1",
        pass,
        format!(
            "reduction: sigma_x sigma_p = {product:.15} (|d| {:.2e} <= 1e-6), max geometric {worst_name} = {worst:.2e} <= 1e-12, suite {}/{} pass, {elapsed:.2}s < 5s",
            (product - 0.5).abs(),
            suite.pass_count,
            suite.pass_count + suite.fail_count
        ),
    );
}

struct Ensemble {
    residuals: Vec<IdentityResidual>,
    short_forms: Vec<IdentityResidual>,
    cases: usize,
    seconds: f64,
}

fn ensemble() -> Ensemble {
    let t0 = Instant::now();
    let grid = make_grid(-20.0, 20.0, 64, Boundary::Dirichlet).unwrap();
    let structures = [
        StructureFunction::zero(&grid),
        sine(&grid, 0.1),
        linear(&grid, 0.2),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut residuals = Vec::new();
    let mut short_forms = Vec::new();
    let mut cases = 0;
    for s in &structures {
        for _ in 0..100 {
            let a = random_hermitian(&grid, &mut rng, "A").unwrap();
            let b = random_hermitian(&grid, &mut rng, "B").unwrap();
            let h = random_hermitian(&grid, &mut rng, "H").unwrap();
            let psi = random_state(&grid, &mut rng).unwrap();
            residuals.extend(fuzz_case(s, &a, &b, &h, &psi, ALG_TOL).unwrap());
            short_forms.extend(lift_short_form_residuals(&a, &b, s, ALG_TOL).unwrap());
            cases += 1;
        }
    }
    Ensemble {
        residuals,
        short_forms,
        cases,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn worst<'a>(items: impl Iterator<Item = &'a IdentityResidual>) -> (usize, usize, String, f64) {
    let (mut n, mut fails, mut name, mut w) = (0, 0, String::new(), 0.0f64);
    for r in items {
        n += 1;
        if !r.pass {
            fails += 1;
        }
        if r.rel_residual > w || (!r.pass && name.is_empty()) {
            w = r.rel_residual;
            name = r.name.clone();
        }
    }
    (n, fails, name, w)
}

fn is_positivity(name: &str) -> bool {
    name.starts_with("epsilon >= 0")
        || name.starts_with("Schrodinger")
        || name.starts_with("sigma_A sigma_B >= C")
}

fn criterion_2(rep: &mut Report, e: &Ensemble) {
    let exact = e
        .residuals
        .iter()
        .filter(|r| !is_positivity(&r.name) && !r.name.starts_with("<A^2><B^2>"));
    let (n, fails, name, w) = worst(exact);
    let (ns, fails_s, _, ws) = worst(e.short_forms.iter());
    let pass = fails == 0 && fails_s == 0 && e.cases >= 100 && e.seconds < 60.0;
    rep.line(
        "2",
        pass,
        format!(
            "{} random Hermitian pairs (n=64, s in {{0, 0.1 sin x, 0.2 x}}): {n} exact checks, {fails} fail (worst {name} {w:.2e}); \
             short lift-product forms [A^s,B^s] = [A,B]_s + 2[A,B]s and {{A^s,B^s}} = {{A,B}}_s + 2AsBs: {ns} checks, {fails_s} fail \
             (worst {ws:.2e}); {:.1}s < 60s",
            e.cases, e.seconds
        ),
    );
}

fn criterion_3(rep: &mut Report, e: &Ensemble) {
    let (n, fails, name, w) = worst(e.residuals.iter().filter(|r| is_positivity(&r.name)));
    rep.line(
        "3",
        fails == 0 && n > 0,
        format!("adjoint epsilon >= -1e-10, Schrodinger delta >= -1e-10, Robertson: {n} checks, {fails} fail (worst {name} {w:.2e})"),
    );
}

fn order(r: &[f64]) -> Vec<f64> {
    r.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn criterion_4(rep: &mut Report) {
    let k = PhysicalConstants::default();
    type Check =
        fn(&Grid, &StructureFunction, DerivativeScheme, &PhysicalConstants) -> IdentityResidual;
    let checks: [(&str, Check); 4] = [
        ("geometric CCR", |g, s, sc, k| {
            let psi = gaussian_packet(g, 0.0, 0.0, 1.0, k).unwrap();
            geometric_ccr_residual(g, s, sc, k, &psi, 1.0).unwrap()
        }),
        ("geomentum GAC closed form", |g, s, sc, k| {
            let psi = gaussian_packet(g, 0.0, 0.0, 1.0, k).unwrap();
            gac_1d_closed_forms(s, g, sc, k, &psi, MomentumKind::Geomentum, 1.0).unwrap()
        }),
        ("classical GAC closed form", |g, s, sc, k| {
            let psi = gaussian_packet(g, 0.0, 0.0, 1.0, k).unwrap();
            gac_1d_closed_forms(s, g, sc, k, &psi, MomentumKind::Classical, 1.0).unwrap()
        }),
        ("[s,D] = -s'", |g, s, sc, k| {
            let psi = gaussian_packet(g, 0.0, 0.0, 1.0, k).unwrap();
            product_rule_residual(s, sc, &psi, 1.0).unwrap()
        }),
    ];
    let ns = [128usize, 256, 512, 1024];
    let mut all_pass = true;
    let mut parts = Vec::new();
    for (name, f) in checks {
        for (scheme, target, band) in [
            (DerivativeScheme::Fd2, 2.0, 0.5),
            (DerivativeScheme::Fd4, 4.0, 0.7),
        ] {
            let res: Vec<f64> = ns
                .iter()
                .map(|&n| {
                    let g = make_grid(-20.0, 20.0, n, Boundary::Dirichlet).unwrap();
                    f(&g, &sine(&g, 0.1), scheme, &k).rel_residual
                })
                .collect();
            let p = order(&res);
            let ok = p.iter().all(|o| (o - target).abs() <= band);
            all_pass &= ok;
            let ps: Vec<String> = p.iter().map(|o| format!("{o:.2}")).collect();
            parts.push(format!(
                "{name} {} orders [{}]",
                scheme.name(),
                ps.join(", ")
            ));
        }
        let g = make_grid(-20.0, 20.0, 256, Boundary::Periodic).unwrap();
        let r = f(&g, &sine(&g, 0.1), DerivativeScheme::Spectral, &k).rel_residual;
        let ok = r <= 1e-8;
        all_pass &= ok;
        parts.push(format!("{name} spectral n=256 {r:.2e}"));
    }
    rep.line(
        "4",
        all_pass,
        format!(
            "convergence (fd2 2.0±0.5, fd4 4.0±0.7, spectral <= 1e-8): {}",
            parts.join("; ")
        ),
    );
}

fn criterion_5(rep: &mut Report) {
    let g = make_grid(-20.0, 20.0, 512, Boundary::Dirichlet).unwrap();
    let k = PhysicalConstants::default();
    let psi = gaussian_packet(&g, 0.3, 0.7, 1.0, &k).unwrap();
    let x = build_position(&g);
    let modes = Modes {
        lift: LiftMode::Composition,
        inner_product: InnerProductMode::AdjointConsistent,
    };
    let mut worst = 0.0f64;
    for family in [
        FunctionFamily::Zero,
        FunctionFamily::Constant,
        FunctionFamily::Linear,
        FunctionFamily::Quadratic,
        FunctionFamily::GaussBump,
        FunctionFamily::Sine,
    ] {
        let s = FunctionSpec::new(family, 0.1).structure(&g).unwrap();
        let r = qgr_report(
            &x,
            &x,
            &s,
            &psi,
            QgrOptions {
                modes,
                independent_uv: false,
                tolerance: ALG_TOL,
            },
        )
        .unwrap();
        worst = worst.max(r.epsilon.norm());
    }
    rep.line(
        "5",
        worst <= 1e-10,
        format!(
            "A = B = x, six structure families, adjoint mode: max |epsilon| = {worst:.2e} <= 1e-10"
        ),
    );
}

fn criterion_6(rep: &mut Report, e: &Ensemble) {
    let (n, fails, _, w) = worst(
        e.residuals
            .iter()
            .filter(|r| r.name.starts_with("<A^2><B^2>")),
    );
    rep.line("6", fails == 0 && n > 0, format!("<A^2><B^2> >= (<C>^2 + <D>^2)/4 - 1e-10: {n} checks, {fails} fail (max violation {w:.2e})"));
}

fn criterion_7(rep: &mut Report) {
    let k = PhysicalConstants::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for (scheme, boundary) in [
        (DerivativeScheme::Fd4, Boundary::Dirichlet),
        (DerivativeScheme::Spectral, Boundary::Periodic),
    ] {
        let g = make_grid(-20.0, 20.0, 512, boundary).unwrap();
        let psi = gaussian_packet(&g, 0.0, 0.5, 1.0, &k).unwrap();
        let e = rho_curvature_expansion(&sine(&g, 0.1), &g, scheme, &k, &psi).unwrap();
        let gap = (e.direct - e.master).norm();
        pass &= gap <= 1e-10;
        parts.push(format!(
            "{}: |rho - (Sigma2 - sigma2)| = {gap:.2e}, five-term expansion residual {:.3e} (reported)",
            scheme.name(),
            e.residual
        ));
    }
    rep.line("7", pass, parts.join("; "));
}

fn criteria_8_9(rep: &mut Report) {
    let t0 = Instant::now();
    let quick = run_selftest(true, SEED, None).unwrap();
    let t_quick = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let a = to_json(&run_selftest(false, SEED, None).unwrap());
    let t_full = t1.elapsed().as_secs_f64();
    let b_report = run_selftest(false, SEED, None).unwrap();
    let b = to_json(&b_report);
    rep.line(
        "8",
        a == b,
        format!(
            "two full selftest runs with seed {SEED}: {} bytes each, byte-identical = {}",
            a.len(),
            a == b
        ),
    );
    let pass =
        quick.summary.fail == 0 && b_report.summary.fail == 0 && t_quick < 60.0 && t_full < 600.0;
    rep.line(
        "9",
        pass,
        format!(
            "selftest --quick {t_quick:.1}s < 60s ({} fail), full {t_full:.1}s < 600s ({} fail, {} distinct checks)",
            quick.summary.fail, b_report.summary.fail, b_report.distinct_checks
        ),
    );
}

fn main() {
    let mut rep = Report { failed: 0 };
    criterion_1(&mut rep);
    let e = ensemble();
    criterion_2(&mut rep, &e);
    criterion_3(&mut rep, &e);
    criterion_4(&mut rep);
    criterion_5(&mut rep);
    criterion_6(&mut rep, &e);
    criterion_7(&mut rep);
    criteria_8_9(&mut rep);
    println!("acceptance: {} of 9 criteria failed", rep.failed);
    if rep.failed > 0 {
        std::process::exit(1);
    }
}
