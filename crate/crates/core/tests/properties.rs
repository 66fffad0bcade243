use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qgr_core::dynamics::{covariant_rhs, decomposition_residual};
use qgr_core::geobracket::{
    bracket_bound_report, gac_bracket, geomutator, ggc_bracket, StructureFunction,
};
use qgr_core::geomertainty::{
    lift_identity_residuals, qgr_report, InnerProductMode, LiftMode, Modes, QgrOptions,
};
use qgr_core::grid::{make_grid, Boundary, Grid, PhysicalConstants, WaveFunction};
use qgr_core::op_algebra::{
    adjoint, build_derivative, compose, linear_combine, max_diff, DerivativeScheme, Operator, C64,
};
use qgr_core::scenarios::{random_hermitian, random_state};

const N: usize = 16;

struct Case {
    s: StructureFunction,
    a: Operator,
    b: Operator,
    h: Operator,
    psi: WaveFunction,
}

fn case(seed: u64, amp: f64, k: f64) -> Case {
    let g: Grid = make_grid(-3.0, 3.0, N, Boundary::Dirichlet).unwrap();
    let s = StructureFunction::from_fns(
        &g,
        |x| amp * (k * x).sin(),
        |x| amp * k * (k * x).cos(),
        |x| -amp * k * k * (k * x).sin(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_hermitian(&g, &mut rng, "A").unwrap();
    let b = random_hermitian(&g, &mut rng, "B").unwrap();
    let h = random_hermitian(&g, &mut rng, "H").unwrap();
    let psi = random_state(&g, &mut rng).unwrap();
    Case { s, a, b, h, psi }
}

fn close(x: &Operator, y: &Operator) -> bool {
    max_diff(x, y) <= 1e-12 * x.max_norm().max(y.max_norm()).max(1.0)
}

fn neg(x: &Operator) -> Operator {
    x.scaled(C64::new(-1.0, 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bracket_symmetries(seed in any::<u64>(), amp in -1.0f64..1.0, k in 0.1f64..3.0) {
        let c = case(seed, amp, k);
        prop_assert!(close(&geomutator(&c.s, &c.a, &c.b).unwrap(), &neg(&geomutator(&c.s, &c.b, &c.a).unwrap())));
        prop_assert!(close(&ggc_bracket(&c.s, &c.a, &c.b).unwrap(), &neg(&ggc_bracket(&c.s, &c.b, &c.a).unwrap())));
        prop_assert!(close(&gac_bracket(&c.s, &c.a, &c.b).unwrap(), &gac_bracket(&c.s, &c.b, &c.a).unwrap()));
        prop_assert_eq!(geomutator(&c.s, &c.a, &c.a).unwrap().max_norm(), 0.0);
    }

    #[test]
    fn geomutator_is_linear_in_first_slot(seed in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let c = case(seed, 0.4, 1.0);
        let l = C64::new(re, im);
        let one = C64::new(1.0, 0.0);
        let mix = linear_combine(&[(one, &c.a), (l, &c.h)]).unwrap();
        let lhs = geomutator(&c.s, &mix, &c.b).unwrap();
        let rhs = linear_combine(&[
            (one, &geomutator(&c.s, &c.a, &c.b).unwrap()),
            (l, &geomutator(&c.s, &c.h, &c.b).unwrap()),
        ]).unwrap();
        prop_assert!(close(&lhs, &rhs));
    }

    #[test]
    fn covariant_rhs_is_linear(seed in any::<u64>(), re in -2.0f64..2.0) {
        let c = case(seed, 0.3, 2.0);
        let k = PhysicalConstants::default();
        let l = C64::new(re, 0.0);
        let one = C64::new(1.0, 0.0);
        let mix = linear_combine(&[(one, &c.a), (l, &c.b)]).unwrap();
        let lhs = covariant_rhs(&mix, &c.h, &c.s, &k).unwrap();
        let rhs = linear_combine(&[
            (one, &covariant_rhs(&c.a, &c.h, &c.s, &k).unwrap()),
            (l, &covariant_rhs(&c.b, &c.h, &c.s, &k).unwrap()),
        ]).unwrap();
        prop_assert!(close(&lhs, &rhs));
    }

    #[test]
    fn decomposition_holds(seed in any::<u64>(), amp in -1.0f64..1.0) {
        let c = case(seed, amp, 1.3);
        let d = decomposition_residual(&c.a, &c.h, &c.s, &PhysicalConstants::default(), 1e-12).unwrap();
        prop_assert!(d.forward.pass, "{:?}", d.forward);
    }

    #[test]
    fn lift_identities_hold(seed in any::<u64>(), amp in -1.0f64..1.0) {
        let c = case(seed, amp, 0.7);
        for r in lift_identity_residuals(&c.a, &c.b, &c.s, 1e-12).unwrap() {
            prop_assert!(r.pass, "{:?}", r);
        }
    }

    #[test]
    fn report_identities_hold_in_every_mode(seed in any::<u64>(), amp in -1.0f64..1.0, lift_fn in any::<bool>(), adj in any::<bool>()) {
        let c = case(seed, amp, 1.0);
        let modes = Modes {
            lift: if lift_fn { LiftMode::Function } else { LiftMode::Composition },
            inner_product: if adj { InnerProductMode::AdjointConsistent } else { InnerProductMode::Literal },
        };
        let r = qgr_report(&c.a, &c.b, &c.s, &c.psi, QgrOptions { modes, independent_uv: false, tolerance: 1e-10 }).unwrap();
        for x in &r.residuals {
            prop_assert!(x.pass, "{:?}", x);
        }
        if adj {
            prop_assert!(r.epsilon.re >= -1e-10);
            prop_assert_eq!(r.epsilon.im, 0.0);
        }
    }

    #[test]
    fn triangle_bounds(seed in any::<u64>(), amp in -2.0f64..2.0) {
        let c = case(seed, amp, 1.0);
        let bb = bracket_bound_report(&c.s, &c.a, &c.b, &c.psi).unwrap();
        prop_assert!(bb.min_slack() >= -1e-12 * bb.ggc_abs.max(bb.qpb_abs).max(1.0));
    }

    #[test]
    fn adjoint_reverses_products(seed in any::<u64>()) {
        let c = case(seed, 0.0, 1.0);
        let ab = compose(&c.a, &c.h).unwrap();
        prop_assert!(close(&adjoint(&ab), &compose(&adjoint(&c.h), &adjoint(&c.a)).unwrap()));
        prop_assert_eq!(max_diff(&adjoint(&adjoint(&c.b)), &c.b), 0.0);
    }

    #[test]
    fn derivative_matrices_are_antisymmetric(n in 8usize..80, periodic in any::<bool>(), fd2 in any::<bool>()) {
        let boundary = if periodic { Boundary::Periodic } else { Boundary::Dirichlet };
        let g = make_grid(-5.0, 5.0, n, boundary).unwrap();
        let schemes: &[DerivativeScheme] = match (periodic, fd2) {
            (true, _) => &[DerivativeScheme::Fd2, DerivativeScheme::Fd4, DerivativeScheme::Spectral],
            (false, true) => &[DerivativeScheme::Fd2],
            (false, false) => &[DerivativeScheme::Fd4],
        };
        for &sc in schemes {
            let d = build_derivative(&g, sc).unwrap();
            let m = d.matrix();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(m[[i, j]], -m[[j, i]]);
                }
            }
        }
    }

    #[test]
    fn normalization_is_idempotent(seed in any::<u64>()) {
        let g = make_grid(0.0, 1.0, 33, Boundary::Periodic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = random_state(&g, &mut rng).unwrap();
        prop_assert!(psi.is_normalized());
        let again = psi.clone().normalized().unwrap();
        prop_assert!((again.norm_sqr() - 1.0).abs() <= 1e-12);
    }
}
