use std::f64::consts::PI;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hamshade::acceptance::random_symplectic;
use hamshade::flow::{self, StepPolicy};
use hamshade::hamsys::{Builtin, PhasePoint, SuspensionState, SuspensionSystem};
use hamshade::linalg;
use hamshade::orbits::{self, Classification, UNIT_BAND_EXACT};
use hamshade::poincare;
use hamshade::shades::{breakdown_pseudo_orbit, Reparametrization};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() }
}

fn small_point(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, n)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn energy_is_a_first_integral(x in small_point(4, 1.0)) {
        for b in [Builtin::Harmonic, Builtin::HenonHeiles, Builtin::SaddleCenter] {
            let sys = b.system();
            let x = PhasePoint::from_slice(&x).unwrap();
            let g = sys.gradient(&x).unwrap();
            let f = sys.hamiltonian_field(&x).unwrap();
            prop_assert!(g.dot(&f).abs() <= 1e-10 * (1.0 + g.norm_squared()));
        }
    }

    #[test]
    fn pedro_field_commutes_with_third_turn(x in small_point(2, 2.0)) {
        prop_assume!(x[0].hypot(x[1]) > 1e-3);
        let sys = Builtin::Pedro.system();
        let r = linalg::rotation(2.0 * PI / 3.0);
        let p = PhasePoint::from_slice(&x).unwrap();
        let rp = PhasePoint::new((&r * p.to_vector()).iter().copied().collect()).unwrap();
        let lhs = sys.hamiltonian_field(&rp).unwrap();
        let rhs = &r * sys.hamiltonian_field(&p).unwrap();
        prop_assert!((lhs - &rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn flow_is_reversible(x in small_point(4, 0.3), t in -3.0f64..3.0) {
        let sys = Builtin::HenonHeiles.system();
        let policy = StepPolicy::with_step(1e-2);
        let x0 = PhasePoint::from_slice(&x).unwrap();
        let there = flow::flow_at(&sys, &x0, t, &policy).unwrap();
        let back = flow::flow_at(&sys, &there, -t, &policy).unwrap();
        prop_assert!(back.distance(&x0) <= 1e-6);
    }

    #[test]
    fn tangent_flow_is_symplectic_and_carries_the_field(x in small_point(4, 0.3), t in -3.0f64..3.0) {
        let sys = Builtin::HenonHeiles.system();
        let x0 = PhasePoint::from_slice(&x).unwrap();
        prop_assume!(sys.is_regular(&x0, 1e-3));
        let tf = flow::tangent_flow(&sys, &x0, t, &StepPolicy::with_step(flow::DEFAULT_STEP)).unwrap();
        prop_assert!(tf.symplectic_defect <= 1e-8);
        prop_assert!(tf.equivariance_defect(&sys).unwrap() <= 1e-6);
    }

    #[test]
    fn transversal_map_preserves_the_induced_form(x in small_point(4, 0.3), t in -3.0f64..3.0) {
        let sys = Builtin::HenonHeiles.system();
        let x0 = PhasePoint::from_slice(&x).unwrap();
        prop_assume!(sys.is_regular(&x0, 1e-2));
        let frame = poincare::transversal_frame(&sys, &x0).unwrap();
        prop_assert!(frame.orthogonality_defect(&sys).unwrap() <= 1e-12);
        // The projected form is only as good as the discrete energy conservation, hence the finer step.
        let p = poincare::linear_poincare(&sys, &x0, t, &StepPolicy::with_step(1e-4)).unwrap();
        prop_assert!(p.symplectic_defect() <= 1e-8);
        prop_assert!((p.det() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn symplectic_spectra_pair_up(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symplectic(n, &mut rng);
        prop_assert!(linalg::symplectic_defect(&a) <= 1e-9 * (1.0 + linalg::max_abs(&a).powi(2)));
        prop_assert!((linalg::det(&a) - 1.0).abs() <= 1e-6 * (1.0 + linalg::max_abs(&a).powi(2 * n as i32)));
        let eig = linalg::eigenvalues(&a).unwrap();
        for s in &eig {
            let inv = 1.0 / s;
            let nearest = eig.iter().map(|z| (z - inv).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(nearest <= 1e-6 * (1.0 + inv.norm()));
        }
    }

    #[test]
    fn rotations_are_elliptic(theta in 1e-3f64..(PI - 1e-3), sign in prop::bool::ANY) {
        let theta = if sign { theta } else { -theta };
        let c = orbits::classify_matrix(&linalg::rotation(theta), UNIT_BAND_EXACT).unwrap();
        prop_assert_eq!(c, Classification::Elliptic(1));
    }

    #[test]
    fn nudge_stays_symplectic_and_close(trace in 2.0f64..2.2, shear in -1.0f64..1.0) {
        // Hyperbolic matrix with eigenvalues near 1, conjugated by a shear.
        let l = 0.5 * (trace + (trace * trace - 4.0).sqrt());
        let d = DMatrix::from_row_slice(2, 2, &[l, 0.0, 0.0, 1.0 / l]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, shear, 0.0, 1.0]);
        let si = DMatrix::from_row_slice(2, 2, &[1.0, -shear, 0.0, 1.0]);
        let a = &s * d * si;
        let delta = 0.5;
        let b = orbits::spectral_nudge(&a, delta).unwrap();
        prop_assert!(linalg::symplectic_defect(&b) <= 1e-10);
        prop_assert!(linalg::op_norm(&(&b - &a)).unwrap() <= delta);
        prop_assert!(linalg::eigenvalues(&b).unwrap().iter().any(|z| (z.norm() - 1.0).abs() <= 1e-6));
    }

    #[test]
    fn reparametrization_class_bounds_ratio(slopes in prop::collection::vec(0.8f64..1.2, 2..6), eps in 0.05f64..0.5) {
        // Breakpoints at -1, 0, 1, 2, ...
        let mut bp = vec![(-1.0, -slopes[0]), (0.0, 0.0)];
        for (k, s) in slopes[1..].iter().enumerate() {
            let (t, a) = bp[k + 1];
            bp.push((t + 1.0, a + s));
        }
        let rep = Reparametrization::new(bp, eps).unwrap();
        if rep.in_class(eps) {
            prop_assert!(rep.max_ratio_defect() < eps);
            for t in [-0.9, -0.2, 0.3, 1.7] {
                prop_assert!((rep.eval(t) / t - 1.0).abs() < eps);
            }
        }
        prop_assert_eq!(rep.eval(0.0), 0.0);
    }

    #[test]
    fn breakdown_chains_validate(lift in 0.05f64..0.19, k in 4usize..8, tail in 0usize..3) {
        let sys = Builtin::Harmonic.system();
        let q = PhasePoint::from_slice(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = PhasePoint::from_slice(&[1.0, lift, 0.0, 0.0]).unwrap();
        let delta = 0.2 / 4.0;
        let po = breakdown_pseudo_orbit(&sys, &q, 2.0 * PI, &y, delta, k, tail, &StepPolicy::with_step(1e-2)).unwrap();
        prop_assert_eq!(po.len(), 2 * tail + k + 1);
        prop_assert!(po.jump_errors.iter().all(|e| *e < delta));
        prop_assert!(po.min_time < 2.0 * PI);
    }

    #[test]
    fn suspension_flow_is_a_semigroup(x in 0.0f64..1.0, y in 0.0f64..1.0, r in 0.0f64..0.99, s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let susp = SuspensionSystem::cat_map_constant(1.0).unwrap();
        let z = SuspensionState { base: [x, y], r };
        let a = susp.flow(&susp.flow(&z, s).unwrap(), t).unwrap();
        let b = susp.flow(&z, s + t).unwrap();
        let wrap = |u: f64| (u - u.round()).abs();
        prop_assert!((a.r - b.r).abs() <= 1e-9);
        prop_assert!(wrap(a.base[0] - b.base[0]) <= 1e-9 && wrap(a.base[1] - b.base[1]) <= 1e-9);
    }
}
