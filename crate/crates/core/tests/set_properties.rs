//! Property tests for the set, dynamics, robustness and refinement layers.

use nalgebra::Matrix2;
use proptest::prelude::*;
use szn_core::lip::{self, Control, EgoState, LipParams};
use szn_core::refine::{augment_ego, error_generators, personal_space_generators, Gp1, PersonalSpace, SeArd};
use szn_core::stl::{loss_heading, loss_vel, rho_always_band, rho_vel, SpecThresholds};
use szn_core::zono::{Vec2, Zonotope2};

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn zonotope(max_gens: usize) -> impl Strategy<Value = Zonotope2> {
    (vec2(5.0), prop::collection::vec(vec2(2.0), 1..=max_gens)).prop_map(|(c, g)| Zonotope2 { center: c, generators: g })
}

fn direction() -> impl Strategy<Value = Vec2> {
    (0.0..std::f64::consts::TAU).prop_map(|a| Vec2::new(a.cos(), a.sin()))
}

fn ego() -> impl Strategy<Value = EgoState> {
    (-5.0..5.0, -5.0..5.0, -0.1..1.0, -4.0..4.0).prop_map(|(x, y, v_loc, theta)| EgoState { x, y, v_loc, theta })
}

fn control() -> impl Strategy<Value = Control> {
    (-0.1..0.4, -0.26..0.26).prop_map(|(u_f, u_dtheta)| Control { u_f, u_dtheta })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn support_is_additive_under_minkowski_sum(a in zonotope(6), b in zonotope(6), d in direction()) {
        let s = a.minkowski_sum(&b);
        let err = (s.support(&d) - a.support(&d) - b.support(&d)).abs();
        prop_assert!(err <= 1e-9, "{err:e}");
    }

    #[test]
    fn halfspace_offsets_are_supports(z in zonotope(6)) {
        let h = z.to_halfspace().unwrap();
        for (n, b) in h.normals.iter().zip(&h.offsets) {
            prop_assert!((z.support(n) - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn residual_is_midpoint_convex(z in zonotope(5), p in vec2(8.0), q in vec2(8.0)) {
        let m = (p + q) / 2.0;
        let lhs = z.residual(&m).unwrap();
        let rhs = 0.5 * (z.residual(&p).unwrap() + z.residual(&q).unwrap());
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    #[test]
    fn extra_generator_never_shrinks_support(z in zonotope(5), g in vec2(2.0), d in direction()) {
        prop_assert!(z.with_generators(&[g]).support(&d) >= z.support(&d) - 1e-12);
    }

    #[test]
    fn step_moves_exactly_delta_x(s in ego(), u in control()) {
        let p = LipParams::default();
        let n = lip::step(&s, &u, &p);
        let moved = Vec2::new(n.x - s.x, n.y - s.y).norm();
        prop_assert!((moved - lip::delta_x(s.v_loc, u.u_f, &p).abs()).abs() <= 1e-12);
    }

    #[test]
    fn step_is_deterministic_and_continuous(s in ego(), u in control(), e in vec2(1.0)) {
        let p = LipParams::default();
        let a = lip::step(&s, &u, &p);
        prop_assert_eq!(a, lip::step(&s, &u, &p));
        let eps = 1e-7;
        let s2 = EgoState { v_loc: s.v_loc + eps * e.x, ..s };
        let u2 = Control { u_f: u.u_f + eps * e.y, ..u };
        let b = lip::step(&s2, &u2, &p);
        let gap = (a.x - b.x).abs() + (a.y - b.y).abs() + (a.v_loc - b.v_loc).abs() + lip::wrap_angle(a.theta - b.theta).abs();
        prop_assert!(gap < 1e-5, "{gap:e}");
    }

    #[test]
    fn step_map_matches_matrix_exponential(v in -0.1..1.0f64, u_f in -0.1..0.4f64, t in 0.2..0.6f64, z0 in 0.6..1.2f64) {
        let p = LipParams { step_time: t, com_height: z0, ..Default::default() };
        let w2 = p.gravity / p.com_height;
        // CoM relative to the stance foot: ξ'' = ω² ξ, starting at (−u_f, v)
        let phi = (Matrix2::new(0.0, 1.0, w2, 0.0) * t).exp();
        let xi_t = phi[(0, 0)] * -u_f + phi[(0, 1)] * v;
        let v_t = phi[(1, 0)] * -u_f + phi[(1, 1)] * v;
        prop_assert!((lip::delta_x(v, u_f, &p) - (xi_t + u_f)).abs() <= 1e-10);
        prop_assert!((lip::next_velocity(v, u_f, &p) - v_t).abs() <= 1e-10);
    }

    #[test]
    fn band_robustness_is_sound(s in prop::collection::vec(-1.5..1.5f64, 1..12), lo in -1.0..0.0f64, w in 0.1..1.5f64) {
        let hi = lo + w;
        let rho = rho_always_band(&s, lo, hi);
        if rho > 0.0 {
            prop_assert!(s.iter().all(|&v| lo < v && v < hi));
        }
        if rho < 0.0 {
            prop_assert!(s.iter().any(|&v| v < lo || v > hi));
        }
    }

    #[test]
    fn tightening_a_band_never_raises_robustness(
        s in prop::collection::vec(-1.5..1.5f64, 1..12), lo in -1.0..0.0f64, w in 0.5..1.5f64, a in 0.0..0.2f64, b in 0.0..0.2f64,
    ) {
        let hi = lo + w;
        prop_assert!(rho_always_band(&s, lo + a, hi - b) <= rho_always_band(&s, lo, hi));
    }

    #[test]
    fn losses_vanish_exactly_when_satisfied(
        sag in prop::collection::vec(-0.5..1.5f64, 7), lat in prop::collection::vec(-0.8..0.8f64, 7), dth in prop::collection::vec(-0.5..0.5f64, 7),
    ) {
        let th = SpecThresholds::default();
        let lv = loss_vel(&sag, &lat, &th);
        prop_assert!(lv >= 0.0);
        prop_assert_eq!(lv == 0.0, rho_vel(&sag, &lat, &th) >= 0.0);
        let lh = loss_heading(&dth, &th);
        prop_assert!(lh >= 0.0);
        prop_assert_eq!(lh == 0.0, rho_always_band(&dth, -th.dtheta_max, th.dtheta_max) >= 0.0);
    }

    #[test]
    fn augmentation_contains_the_original(z in zonotope(4), theta in -4.0..4.0f64, mu in vec2(0.2), d in direction()) {
        let ps = personal_space_generators(&PersonalSpace::default(), theta);
        let aug = augment_ego(&z, &ps, &error_generators(mu));
        prop_assert!(aug.support(&d) >= z.support(&d) - 1e-12);
    }

    #[test]
    fn gp_variance_is_nonnegative_and_shrinks_with_duplicates(
        pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -0.3..0.3f64, -0.05..0.05f64), 1..15),
        q in (-1.0..1.0f64, -1.0..1.0f64, -0.3..0.3f64), yq in -0.05..0.05f64,
    ) {
        let h = SeArd::default();
        let mut x: Vec<[f64; 3]> = pts.iter().map(|p| [p.0, p.1, p.2]).collect();
        let mut y: Vec<f64> = pts.iter().map(|p| p.3).collect();
        let q = [q.0, q.1, q.2];
        let (_, before) = Gp1::fit(&x, &y, h).unwrap().predict(&q);
        prop_assert!(before >= 0.0);
        x.push(q);
        y.push(yq);
        let (_, after) = Gp1::fit(&x, &y, h).unwrap().predict(&q);
        prop_assert!(after >= 0.0);
        prop_assert!(after <= before + 1e-12, "{after:e} > {before:e}");
    }
}
