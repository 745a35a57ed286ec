use std::sync::Arc;

use dfo_core::datagen::generate;
use dfo_core::dfmd::{
    entropy_geometry, kl_divergence, quadratic_geometry, separate_convexity_gap, three_point_gap,
    DecisionDomain, MirrorGeometry, PositiveMeasure, ProbabilityVector,
};
use dfo_core::kernel::{CenterSet, MercerKernel, RkhsFunction, RkhsSpace};
use nalgebra::DVector;
use proptest::prelude::*;

fn space() -> Arc<RkhsSpace> {
    let data = generate(2, 3, 2, 17).unwrap();
    RkhsSpace::new(
        MercerKernel::gaussian(0.9).unwrap(),
        CenterSet::new(data.all_inputs()).unwrap(),
    )
    .unwrap()
}

fn func(space: &Arc<RkhsSpace>, c: &[f64]) -> RkhsFunction {
    RkhsFunction::from_coefficients(space, DVector::from_fn(space.len(), |i, _| c[i % c.len()]))
        .unwrap()
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..10.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn entropy_three_point_identity(n in 2usize..8, seed in prop::collection::vec(1e-3f64..10.0, 24)) {
        let g = entropy_geometry(n).unwrap();
        let pick = |k: usize| PositiveMeasure::from_weights(&seed[k * 8..k * 8 + n]).unwrap();
        let gap = three_point_gap(&g, &pick(0), &pick(1), &pick(2)).unwrap();
        prop_assert!(gap.abs() <= 1e-9, "{gap}");
    }

    #[test]
    fn quadratic_three_point_identity(
        a in prop::collection::vec(-5.0f64..5.0, 6),
        b in prop::collection::vec(-5.0f64..5.0, 6),
        c in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let s = space();
        let gap = three_point_gap(&quadratic_geometry(), &func(&s, &a), &func(&s, &b), &func(&s, &c)).unwrap();
        prop_assert!(gap.abs() <= 1e-9, "{gap}");
    }

    #[test]
    fn entropy_separate_convexity(
        f in weights(5),
        pts in prop::collection::vec(weights(5), 2..5),
        a in prop::collection::vec(0.01f64..1.0, 4),
    ) {
        let g = entropy_geometry(5).unwrap();
        let f = PositiveMeasure::from_weights(&normalized(&f)).unwrap();
        let points: Vec<_> = pts.iter().map(|w| PositiveMeasure::from_weights(&normalized(w)).unwrap()).collect();
        let refs: Vec<_> = points.iter().collect();
        let a = normalized(&a[..points.len()]);
        let gap = separate_convexity_gap(&g, &f, &a, &refs).unwrap();
        prop_assert!(gap <= 1e-10, "{gap}");
    }

    #[test]
    fn quadratic_separate_convexity(
        f in prop::collection::vec(-5.0f64..5.0, 6),
        pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 2..5),
        a in prop::collection::vec(0.01f64..1.0, 4),
    ) {
        let s = space();
        let points: Vec<_> = pts.iter().map(|c| func(&s, c)).collect();
        let refs: Vec<_> = points.iter().collect();
        let a = normalized(&a[..points.len()]);
        let gap = separate_convexity_gap(&quadratic_geometry(), &func(&s, &f), &a, &refs).unwrap();
        prop_assert!(gap <= 1e-10, "{gap}");
    }

    #[test]
    fn simplex_projection_is_bregman_closest(f in weights(4), others in prop::collection::vec(weights(4), 100)) {
        let g = entropy_geometry(4).unwrap();
        let f = PositiveMeasure::from_weights(&f).unwrap();
        let p = g.project(&DecisionDomain::simplex(4).unwrap(), f.clone()).unwrap();
        prop_assert!((p.total_mass() - 1.0).abs() < 1e-12);
        let best = g.bregman(&p, &f).unwrap();
        for w in &others {
            let w = PositiveMeasure::from_weights(&normalized(w)).unwrap();
            prop_assert!(best <= g.bregman(&w, &f).unwrap() + 1e-12);
        }
    }

    #[test]
    fn ball_projection_is_bregman_closest(
        f in prop::collection::vec(-10.0f64..10.0, 6),
        radius in 0.1f64..3.0,
        others in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 100),
    ) {
        let s = space();
        let g = quadratic_geometry();
        let domain = DecisionDomain::rkhs_ball(radius).unwrap();
        let f = func(&s, &f);
        let p = g.project(&domain, f.clone()).unwrap();
        prop_assert!(p.norm() <= radius * (1.0 + 1e-12));
        let best = g.bregman(&p, &f).unwrap();
        for c in &others {
            let w = g.project(&domain, func(&s, c)).unwrap();
            prop_assert!(best <= g.bregman(&w, &f).unwrap() + 1e-9);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_diagonal(p in weights(6), q in weights(6)) {
        let p = ProbabilityVector::new(&normalized(&p)).unwrap();
        let q = ProbabilityVector::new(&normalized(&q)).unwrap();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-15);
    }

    #[test]
    fn bregman_dominates_scaled_distance(p in weights(5), q in weights(5), a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let g = entropy_geometry(5).unwrap();
        let (p, q) = (
            PositiveMeasure::from_weights(&normalized(&p)).unwrap(),
            PositiveMeasure::from_weights(&normalized(&q)).unwrap(),
        );
        let d = g.distance(&p, &q).unwrap();
        prop_assert!(g.bregman(&p, &q).unwrap() >= g.modulus() / 2.0 * d * d - 1e-10);
        prop_assert!(g.bregman(&p, &p).unwrap().abs() <= 1e-15);

        let s = space();
        let quad = quadratic_geometry();
        let (f, h) = (func(&s, &a), func(&s, &b));
        let d = quad.distance(&f, &h).unwrap();
        prop_assert!(quad.bregman(&f, &h).unwrap() >= quad.modulus() / 2.0 * d * d - 1e-10);
        prop_assert!(quad.bregman(&f, &f).unwrap().abs() <= 1e-15);
    }

    #[test]
    fn entropy_maps_are_mutually_inverse(f in weights(5)) {
        let g = entropy_geometry(5).unwrap();
        let f = PositiveMeasure::from_weights(&f).unwrap();
        let back = g.inverse(&g.forward(&f).unwrap()).unwrap();
        prop_assert!((back.weights() - f.weights()).amax() <= 1e-12 * f.weights().amax());
    }
}

#[test]
fn projection_leaves_interior_points_alone() {
    let s = space();
    let f = func(&s, &[0.01, -0.02]);
    let p = quadratic_geometry()
        .project(&DecisionDomain::rkhs_ball(10.0).unwrap(), f.clone())
        .unwrap();
    assert_eq!(p.coefficients(), f.coefficients());
}
