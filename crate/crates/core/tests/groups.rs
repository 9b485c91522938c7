use lieconv::geometry::{distance_matrix, farthest_point_from, group_distance, neighborhood_query, DistanceConfig};
use lieconv::groups::{lift, orbit_origin, GroupElement, GroupId, LieAlgebraVector, Point};
use lieconv::matlie::{frobenius_norm, mat_exp};
use lieconv::net::{random_points, transform_samples};
use lieconv::rng::stream;
use proptest::prelude::*;

fn any_group() -> impl Strategy<Value = GroupId> {
    prop::sample::select(GroupId::all())
}

fn element(g: GroupId, seed: u64) -> GroupElement {
    GroupElement::random(g, 1.5, &mut stream(seed, "prop/element"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exp_of_log_returns_the_element(g in any_group(), seed in any::<u64>()) {
        let u = element(g, seed);
        let back = GroupElement::exp(&u.log());
        prop_assert!(back.matrix().max_abs_diff(u.matrix()) < 1e-9);
    }

    #[test]
    fn closed_form_exp_matches_matrix_exp(g in any_group(), seed in any::<u64>()) {
        let a = LieAlgebraVector::random(g, 3.0, 1.0, &mut stream(seed, "prop/algebra"));
        let closed = GroupElement::exp(&a);
        let series = mat_exp(&a.hat()).unwrap();
        prop_assert!(closed.matrix().max_abs_diff(&series) < 1e-9);
    }

    #[test]
    fn distance_is_left_invariant_and_symmetric(g in any_group(), seed in any::<u64>()) {
        let (w, u, v) = (element(g, seed), element(g, seed ^ 1), element(g, seed ^ 2));
        let d = group_distance(&u, &v).unwrap();
        let dw = group_distance(&w.compose(&u).unwrap(), &w.compose(&v).unwrap()).unwrap();
        prop_assert!((d - dw).abs() < 1e-8);
        prop_assert!((d - group_distance(&v, &u).unwrap()).abs() < 1e-8);
        prop_assert!(d >= 0.0);
    }

    #[test]
    fn metric_groups_satisfy_the_triangle_inequality(g in any_group(), seed in any::<u64>()) {
        prop_assume!(g.distance_is_metric());
        let (a, b, c) = (element(g, seed), element(g, seed ^ 5), element(g, seed ^ 9));
        let ab = group_distance(&a, &b).unwrap();
        let bc = group_distance(&b, &c).unwrap();
        let ac = group_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn lifted_elements_map_orbit_origins_to_points(g in any_group(), seed in any::<u64>(), k in 1usize..4) {
        let k = if g.multiplicity() == lieconv::groups::LiftMultiplicity::OneToOne { 1 } else { k };
        let pts = random_points(g, 5, 1, &mut stream(seed, "prop/points"));
        let samples = lift(&pts, g, k, &mut stream(seed, "prop/lift")).unwrap();
        prop_assert_eq!(samples.len(), 5 * k);
        for s in &samples {
            let x = s.u.act(&orbit_origin(g, &s.q)).unwrap();
            let target = &pts[s.source_index].x;
            let err = x.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-9, "{g}: {x:?} vs {target:?}");
            prop_assert_eq!(&s.f, &pts[s.source_index].f);
        }
    }

    #[test]
    fn transformed_samples_keep_their_distances(g in any_group(), seed in any::<u64>()) {
        let pts = random_points(g, 6, 0, &mut stream(seed, "prop/points"));
        let samples = lift(&pts, g, 1, &mut stream(seed, "prop/lift")).unwrap();
        let moved = transform_samples(&samples, &element(g, seed ^ 3)).unwrap();
        let cfg = DistanceConfig::global(1.0);
        let a = distance_matrix(&samples, &cfg).unwrap();
        let b = distance_matrix(&moved, &cfg).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-8));
        let fa = farthest_point_from(&a, 6, 4, 0).unwrap();
        let fb = farthest_point_from(&b, 6, 4, 0).unwrap();
        prop_assert_eq!(fa, fb);
    }

    #[test]
    fn neighborhoods_contain_their_center(g in any_group(), seed in any::<u64>(), r in 0.0f64..3.0) {
        let pts = random_points(g, 8, 0, &mut stream(seed, "prop/points"));
        let samples = lift(&pts, g, 1, &mut stream(seed, "prop/lift")).unwrap();
        let cfg = DistanceConfig::new(r, 1.0, 8).unwrap();
        for h in neighborhood_query(&samples, &cfg, &mut stream(seed, "prop/nbhd")).unwrap() {
            prop_assert!(h.member_indices.contains(&h.center_index));
        }
    }
}

#[test]
fn frobenius_of_rotation_generator() {
    let a = LieAlgebraVector::new(GroupId::SO2, vec![0.7]).unwrap();
    assert!((frobenius_norm(&a.hat()) - 0.7 * 2f64.sqrt()).abs() < 1e-15);
    let _ = Point::new(vec![0.0, 0.0], vec![]);
}
