use std::sync::Arc;

use proptest::prelude::*;
use submfg::measures::{DiscreteMeasure, MeasureFlow, StateGrid, CDF_TOL};

const M: usize = 9;

fn grid() -> Arc<StateGrid> {
    Arc::new(StateGrid::uniform(-2.0, 2.0, M).unwrap())
}

// Random weights with a fair share of exact zeros, so atoms and gaps both show up.
fn measure() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.0..1.0f64], M)
        .prop_filter("needs mass", |w| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|w| DiscreteMeasure::from_weights(grid(), w).unwrap())
}

fn cdf_gap(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    a.cdf().iter().zip(b.cdf()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn meet_and_join_commute(a in measure(), b in measure()) {
        prop_assert!(cdf_gap(&a.meet(&b).unwrap(), &b.meet(&a).unwrap()) <= CDF_TOL);
        prop_assert!(cdf_gap(&a.join(&b).unwrap(), &b.join(&a).unwrap()) <= CDF_TOL);
    }

    #[test]
    fn meet_and_join_associate(a in measure(), b in measure(), c in measure()) {
        let l = a.meet(&b).unwrap().meet(&c).unwrap();
        let r = a.meet(&b.meet(&c).unwrap()).unwrap();
        prop_assert!(cdf_gap(&l, &r) <= CDF_TOL);
        let l = a.join(&b).unwrap().join(&c).unwrap();
        let r = a.join(&b.join(&c).unwrap()).unwrap();
        prop_assert!(cdf_gap(&l, &r) <= CDF_TOL);
    }

    #[test]
    fn idempotent_and_absorbing(a in measure(), b in measure()) {
        prop_assert!(cdf_gap(&a.meet(&a).unwrap(), &a) <= CDF_TOL);
        prop_assert!(cdf_gap(&a.join(&a).unwrap(), &a) <= CDF_TOL);
        prop_assert!(cdf_gap(&a.meet(&a.join(&b).unwrap()).unwrap(), &a) <= CDF_TOL);
        prop_assert!(cdf_gap(&a.join(&a.meet(&b).unwrap()).unwrap(), &a) <= CDF_TOL);
    }

    #[test]
    fn order_agrees_with_meet_and_join(a in measure(), b in measure()) {
        let le = a.st_le(&b).unwrap();
        prop_assert_eq!(le, cdf_gap(&a.meet(&b).unwrap(), &a) <= CDF_TOL);
        prop_assert_eq!(le, cdf_gap(&a.join(&b).unwrap(), &b) <= CDF_TOL);
        // meet is a lower bound, join an upper bound
        let lo = a.meet(&b).unwrap();
        let hi = a.join(&b).unwrap();
        prop_assert!(lo.st_le(&a).unwrap() && lo.st_le(&b).unwrap());
        prop_assert!(a.st_le(&hi).unwrap() && b.st_le(&hi).unwrap());
    }

    #[test]
    fn meet_is_greatest_lower_bound(a in measure(), b in measure(), c in measure()) {
        // c ∧ a ∧ b is below both, so it must sit below a ∧ b
        let below = c.meet(&a).unwrap().meet(&b).unwrap();
        prop_assert!(below.st_le(&a.meet(&b).unwrap()).unwrap());
        let above = c.join(&a).unwrap().join(&b).unwrap();
        prop_assert!(a.join(&b).unwrap().st_le(&above).unwrap());
    }

    #[test]
    fn order_moves_the_mean(a in measure(), b in measure()) {
        let lo = a.meet(&b).unwrap();
        let hi = a.join(&b).unwrap();
        prop_assert!(lo.mean() <= a.mean().min(b.mean()) + 1e-12);
        prop_assert!(hi.mean() >= a.mean().max(b.mean()) - 1e-12);
    }

    #[test]
    fn kolmogorov_distance_is_a_metric(a in measure(), b in measure(), c in measure()) {
        let d = |x: &DiscreteMeasure, y: &DiscreteMeasure| x.kolmogorov_distance(y).unwrap();
        prop_assert!(d(&a, &a) == 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-15);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-15);
    }

    #[test]
    fn flows_inherit_the_lattice(xs in prop::collection::vec(measure(), 4), ys in prop::collection::vec(measure(), 4)) {
        let f = MeasureFlow::new(xs).unwrap();
        let g = MeasureFlow::new(ys).unwrap();
        let lo = f.meet(&g).unwrap();
        let hi = f.join(&g).unwrap();
        prop_assert!(lo.leq(&f).unwrap() && lo.leq(&g).unwrap());
        prop_assert!(f.leq(&hi).unwrap() && g.leq(&hi).unwrap());
        prop_assert_eq!(f.leq(&g).unwrap(), lo.distance(&f).unwrap() <= CDF_TOL);
    }
}

#[test]
fn diracs_are_ordered_by_location() {
    let g = grid();
    for i in 0..M {
        for j in 0..M {
            let a = DiscreteMeasure::dirac(g.clone(), i).unwrap();
            let b = DiscreteMeasure::dirac(g.clone(), j).unwrap();
            assert_eq!(a.st_le(&b).unwrap(), i <= j);
        }
    }
}

#[test]
fn grid_ends_bound_everything() {
    let g = grid();
    let lo = DiscreteMeasure::dirac(g.clone(), 0).unwrap();
    let hi = DiscreteMeasure::dirac(g.clone(), M - 1).unwrap();
    let mid = DiscreteMeasure::uniform_on(g, -1.0, 1.5).unwrap();
    assert!(lo.st_le(&mid).unwrap() && mid.st_le(&hi).unwrap());
}
