use dshield::abstraction::{
    build_imdp, row_from_posts, transition_bounds, Imdp, ImdpRow, Target,
};
use dshield::geometry::{NoiseCells, Partition, Rect, Region};
use dshield::harness::{sample_transitions, SystemModel};
use dshield::gp::{FitConfig, KernelSpec, PriorMean, Regressor};
use dshield::reach::ReachOptions;
use proptest::prelude::*;

fn grid() -> Partition {
    let domain = Rect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let obstacle = Region {
        label: "b".into(),
        rect: Rect::new(vec![0.5, 0.5], vec![0.75, 1.0]).unwrap(),
    };
    Partition::build(&domain, &[4, 4], &[obstacle], "b").unwrap()
}

fn post_at(c: &[f64], r: f64) -> Rect {
    Rect::new(c.iter().map(|v| v - r).collect(), c.iter().map(|v| v + r).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rows_are_feasible(c in prop::collection::vec(-0.3f64..1.3, 2), r in 0.0f64..0.3,
                         e in 0.0f64..0.1, delta in 1e-9f64..0.5) {
        let part = grid();
        let noise = NoiseCells::uniform(0.02, &[2, 2]).unwrap();
        let mean = post_at(&c, r);
        let posts: Vec<Rect> = noise.cells().iter().map(|n| mean.minkowski_sum(&n.rect)).collect();
        let row = row_from_posts(&part, &noise, &posts, &[e, e], delta);
        prop_assert!(row.lower_sum() <= 1.0 + 1e-9);
        prop_assert!(row.upper_sum(part.num_states()) >= 1.0 - 1e-9);
        for t in 0..part.num_states() {
            let (lo, hi) = row.bounds(t);
            prop_assert!(0.0 <= lo && lo <= hi && hi <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn smaller_error_tightens_bounds(c in prop::collection::vec(-0.3f64..1.3, 2), r in 0.0f64..0.2,
                                     e in 0.0f64..0.1, shrink in 0.0f64..1.0, delta in 1e-9f64..0.5) {
        let part = grid();
        let noise = NoiseCells::uniform(0.02, &[1, 1]).unwrap();
        let posts = vec![post_at(&c, r + 0.02)];
        for t in 0..part.num_cells() {
            let shape = part.cell_shape(t);
            let wide = transition_bounds(&posts, &[e, e], delta, Target::Cell(&shape), &noise);
            let tight = transition_bounds(&posts, &[e * shrink, e * shrink], delta, Target::Cell(&shape), &noise);
            prop_assert!(tight.0 >= wide.0 && tight.1 <= wide.1);
        }
        let d = part.domain().clone();
        let wide = transition_bounds(&posts, &[e, e], delta, Target::Outside(&d), &noise);
        let tight = transition_bounds(&posts, &[e * shrink, e * shrink], delta, Target::Outside(&d), &noise);
        prop_assert!(tight.0 >= wide.0 && tight.1 <= wide.1);
    }

    #[test]
    fn larger_delta_widens_bounds(c in prop::collection::vec(-0.3f64..1.3, 2), e in 0.0f64..0.1,
                                  d1 in 1e-12f64..0.2, d2 in 1e-12f64..0.2) {
        let part = grid();
        let noise = NoiseCells::uniform(0.02, &[1, 1]).unwrap();
        let posts = vec![post_at(&c, 0.05)];
        let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        for t in 0..part.num_cells() {
            let shape = part.cell_shape(t);
            let a = transition_bounds(&posts, &[e, e], small, Target::Cell(&shape), &noise);
            let b = transition_bounds(&posts, &[e, e], large, Target::Cell(&shape), &noise);
            prop_assert!(b.0 <= a.0 && b.1 >= a.1);
        }
    }
}

#[test]
fn exact_post_inside_one_cell_is_certain() {
    let part = grid();
    let noise = NoiseCells::uniform(0.0, &[1, 1]).unwrap();
    let posts = vec![post_at(&[0.1, 0.1], 0.05)];
    let row = row_from_posts(&part, &noise, &posts, &[0.0, 0.0], 0.0);
    assert_eq!(row.bounds(part.locate(&[0.1, 0.1])), (1.0, 1.0));
    for t in 0..part.num_states() {
        if t != part.locate(&[0.1, 0.1]) {
            assert_eq!(row.bounds(t), (0.0, 0.0));
        }
    }
}

#[test]
fn outside_state_is_absorbing_and_text_round_trips() {
    let sys = SystemModel::planar4();
    let data = sample_transitions(&sys, 60, 1).unwrap();
    let cfg = FitConfig {
        noise_std: 0.05,
        budget: 30,
        rkhs_bounds: vec![2.5, 2.5],
        gamma: None,
        prior_mean: PriorMean::Identity,
        seed: 0,
    };
    let reg = Regressor::fit(&data, &KernelSpec::squared_exponential(1.0, 2.0).unwrap(), &cfg).unwrap();
    let part = Partition::build(&sys.domain, &[5, 5], &[], "b").unwrap();
    let noise = NoiseCells::uniform(sys.noise_bound, &[1, 1]).unwrap();
    let imdp = build_imdp(&reg, &part, &noise, 1e-6, &ReachOptions::default()).unwrap();
    let out = part.outside();
    for a in 0..4 {
        assert_eq!(imdp.row(out, a), &ImdpRow::point_mass(out));
    }
    let back = Imdp::from_text(&imdp.to_text()).unwrap();
    assert_eq!(back, imdp);
    assert_eq!(back.partition(), Some(&part));
    let again = build_imdp(&reg, &part, &noise, 1e-6, &ReachOptions::default()).unwrap();
    assert_eq!(again.to_text(), imdp.to_text());
}

#[test]
fn malformed_imdp_text_is_rejected() {
    assert!(Imdp::from_text("dshield-imdp v2\n").is_err());
    assert!(Imdp::from_text("").is_err());
}
