mod common;

use common::*;
use dshield::geometry::Rect;
use dshield::gp::Regressor;
use dshield::reach::{kernel_range, mean_bounds, sup_error_bound, Enclosure, ReachOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn regressor(seed: u64, m: usize, n: usize) -> Regressor {
    let inst = random_gp_instance(&mut ChaCha8Rng::seed_from_u64(seed), m, n);
    Regressor::fit(&inst.data, &inst.kernel, &inst.cfg).unwrap()
}

fn boxed(center: &[f64], r: f64) -> Rect {
    Rect::new(
        center.iter().map(|c| c - r).collect(),
        center.iter().map(|c| c + r).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn samples_stay_inside_enclosures(seed in any::<u64>(), m in 2usize..20, n in 1usize..4,
                                      c in prop::collection::vec(-2.0f64..2.0, 3), r in 0.0f64..0.6,
                                      refined in any::<bool>()) {
        let reg = regressor(seed, m, n);
        let b = boxed(&c[..n], r);
        let opts = if refined { ReachOptions::default() } else { ReachOptions::interval() };
        let mb = mean_bounds(&reg, 0, &b, &opts).unwrap();
        let eps = sup_error_bound(&reg, 0, &b, 0.01, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|i| rng.gen_range(b.lo()[i]..=b.hi()[i])).collect();
            let mean = reg.posterior_mean(0, &x).unwrap();
            let e = reg.error_bound(0, &x, 0.01).unwrap();
            for i in 0..n {
                prop_assert!(mb[i].contains(mean[i]));
                prop_assert!(e[i] <= eps[i]);
            }
            for j in 0..reg.model(0).unwrap().len() {
                let k = reg.kernel().eval(&x, &reg.model(0).unwrap().inputs()[j]);
                prop_assert!(kernel_range(&reg, 0, &b, j).unwrap().contains(k));
            }
        }
    }

    #[test]
    fn interval_mode_is_monotone_in_the_box(seed in any::<u64>(), m in 2usize..20,
                                            c in prop::collection::vec(-2.0f64..2.0, 2),
                                            r in 0.0f64..0.5, shrink in 0.0f64..1.0) {
        let reg = regressor(seed, m, 2);
        let outer = boxed(&c, r);
        let inner = boxed(&c, r * shrink);
        let opts = ReachOptions::interval();
        let big = mean_bounds(&reg, 0, &outer, &opts).unwrap();
        let small = mean_bounds(&reg, 0, &inner, &opts).unwrap();
        for (s, b) in small.iter().zip(&big) {
            prop_assert!(b.contains_interval(s));
        }
        let e_big = sup_error_bound(&reg, 0, &outer, 0.05, &opts).unwrap();
        let e_small = sup_error_bound(&reg, 0, &inner, 0.05, &opts).unwrap();
        for (s, b) in e_small.iter().zip(&e_big) {
            prop_assert!(s <= b);
        }
    }

    #[test]
    fn refined_enclosure_shrinks_to_the_point(seed in any::<u64>(), m in 2usize..20,
                                              c in prop::collection::vec(-2.0f64..2.0, 2)) {
        let reg = regressor(seed, m, 2);
        let mean = reg.posterior_mean(0, &c).unwrap();
        let widths: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&r| {
                let mb = mean_bounds(&reg, 0, &boxed(&c, r), &ReachOptions::default()).unwrap();
                for (iv, m) in mb.iter().zip(&mean) {
                    assert!(iv.contains(*m));
                }
                mb.iter().map(|iv| iv.width()).fold(0.0, f64::max)
            })
            .collect();
        prop_assert!(widths[2] <= widths[1] && widths[1] <= widths[0]);
        prop_assert!(widths[2] < 1e-4);
    }

    #[test]
    fn subdivision_keeps_soundness(seed in any::<u64>(), m in 2usize..15,
                                   c in prop::collection::vec(-2.0f64..2.0, 2), parts in 1usize..5) {
        let reg = regressor(seed, m, 2);
        let b = boxed(&c, 0.4);
        let opts = ReachOptions { enclosure: Enclosure::Refined, subdivisions: parts };
        let mb = mean_bounds(&reg, 0, &b, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|i| rng.gen_range(b.lo()[i]..=b.hi()[i])).collect();
            let mean = reg.posterior_mean(0, &x).unwrap();
            prop_assert!(mb[0].contains(mean[0]) && mb[1].contains(mean[1]));
        }
    }
}

#[test]
fn refined_is_never_wider_than_interval() {
    let reg = regressor(17, 25, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let c = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let b = boxed(&c, rng.gen_range(0.0..0.5));
        let coarse = mean_bounds(&reg, 0, &b, &ReachOptions::interval()).unwrap();
        let fine = mean_bounds(&reg, 0, &b, &ReachOptions::default()).unwrap();
        for (f, k) in fine.iter().zip(&coarse) {
            assert!(f.width() <= k.width() + 1e-12);
        }
    }
}
