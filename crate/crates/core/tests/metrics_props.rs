mod common;

use common::{brute_force_assignment, random_points};
use cotfm_core::coupling::cost_matrix;
use cotfm_core::metrics::{path_curvature, solve_chunks, time_ot_epoch, wasserstein2};
use cotfm_core::rng::Stream;
use cotfm_core::Vec2;
use proptest::prelude::*;

#[test]
fn w2_matches_brute_force() {
    let mut rng = Stream::new(31);
    for n in 1..=7 {
        for _ in 0..30 {
            let a = random_points(&mut rng, n, 2.0);
            let b = random_points(&mut rng, n, 2.0);
            let (best, _) = brute_force_assignment(&cost_matrix(&a, &b).entries, n);
            let w = wasserstein2(&a, &b).unwrap();
            assert!((w - best / n as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn semicircle_curvature_matches_angle_formula() {
    let t = 100;
    let states: Vec<Vec2> = (0..=t)
        .map(|i| {
            let th = std::f64::consts::PI * i as f64 / t as f64;
            [th.cos(), th.sin()]
        })
        .collect();
    // chord directions on a regular polygon turn by a constant pi/T
    let oracle: f64 = {
        let angles: Vec<f64> = (0..t)
            .map(|i| {
                let (a, b) = (states[i], states[i + 1]);
                (b[1] - a[1]).atan2(b[0] - a[0])
            })
            .collect();
        let s: f64 = angles.windows(2).map(|w| 2.0 * (1.0 - (w[1] - w[0]).cos())).sum();
        s / (t - 1) as f64
    };
    let got = path_curvature(&states).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    let closed = 2.0 * (1.0 - (std::f64::consts::PI / t as f64).cos());
    assert!((got - closed).abs() < 1e-10);
}

#[test]
fn lap_time_grows_superlinearly() {
    let mut rng = Stream::new(4);
    let mut timed = |n: usize| {
        let a = random_points(&mut rng, n, 1.0);
        let b = random_points(&mut rng, n, 1.0);
        (0..3)
            .map(|_| time_ot_epoch(|| wasserstein2(&a, &b)).unwrap().0)
            .fold(f64::INFINITY, f64::min)
    };
    let small = timed(200);
    let large = timed(400);
    assert!(large / small > 2.0, "{small} ms -> {large} ms");
}

#[test]
fn zero_solves_take_no_time() {
    let (ms, count) = time_ot_epoch(|| solve_chunks(&[], &[])).unwrap();
    assert_eq!(count, 0);
    assert!(ms < 1.0);
}

fn arb_cloud(max: usize) -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec(prop::array::uniform2(-5.0f64..5.0), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_symmetric(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = Stream::new(seed);
        let a = random_points(&mut rng, n, 3.0);
        let b = random_points(&mut rng, n, 3.0);
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn w2_of_a_permutation_is_zero(a in arb_cloud(40), seed in any::<u64>()) {
        let mut b = a.clone();
        Stream::new(seed).shuffle(&mut b);
        prop_assert_eq!(wasserstein2(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn curvature_is_bounded_and_non_negative(states in prop::collection::vec(prop::array::uniform2(-3.0f64..3.0), 3..60)) {
        let c = path_curvature(&states).unwrap();
        let gaps = states.len() - 2;
        let t = states.len() - 1;
        prop_assert!(c >= 0.0);
        prop_assert!(c <= 4.0 * gaps as f64 / (t - 1) as f64 + 1e-12);
    }

    #[test]
    fn straight_paths_stay_straight_under_reparameterization(
        dir in prop::array::uniform2(-1.0f64..1.0),
        speeds in prop::collection::vec(0.01f64..2.0, 2..50),
    ) {
        prop_assume!(dir[0].abs() + dir[1].abs() > 1e-3);
        let mut states = vec![[0.5, -0.25]];
        for s in &speeds {
            let last = *states.last().unwrap();
            states.push([last[0] + s * dir[0], last[1] + s * dir[1]]);
        }
        prop_assert!(path_curvature(&states).unwrap() < 1e-20);
        let mut refined = Vec::new();
        for w in states.windows(2) {
            refined.push(w[0]);
            refined.push([(w[0][0] + w[1][0]) / 2.0, (w[0][1] + w[1][1]) / 2.0]);
        }
        refined.push(*states.last().unwrap());
        prop_assert!(path_curvature(&refined).unwrap() < 1e-20);
    }
}
