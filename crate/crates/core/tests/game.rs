mod common;

use impulse_core::game::{
    default_adversaries, dpp_residual, estimate_value_pair, extract_policies, DppPlay, StoppingRule,
};
use impulse_core::verify::solution_tolerance;
use impulse_core::*;

#[test]
fn degraded_impulse_play_falls_on_the_dpp_inequality_side() {
    let spec = ProblemSpec::tp1();
    let (grid, zg) = common::canonical(&spec);
    let sol = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
    let pol = extract_policies(&spec, &sol).unwrap();
    let rule = StoppingRule::ExitBox {
        lo: vec![-1.0],
        hi: vec![1.0],
    };
    let r = dpp_residual(
        &spec,
        &sol,
        &pol,
        &[0.0, 0.0],
        &rule,
        DppPlay::HoldAlways,
        4,
        4000,
        5,
    )
    .unwrap();
    assert!(
        r.delta <= 2.0 * r.std_error + solution_tolerance(&sol),
        "{r:?}"
    );
    assert!(r.stopped_fraction > 0.0 && r.stopped_fraction < 1.0);
}

#[test]
fn value_estimates_respect_the_a_priori_range() {
    let spec = ProblemSpec::tp1();
    let (grid, zg) = common::canonical(&spec);
    let sol = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
    let pol = extract_policies(&spec, &sol).unwrap();
    let c = global_bound(&spec);
    // Each of the q - 1 impulses costs at most K1 = 0.1 + 0.05 r on the lattice.
    let k1 = 0.1 + 0.05 * zg.radius();
    for q in [1, 3] {
        let est = estimate_value_pair(
            &spec,
            &[2.0, 0.0],
            &pol,
            q,
            &default_adversaries(&spec),
            2000,
            9,
        )
        .unwrap();
        for (v, se) in [(est.lower, est.lower_se), (est.upper, est.upper_se)] {
            assert!(
                v >= -c - q as f64 * k1 - 3.0 * se && v <= c + 3.0 * se,
                "q {q}: {v}"
            );
            assert!(se.is_finite());
        }
    }
}
