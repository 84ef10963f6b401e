mod common;

use impulse_core::*;

#[test]
fn toy_solver_matches_exhaustive_minimax() {
    let (spec, grid, zg) = common::toy();
    let oracle = common::oracle_layers();
    let sol = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
    for (k, want) in oracle.iter().enumerate() {
        let got = sol.layer(k).values();
        for i in 0..3 {
            assert!(
                (got[i] - want[i]).abs() <= 1e-9,
                "layer {k} node {i}: {} vs {}",
                got[i],
                want[i]
            );
        }
    }
}

#[test]
fn toy_instance_exercises_both_branches() {
    let (spec, grid, zg) = common::toy();
    let sol = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
    let acts: usize = sol
        .act
        .iter()
        .map(|a| a.iter().filter(|&&a| a).count())
        .sum();
    let holds: usize = sol
        .act
        .iter()
        .map(|a| a.iter().filter(|&&a| !a).count())
        .sum();
    assert!(acts > 0 && holds > 0, "acts {acts} holds {holds}");
}
