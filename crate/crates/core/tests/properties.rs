use impulse_core::problem::Profile;
use impulse_core::verify::{discrete_comparison, intervention_properties};
use impulse_core::*;
use proptest::prelude::*;

fn small(spec: &ProblemSpec) -> (Grid, ImpulseGrid) {
    let space = SpaceGrid::new(&[-4.0], &[4.0], &[21], BoundaryPolicy::ValueExtrapolation).unwrap();
    let grid = Grid::new(space, TimeGrid::new(spec.horizon, 6).unwrap());
    (grid, ImpulseGrid::new(spec, &[41], None).unwrap())
}

fn field() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0..3.0f64, 21)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn intervention_operator_properties(u in field(), w in field(), t in 0.0..1.0f64) {
        let spec = ProblemSpec::tp1();
        let (grid, zg) = small(&spec);
        let u = ValueField::new(grid.space, u).unwrap();
        let w = ValueField::new(grid.space, w).unwrap();
        let verdicts = intervention_properties(&spec, &u, &w, t, &zg, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        for v in verdicts {
            prop_assert!(v.pass, "{v:?}");
        }
    }

    #[test]
    fn ordered_terminal_data_give_ordered_solutions(g in field(), gap in proptest::collection::vec(0.0..0.5f64, 21)) {
        let spec = ProblemSpec::tp1();
        let (grid, zg) = small(&spec);
        let g2 = ValueField::new(grid.space, g.clone()).unwrap();
        let g1 = ValueField::new(grid.space, g.iter().zip(&gap).map(|(a, d)| a - d).collect()).unwrap();
        let r = discrete_comparison(&spec, &grid, &zg, &Scheme::default(), &g1, &g2).unwrap();
        prop_assert!(r.ordered.pass, "{:?}", r.ordered);
        prop_assert!(r.contraction.pass, "{:?}", r.contraction);
    }

    #[test]
    fn solutions_obey_the_global_bound(amplitude in -2.0..2.0f64, frequency in 0.1..3.0f64, phase in -3.0..3.0f64) {
        let mut spec = ProblemSpec::tp1();
        spec.terminal_gain = Profile::Cosine { amplitude, frequency: vec![frequency], phase };
        let (grid, zg) = small(&spec);
        let sol = solve(&spec, &grid, &zg, &Scheme::default()).unwrap();
        let c = global_bound(&spec);
        for layer in &sol.layers {
            prop_assert!(layer.sup_norm() <= c + 1e-12);
        }
    }

    #[test]
    fn constant_terminal_shift_moves_the_value(kappa in -2.0..2.0f64) {
        let spec = ProblemSpec::tp1();
        let mut shifted = spec.clone();
        shifted.terminal_gain = Profile::Constant { value: 0.0 };
        let (grid, zg) = small(&spec);
        let base = solve(&shifted, &grid, &zg, &Scheme::default()).unwrap();
        shifted.terminal_gain = Profile::Constant { value: kappa };
        let moved = solve(&shifted, &grid, &zg, &Scheme::default()).unwrap();
        for (a, b) in base.layers.iter().zip(&moved.layers) {
            for (a, b) in a.values().iter().zip(b.values()) {
                prop_assert!((b - a - kappa).abs() <= 1e-12);
            }
        }
    }
}
