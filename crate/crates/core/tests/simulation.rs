use impulse_core::sim::{estimate_gain, AlwaysImpulse, ConstantControl, Horizon, NoImpulse};
use impulse_core::*;

fn horizon(spec: &ProblemSpec, steps: usize, q: usize) -> Horizon {
    Horizon::from_start(TimeGrid::new(spec.horizon, steps).unwrap(), q).unwrap()
}

#[test]
fn uncontrolled_gain_matches_gaussian_expectation() {
    // Constant coefficients make the Euler scheme exact in law:
    // E cos(x0 + b T + sigma W_T) = cos(x0 + b T) exp(-sigma^2 T / 2).
    let spec = ProblemSpec::tp1();
    let hz = horizon(&spec, 10, 1);
    for (x0, b) in [(0.0, 0.5), (1.0, -1.0), (3.0, 0.0)] {
        let est = estimate_gain(
            &spec,
            &hz,
            &[x0, 0.0],
            &ConstantControl([b, 0.0]),
            &NoImpulse,
            20_000,
            3,
        )
        .unwrap();
        let exact = (x0 + b).cos() * (-0.125f64).exp();
        assert!(
            (est.mean - exact).abs() <= 3.0 * est.std_error,
            "x0 {x0} b {b}: {} vs {exact} (se {})",
            est.mean,
            est.std_error
        );
        assert_eq!(est.impulses_mean, 0.0);
    }
}

#[test]
fn budget_caps_the_number_of_impulses() {
    let spec = ProblemSpec::tp1();
    for q in 1..5 {
        let hz = horizon(&spec, 10, q);
        let est = estimate_gain(
            &spec,
            &hz,
            &[0.0, 0.0],
            &ConstantControl([0.0, 0.0]),
            &AlwaysImpulse([0.1, 0.0]),
            50,
            1,
        )
        .unwrap();
        assert_eq!(est.impulses_mean, (q - 1) as f64);
        assert!((est.cost_mean - (q - 1) as f64 * -0.105).abs() < 1e-12);
    }
}
