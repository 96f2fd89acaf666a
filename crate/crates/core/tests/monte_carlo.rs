use fekf::harness::{run_experiment, ExperimentOptions, Scenario};

fn short(runs: usize, seed: u64) -> Scenario {
    let mut s = Scenario::preset("scenario1").unwrap();
    s.sampling.samples = 60;
    s.filter.rounds = vec![2];
    s.monte_carlo.runs = runs;
    s.monte_carlo.seed = seed;
    s.monte_carlo.steady_window = 30;
    s.monte_carlo.snapshots = vec![60];
    s.monte_carlo.gamma_sweep.clear();
    s
}

#[test]
fn standard_error_shrinks_with_runs() {
    let opts = ExperimentOptions {
        threads: 0,
        trace_messages: false,
    };
    let few = run_experiment(&short(10, 7), opts).unwrap();
    let many = run_experiment(&short(40, 7), opts).unwrap();
    for name in ["cfekf", "dfekf_L2"] {
        let a = few.variant(name).unwrap().steady_std_error(30);
        let b = many.variant(name).unwrap().steady_std_error(30);
        // 1/sqrt(R) predicts a ratio of 2; sampling noise in the error
        // estimate itself allows a wide band.
        let ratio = a / b;
        assert!((1.3..3.0).contains(&ratio), "{name}: {a} / {b} = {ratio}");
        // The first runs are shared, so the means agree within the bars.
        let (ma, mb) = (
            few.variant(name).unwrap().steady_mean(30),
            many.variant(name).unwrap().steady_mean(30),
        );
        assert!((ma - mb).abs() < 4.0 * a, "{name}: {ma} vs {mb}");
    }
}

#[test]
fn seed_changes_noise_but_not_truth() {
    let opts = ExperimentOptions {
        threads: 2,
        trace_messages: false,
    };
    let a = run_experiment(&short(2, 1), opts).unwrap();
    let b = run_experiment(&short(2, 2), opts).unwrap();
    assert_eq!(a.truth_snapshots, b.truth_snapshots);
    assert_ne!(a.variant("cfekf").unwrap().rmse, b.variant("cfekf").unwrap().rmse);
    assert_ne!(a.config_hash, b.config_hash);
}
