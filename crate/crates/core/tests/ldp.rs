use massflow::ldp::{
    generator_battery, generator_probe, rate_function, rescale, varadhan_sweep, TargetSet,
    TestFunction,
};
use massflow::observables::{pushforward, AtomicMeasure};
use massflow::{simulate_path, DriftPath, ExperimentConfig, InitialConvention};
use proptest::prelude::*;

#[test]
fn straight_line_rate_is_kinetic_energy() {
    let config = ExperimentConfig::new(10, 2.0, 0.01);
    let labels = config.labels();
    let grid = config.grid().unwrap();
    let target: Vec<f64> = labels.iter().map(|u| 2.0 * u + 0.3).collect();
    let line = DriftPath::straight_line(&labels, &grid, &target).unwrap();
    // (1/n) sum (target - u)^2 / (2 T)
    let expected = labels
        .iter()
        .zip(&target)
        .map(|(u, z)| (z - u).powi(2))
        .sum::<f64>()
        / 10.0
        / (2.0 * 2.0);
    assert!((rate_function(&line) - expected).abs() < 1e-12);

    let crossing: Vec<f64> = labels.iter().map(|u| 1.0 - u).collect();
    let reversed = DriftPath::straight_line(&labels, &grid, &crossing).unwrap();
    assert_eq!(rate_function(&reversed), f64::INFINITY);
    let late_start = DriftPath::from_fn(&labels, &grid, |u, _| u + 0.1).unwrap();
    assert_eq!(rate_function(&late_start), f64::INFINITY);
}

#[test]
fn rescaling_composes() {
    let config = ExperimentConfig::new(16, 1.0, 1e-3);
    let path = simulate_path(&config, 17).unwrap();
    let once = rescale(&rescale(&path, 0.5).unwrap(), 0.25).unwrap();
    let direct = rescale(&path, 0.125).unwrap();
    assert_eq!(once.states().len(), direct.states().len());
    for (a, b) in once.states().iter().zip(direct.states()) {
        assert_eq!(a.blocks(), b.blocks());
        assert!((a.time() - b.time()).abs() < 1e-9);
    }
    assert_eq!(once.last().time(), 1.0);
    assert_eq!(rescale(&path, 1.0).unwrap().states(), path.states());
    let frozen = rescale(&path, 0.0).unwrap();
    assert!(frozen
        .states()
        .iter()
        .all(|s| s.blocks() == path.initial().blocks()));
    assert!(rescale(&path, 0.0005).is_err());
    assert!(rescale(&path, 1.5).is_err());
}

#[test]
fn nested_targets_have_nested_hit_counts() {
    let config = ExperimentConfig::new(16, 1.0, 1e-2);
    let center = AtomicMeasure::uniform_grid(16, InitialConvention::Paper)
        .unwrap()
        .shifted(0.3)
        .unwrap();
    let radii = [0.05, 0.1, 0.2, 0.4];
    let hits: Vec<Vec<usize>> = radii
        .iter()
        .map(|&r| {
            let ball = TargetSet::wasserstein_ball(center.clone(), r).unwrap();
            varadhan_sweep(&ball, &[0.1, 0.05], 400, &config, None, 12)
                .unwrap()
                .rows
                .iter()
                .map(|row| row.hits)
                .collect()
        })
        .collect();
    for pair in hits.windows(2) {
        for (small, large) in pair[0].iter().zip(&pair[1]) {
            assert!(small <= large, "{hits:?}");
        }
    }
    assert!(hits[3][0] > hits[0][0]);
}

#[test]
fn balls_measure_distance_to_their_boundary() {
    let center = AtomicMeasure::dirac(0.5).unwrap();
    let ball = TargetSet::wasserstein_ball(center, 0.2).unwrap();
    let inside = AtomicMeasure::dirac(0.65).unwrap();
    let outside = AtomicMeasure::dirac(1.0).unwrap();
    assert!(ball.contains(&inside));
    assert_eq!(ball.gap_from(&inside), 0.0);
    assert!(!ball.contains(&outside));
    assert!((ball.gap_from(&outside) - 0.3).abs() < 1e-12);
    assert!(TargetSet::wasserstein_ball(AtomicMeasure::dirac(0.0).unwrap(), -1.0).is_err());
}

#[test]
fn entry_tilt_lands_on_the_boundary() {
    let config = ExperimentConfig::new(8, 1.0, 0.01);
    let lambda = AtomicMeasure::uniform_grid(8, InitialConvention::Paper).unwrap();
    let ball = TargetSet::wasserstein_ball(lambda.shifted(0.5).unwrap(), 0.1).unwrap();
    let tilt = ball
        .entry_tilt(&config.labels(), &config.grid().unwrap())
        .unwrap();
    let end: Vec<f64> = tilt.value_row(config.grid().unwrap().steps()).to_vec();
    let end_measure = AtomicMeasure::normalized(
        end.iter()
            .map(|&position| massflow::observables::Atom {
                position,
                weight: 1.0,
            })
            .collect(),
    )
    .unwrap();
    assert!((ball.distance_to(&end_measure) - 0.1).abs() < 1e-9);
    // a shift by 0.4 costs 0.4^2 / 2
    assert!((rate_function(&tilt) - 0.08).abs() < 1e-9);
}

#[test]
fn square_probe_accumulates_block_counts() {
    let config = ExperimentConfig::new(8, 0.25, 1e-3);
    let path = simulate_path(&config, 31).unwrap();
    let probe = generator_probe(&path, &TestFunction::square());
    let mut curvature = 0.0;
    for j in 0..path.steps() {
        curvature += path.grid().dt(j) * 2.0 * path.state(j).block_count() as f64;
        assert!((probe.curvature[j + 1] - curvature).abs() < 1e-12);
    }
    let second = |s: &massflow::FlowState| pushforward(s).integrate(|x| x * x);
    let observable = second(path.last()) - second(path.initial());
    assert!((probe.observable.last().unwrap() - observable).abs() < 1e-12);
    let flat = generator_probe(&path, &TestFunction::constant(3.0));
    assert!(flat.defect(0.5).iter().all(|d| d.abs() < 1e-12));
    assert!(flat.empirical_qv.iter().all(|q| *q == 0.0));
}

#[test]
fn generator_constant_is_one_half() {
    let config = ExperimentConfig::new(8, 0.25, 1e-4)
        .with_replicas(100_000)
        .with_seed(2024);
    let report = generator_battery(&config, &TestFunction::square()).unwrap();
    println!("{report:?}");
    assert_eq!(report.passing_constants(), vec![0.5]);
    assert!(report.qv_pass);
    let noisy = config.clone().with_epsilon(0.5);
    assert!(generator_battery(&noisy, &TestFunction::square()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rate_scales_quadratically(v in -2.0f64..2.0, k in 0.1f64..3.0) {
        let config = ExperimentConfig::new(6, 1.0, 0.05);
        let (labels, grid) = (config.labels(), config.grid().unwrap());
        let base = rate_function(&DriftPath::constant_rate(&labels, &grid, v).unwrap());
        let scaled = rate_function(&DriftPath::constant_rate(&labels, &grid, k * v).unwrap());
        prop_assert!((base - v * v / 2.0).abs() < 1e-10);
        prop_assert!((scaled - k * k * base).abs() < 1e-10);
    }
}
