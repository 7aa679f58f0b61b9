use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splitree::config::ExperimentConfig;
use splitree::cpp::{
    extract_partition, lineage_walk_partition, scatter_mutations, CoalescentPointProcess, MutationSet,
};
use splitree::harness::{reports_from_csv, reports_to_csv, ComparisonReport, Score};
use splitree::series::ExtractionPlan;
use splitree::{LifespanDistribution, ModelParams, ScaleGrid};

fn lifespan() -> impl Strategy<Value = LifespanDistribution> {
    prop_oneof![
        (0.2..3.0f64).prop_map(|rate| LifespanDistribution::Exponential { rate }),
        (0.2..3.0f64).prop_map(|value| LifespanDistribution::Deterministic { value }),
        (0.1..1.0f64, 0.1..2.0f64).prop_map(|(lo, w)| LifespanDistribution::Uniform { lo, hi: lo + w }),
    ]
}

fn report() -> impl Strategy<Value = ComparisonReport> {
    let score = prop_oneof![
        (-10.0..10.0f64).prop_map(Score::Z),
        (0.0..1.0f64).prop_map(Score::P),
        (0.0..1.0f64).prop_map(Score::Tv),
        Just(Score::Info),
        Just(Score::Planned),
    ];
    (
        "[a-zA-Z0-9_().{}=]{1,20}",
        proptest::option::of(-1e9..1e9f64),
        proptest::option::of(-1e9..1e9f64),
        proptest::option::of(0.0..1e3f64),
        score,
        0u64..10_000_000,
    )
        .prop_map(|(quantity, theory, estimate, se, score, reps)| ComparisonReport {
            quantity,
            theory,
            estimate,
            se,
            score,
            reps,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_function_is_nondecreasing(b in 0.2..4.0f64, life in lifespan()) {
        let p = ModelParams::new(b, 0.3, life).unwrap();
        let g = ScaleGrid::build(&p, 1e-2, 6.0, false).unwrap();
        prop_assert_eq!(g.values()[0], 1.0);
        prop_assert!(g.values().windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let gt = ScaleGrid::build(&p, 1e-2, 6.0, true).unwrap();
        prop_assert!(gt.values().iter().zip(g.values()).all(|(a, b)| *a <= b + 1e-9));
    }

    #[test]
    fn partition_sweep_matches_lineage_walk(
        raw in proptest::collection::vec(0.0..1.0f64, 1..60),
        theta in 0.0..4.0f64,
        seed in any::<u64>(),
    ) {
        let t = 2.0;
        let depths: Vec<f64> = raw.iter().enumerate().map(|(i, &d)| if i == 0 { t } else { d * t }).collect();
        let cpp = CoalescentPointProcess::from_depths(t, depths).unwrap();
        let muts: MutationSet = scatter_mutations(&cpp, theta, &mut ChaCha8Rng::seed_from_u64(seed));
        let fast = extract_partition(&cpp, &muts).unwrap();
        prop_assert!(fast.is_conservative());
        prop_assert_eq!(fast.n, cpp.size() as u64);
        prop_assert_eq!(fast, lineage_walk_partition(&cpp, &muts).unwrap());
    }

    #[test]
    fn polynomial_coefficients_are_recovered(coef in proptest::collection::vec(-5.0..5.0f64, 1..40)) {
        let deg = coef.len() - 1;
        let plan = ExtractionPlan::for_degree(deg, 1e-12).unwrap();
        let values = plan
            .points()
            .into_iter()
            .map(|z| coef.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c))
            .collect();
        let got = plan.extract(values, deg);
        for (a, b) in got.iter().zip(&coef) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn reports_round_trip(rows in proptest::collection::vec(report(), 0..10)) {
        let back = reports_from_csv(&reports_to_csv(&rows)).unwrap();
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn config_round_trip(b in 0.1..5.0f64, theta in 0.0..3.0f64, life in lifespan(), reps in 0u64..1_000_000, seed in any::<u64>()) {
        let cfg = ExperimentConfig { b, theta, lifespan: life, reps, seed, ..Default::default() };
        let mut back = ExperimentConfig::default();
        back.merge_str(&cfg.to_key_values()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn malthusian_root_solves_psi(b in 1.2..4.0f64, life in lifespan()) {
        let p = ModelParams::new(b, 0.5, life).unwrap();
        prop_assume!(p.mean_offspring() > 1.05);
        let alpha = p.malthusian_alpha();
        prop_assert!(alpha > 0.0);
        prop_assert!(p.psi(alpha).abs() < 1e-9);
        prop_assert!(p.psi_derivative(alpha) > 0.0);
    }
}
