use splitree::forward::{residual_lifetimes, simulate_tree, DEFAULT_CAP};
use splitree::harness::forward_stats;
use splitree::mc::replica_rng;
use splitree::moments::MomentContext;
use splitree::scale::survival_prob;
use splitree::stats::{ks_exponential, welch_z};
use splitree::{LifespanDistribution, ModelParams, ScaleGrid};

fn params(lifespan: LifespanDistribution) -> ModelParams {
    ModelParams::new(2.0, 0.5, lifespan).unwrap()
}

#[test]
fn residual_lifetimes_are_exponential() {
    let p = params(LifespanDistribution::Exponential { rate: 1.0 });
    let mut samples = Vec::new();
    let mut i = 0;
    while samples.len() < 5000 {
        let mut rng = replica_rng(5, i);
        samples.extend(residual_lifetimes(&p, 1.5, &mut rng).unwrap());
        i += 1;
    }
    assert!(ks_exponential(&samples).unwrap() > 0.001);
}

#[test]
fn survival_fraction_matches_theory() {
    for lifespan in [
        LifespanDistribution::Exponential { rate: 1.0 },
        LifespanDistribution::Deterministic { value: 1.0 },
        LifespanDistribution::Uniform { lo: 0.5, hi: 1.5 },
    ] {
        let p = params(lifespan);
        let t = 2.5;
        let grid = ScaleGrid::build(&p, 1e-3, t, false).unwrap();
        let theory = survival_prob(&p, &grid, t).unwrap();
        let reps = 20_000;
        let st = forward_stats(&p, t, DEFAULT_CAP, 1, 8, reps, 0).unwrap();
        assert_eq!(st.overflow, 0);
        let frac = st.survived as f64 / reps as f64;
        let se = (theory * (1.0 - theory) / reps as f64).sqrt();
        let z = welch_z(frac, se, theory);
        assert!(z.abs() < 4.0, "{lifespan}: z = {z}");
    }
}

#[test]
fn population_spectrum_product_matches_theory() {
    let p = params(LifespanDistribution::Exponential { rate: 1.0 });
    let t = 2.0;
    let ctx = MomentContext::new(p, 1e-3, t).unwrap();
    let st = forward_stats(&p, t, DEFAULT_CAP, 2, 9, 40_000, 0).unwrap();
    for k in 1..=2 {
        let m = st.spectra.product.get(k - 1);
        let z = welch_z(m.mean(), m.se(), ctx.product_with_population(k, t).unwrap());
        assert!(z.abs() < 4.0, "k = {k}: z = {z}");
        let m = st.spectra.a.get(k - 1);
        let z = welch_z(m.mean(), m.se(), ctx.mean_spectrum(k, t).unwrap());
        assert!(z.abs() < 4.0, "k = {k}: z = {z}");
    }
}

#[test]
fn tree_records_are_consistent() {
    let p = params(LifespanDistribution::Uniform { lo: 0.5, hi: 1.5 });
    for i in 0..200 {
        let mut rng = replica_rng(3, i);
        let Some(tree) = simulate_tree(&p, 3.0, DEFAULT_CAP, &mut rng).unwrap() else {
            panic!("overflow at replica {i}");
        };
        assert!(tree[0].parent.is_none() && tree[0].birth == 0.0);
        for r in &tree[1..] {
            let parent = &tree[r.parent.unwrap()];
            assert!(parent.birth < r.birth && r.birth < parent.death && r.birth <= 3.0);
            assert!(r.death > r.birth);
        }
    }
}

#[test]
fn overflow_is_reported() {
    let p = params(LifespanDistribution::Immortal);
    let st = forward_stats(&p, 8.0, 50, 1, 2, 200, 0).unwrap();
    assert!(st.overflow > 0);
    assert_eq!(st.overflow + st.survived + st.extinct, 200);
}
