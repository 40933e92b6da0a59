use proptest::prelude::*;
use stationary_lab::martingale::{gordin_increment, ma_error_mc, McOptions};
use stationary_lab::models::{CausalLinearModel, InnovationSpace, ProcessModel};
use stationary_lab::sequences::CoefficientSequence;
use stationary_lab::simulate::{draw_pasts, replicate_batch, BatchOptions};
use stationary_lab::stats::{kolmogorov_survival, ks_test, normal_reference};

fn geometric(ratio: f64) -> ProcessModel {
    let c = CoefficientSequence::geometric(ratio).unwrap();
    ProcessModel::Linear(CausalLinearModel::new(c, InnovationSpace::normal(1.0).unwrap(), None).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn batches_do_not_depend_on_worker_count(seed in any::<u64>(), n in 1usize..64, workers in 2usize..6) {
        let model = geometric(0.5);
        let one = replicate_batch(&model, n, 64, seed, &BatchOptions { workers: Some(1), ..Default::default() }).unwrap();
        let many = replicate_batch(&model, n, 64, seed, &BatchOptions { workers: Some(workers), ..Default::default() }).unwrap();
        prop_assert_eq!(one, many);
    }

    #[test]
    fn maximal_deviation_dominates_terminal(seed in any::<u64>(), n in 1usize..128) {
        let model = geometric(0.7);
        let d = gordin_increment(&model, 256).unwrap();
        let batch = replicate_batch(
            &model,
            n,
            32,
            seed,
            &BatchOptions { martingale: Some(&d.increment), ..Default::default() },
        )
        .unwrap();
        for s in &batch.stats {
            prop_assert!(s.max_absdev.unwrap() >= s.end_dev.unwrap().abs());
            prop_assert!(s.max_s >= s.s_n);
        }
        let e = ma_error_mc(&model, &d, n, 32, seed, McOptions::default()).unwrap();
        prop_assert!(e.maximal.value >= e.plain.value);
    }

    #[test]
    fn pinned_pasts_are_reproducible(seed in any::<u64>(), count in 1usize..8) {
        let model = geometric(0.5);
        let a = draw_pasts(&model, count, seed);
        let b = draw_pasts(&model, count, seed);
        prop_assert_eq!(a.len(), count);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn kolmogorov_survival_is_a_survival_function(x in 0.0f64..4.0, dx in 0.0f64..1.0) {
        let a = kolmogorov_survival(x);
        let b = kolmogorov_survival(x + dx);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-15);
    }
}

#[test]
fn ks_accepts_its_own_law_and_rejects_a_shift() {
    let model = geometric(0.5);
    let batch = replicate_batch(&model, 256, 5000, 3, &BatchOptions::default()).unwrap();
    let x = batch.normalized_sums();
    let cdf = normal_reference(4.0).unwrap();
    let own = ks_test(&x, &cdf, "N(0,4)", 0.01).unwrap();
    assert!(own.pass, "{own:?}");
    let shifted: Vec<f64> = x.iter().map(|v| v + 0.3).collect();
    let off = ks_test(&shifted, &cdf, "N(0,4)", 0.01).unwrap();
    assert!(!off.pass && off.pvalue < 1e-6, "{off:?}");
}
