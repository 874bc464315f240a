use mlspike::learning::{apply_episode_learning, LearningRates, LearningSetup, Rule};
use mlspike::metrics::{classify, vrd, PerformanceTracker, VrdParams};
use mlspike::network::{LayeredNetwork, NetworkConfig, OutputWeights, Variant};
use mlspike::patterns::{gen_input_pattern, jitter, JitterSpec};
use mlspike::SpikeTrain;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn train(times: Vec<u16>) -> SpikeTrain {
    SpikeTrain::from_times(times.into_iter().map(f64::from).collect())
}

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Free),
        Just(Variant::FixedHidden),
        Just(Variant::SingleLayer)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn episodes_are_reproducible_from_the_seed(seed in any::<u64>(), n_h in 1usize..12) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = LayeredNetwork::initialize(NetworkConfig::new(100, n_h, 1, Variant::Free), &mut rng).unwrap();
            let input = gen_input_pattern(100, 6.0, 500.0, 1.0, &mut rng);
            let rec = net.simulate_episode(&input, &mut rng).unwrap();
            (rec.hidden_trains, rec.output_trains)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn learning_keeps_weights_within_bounds(
        seed in any::<u64>(),
        variant in variant_strategy(),
        bio in any::<bool>(),
        n_o in 1usize..3,
        target_step in 40u16..500,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rule = if bio && variant.is_multilayer() { Rule::Bio } else { Rule::Backprop };
        let n_h = if variant.is_multilayer() { 6 } else { 0 };
        let mut config = NetworkConfig::new(100, n_h, n_o, variant);
        if rule == Rule::Bio {
            config = config.with_output_weights(OutputWeights::PositiveEqual);
        }
        let mut net = LayeredNetwork::initialize(config, &mut rng).unwrap();
        let setup = LearningSetup::new(rule, LearningRates::new(100, n_h, n_o, 1));
        let input = gen_input_pattern(100, 6.0, 500.0, 1.0, &mut rng);
        let targets = vec![train(vec![target_step]); n_o];
        for _ in 0..5 {
            let rec = net.simulate_episode(&input, &mut rng).unwrap();
            apply_episode_learning(&mut net, &rec, &targets, &setup).unwrap();
            prop_assert!(net.check_invariants().is_ok());
        }
    }

    #[test]
    fn vrd_is_a_semimetric(
        a in prop::collection::vec(0u16..500, 0..6),
        b in prop::collection::vec(0u16..500, 0..6),
    ) {
        let p = VrdParams::default();
        let (a, b) = (train(a), train(b));
        let ab = vrd(&a, &b, &p);
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - vrd(&b, &a, &p)).abs() < 1e-12);
        prop_assert!(vrd(&a, &a, &p).abs() < 1e-12);
    }

    #[test]
    fn classification_picks_an_exact_target(
        targets in prop::collection::vec(40u16..500, 2..6),
        pick in 0usize..6,
    ) {
        let mut uniq = targets.clone();
        uniq.sort_unstable();
        uniq.dedup();
        prop_assume!(uniq.len() >= 2);
        let classes: Vec<Vec<SpikeTrain>> = uniq.iter().map(|&t| vec![train(vec![t])]).collect();
        let label = pick % classes.len();
        let c = classify(&classes[label], &classes, &VrdParams::default()).unwrap();
        prop_assert!(c.is_correct(label));
    }

    #[test]
    fn jitter_stays_on_grid_inside_the_episode(seed in any::<u64>(), sigma in 0.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pattern = gen_input_pattern(20, 6.0, 500.0, 1.0, &mut rng);
        let noisy = jitter(&pattern, &JitterSpec::new(sigma), 500.0, 1.0, &mut rng).unwrap();
        prop_assert_eq!(noisy.len(), pattern.len());
        for (before, after) in pattern.iter().zip(&noisy) {
            prop_assert_eq!(before.len(), after.len());
            for &t in after.times() {
                prop_assert!((0.0..500.0).contains(&t));
                prop_assert_eq!(t, t.round());
            }
            prop_assert!(after.times().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn tracker_stays_in_range(outcomes in prop::collection::vec((any::<bool>(), 0.0f64..5.0), 1..200), p in 1usize..50) {
        let mut t = PerformanceTracker::new(p);
        for (ok, d) in outcomes {
            t.update(ok, d, None);
            prop_assert!((0.0..=100.0).contains(&t.p_tilde));
            let d_tilde = t.d_tilde.unwrap();
            prop_assert!((0.0..5.0).contains(&d_tilde));
        }
    }
}
