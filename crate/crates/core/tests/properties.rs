use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relprop::eval::{perturb, rank_values, PerturbMode};
use relprop::lrp::{
    bin_indices, explain, heat_quantize, lrp_conv, lrp_linear, LayerRule, QuantizeMode, RuleConfig,
    Splitting,
};
use relprop::model::{generate_toy_resnet, ImageSample};
use relprop::{Relevance, Tensor};

fn random_image(seed: u64, hw: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![3, hw, hw],
        (0..3 * hw * hw)
            .map(|_| rng.gen_range(0..=255) as f32)
            .collect(),
    )
    .unwrap()
}

fn map_strategy() -> impl Strategy<Value = Tensor> {
    (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
        prop::collection::vec(-100.0f32..100.0, h * w)
            .prop_map(move |v| Tensor::new(vec![h, w], v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zplus_conserves_at_every_checkpoint(
        seed in 0u64..1000,
        channels in 2usize..=4,
        blocks in 1usize..=3,
        ratio in any::<bool>(),
        include_identity in any::<bool>(),
    ) {
        let graph = generate_toy_resnet(seed, channels, blocks, 5, 6).unwrap();
        let sample = ImageSample::from_raw(random_image(seed ^ 0x5eed, 6), &graph.preprocess).unwrap();
        let config = RuleConfig {
            splitting: if ratio { Splitting::Ratio } else { Splitting::Symmetric },
            include_identity,
            ..RuleConfig::default()
        };
        let e = explain(&graph, &sample, None, &config).unwrap();
        prop_assert_eq!(e.state.checkpoint_sums.len(), blocks + 2);
        for (label, sum) in &e.state.checkpoint_sums {
            prop_assert!((sum - e.p_c).abs() / e.p_c < 1e-5, "{} = {} vs p_c {}", label, sum, e.p_c);
        }
    }

    #[test]
    fn zplus_relevance_non_negative_for_non_negative_inputs(
        seed in any::<u64>(),
        d in 1usize..12,
        e in 1usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Tensor::new(vec![d], (0..d).map(|_| rng.gen_range(0.0f32..3.0)).collect()).unwrap();
        let w = Tensor::new(vec![e, d], (0..e * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let r = Relevance::new(vec![e], (0..e).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        prop_assert!(lrp_linear(&h, &w, &r, LayerRule::ZPlus).unwrap().data().iter().all(|&v| v >= 0.0));

        let x = Tensor::new(vec![2, 4, 4], (0..32).map(|_| rng.gen_range(0.0f32..3.0)).collect()).unwrap();
        let k = Tensor::new(vec![3, 2, 3, 3], (0..54).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let r = Relevance::new(vec![3, 4, 4], (0..48).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        prop_assert!(lrp_conv(&x, &k, 1, 1, &r, LayerRule::ZPlus).unwrap().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn quantization_is_monotone_with_few_levels(raw in map_strategy(), bins in 1usize..=10) {
        let q = heat_quantize(&raw, bins, QuantizeMode::Binwidth).unwrap();
        let r = raw.data();
        let mut levels: Vec<u32> = q.data().iter().map(|v| v.to_bits()).collect();
        levels.sort_unstable();
        levels.dedup();
        prop_assert!(levels.len() <= bins.max(1) || r.iter().all(|&v| v == r[0]));
        for i in 0..r.len() {
            for j in 0..r.len() {
                if r[i] <= r[j] {
                    prop_assert!(q.data()[i] <= q.data()[j]);
                }
            }
        }
    }

    #[test]
    fn quantization_modes_share_bins_and_ranking(raw in map_strategy(), bins in 1usize..=10) {
        let p = heat_quantize(&raw, bins, QuantizeMode::Paper).unwrap();
        let b = heat_quantize(&raw, bins, QuantizeMode::Binwidth).unwrap();
        prop_assert_eq!(rank_values(&p).unwrap(), rank_values(&b).unwrap());
        if let Some(idx) = bin_indices(&raw, bins) {
            prop_assert!(idx.iter().all(|&i| i < bins));
        }
    }

    #[test]
    fn ranking_is_a_bijection(raw in map_strategy()) {
        let r = rank_values(&raw).unwrap();
        let mut seen = vec![false; r.height * r.width];
        for &(y, x) in &r.order {
            prop_assert!(!seen[y * r.width + x]);
            seen[y * r.width + x] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
        let v = raw.data();
        for pair in r.order.windows(2) {
            let (a, b) = (pair[0].0 * r.width + pair[0].1, pair[1].0 * r.width + pair[1].1);
            prop_assert!(v[a] > v[b] || (v[a] == v[b] && a < b));
        }
    }

    #[test]
    fn insertion_and_deletion_are_complementary(raw in map_strategy(), seed in any::<u64>()) {
        let (h, w) = (raw.shape()[0], raw.shape()[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::new(vec![3, h, w], (0..3 * h * w).map(|_| rng.gen_range(-2.0f32..2.0)).collect()).unwrap();
        let ranking = rank_values(&raw).unwrap();
        for n in 0..=h * w {
            let i = perturb(&x, &ranking, n, PerturbMode::Insertion).unwrap();
            let d = perturb(&x, &ranking, n, PerturbMode::Deletion).unwrap();
            for ((a, b), o) in i.data().iter().zip(d.data()).zip(x.data()) {
                prop_assert_eq!(a + b, *o);
            }
        }
    }
}
