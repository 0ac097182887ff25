//! Properties of the planted-community generator.

use proptest::prelude::*;
use thc::cluster_eval::{lloyd, purity, Partition};
use thc::data::{generate, PlantedSpec};

fn spec_strategy() -> impl Strategy<Value = PlantedSpec> {
    (2usize..4, 1usize..3, 0.01f64..1.0, 0.0f64..0.5, 0.0f64..0.6, 0.0f64..0.3, any::<u64>()).prop_map(
        |(coarse, split, gap, between, noise, shift, seed)| {
            let fine = coarse * split;
            PlantedSpec {
                nodes: fine * 4,
                fine_blocks: fine,
                coarse_blocks: coarse,
                within: between + gap,
                within_coarse: None,
                between,
                noise,
                class_shift: shift,
                effect_blocks: vec![[0, 0]],
                seed,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_are_symmetric_and_finite(spec in spec_strategy(), samples in 2usize..6) {
        let d = generate(&spec, samples).unwrap();
        prop_assert_eq!(d.len(), samples);
        for g in &d.graphs {
            prop_assert!(g.adjacency.is_finite());
            prop_assert!(g.adjacency.max_abs_diff(&g.adjacency.transpose()) == 0.0);
            prop_assert_eq!(g.nodes(), spec.nodes);
        }
        let labels = d.labels();
        prop_assert_eq!(labels.iter().filter(|&&l| l == 1).count(), samples - samples / 2);
    }

    #[test]
    fn truth_refines(spec in spec_strategy()) {
        let t = spec.truth();
        for i in 0..spec.nodes {
            for j in 0..spec.nodes {
                if t.fine[i] == t.fine[j] {
                    prop_assert_eq!(t.coarse[i], t.coarse[j]);
                }
            }
        }
    }
}

/// Lloyd on one sample's rows loses purity as the noise grows.
#[test]
fn lloyd_purity_falls_with_noise() {
    let sigmas = [0.02, 0.3, 0.8, 2.0];
    let mut means = Vec::new();
    for &noise in &sigmas {
        let mut total = 0.0;
        for seed in 0..6 {
            let spec = PlantedSpec {
                nodes: 36,
                noise,
                class_shift: 0.0,
                seed,
                ..PlantedSpec::default()
            };
            let d = generate(&spec, 2).unwrap();
            let fine = Partition::new(&spec.fine_labels());
            let km = lloyd(&d.graphs[0].adjacency, spec.fine_blocks, seed).unwrap();
            total += purity(&km.partition, &fine).unwrap();
        }
        means.push(total / 6.0);
    }
    assert!(means[0] > 0.99, "{means:?}");
    for w in means.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "{means:?}");
    }
    assert!(means[3] < means[0] - 0.2, "{means:?}");
}
