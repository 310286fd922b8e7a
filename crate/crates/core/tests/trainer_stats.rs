use diffclass::trainer::{class_weights_from_labels, sample_timestep};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Upper critical value of chi-square with `df` degrees of freedom at
/// standard-normal quantile `z` (Wilson-Hilferty).
fn chi_square_critical(df: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn timesteps_are_uniform() {
    const DRAWS: usize = 100_000;
    // z for an upper tail of 0.001
    const Z_999: f64 = 3.090_232;
    for steps in [100, 1000] {
        let mut rng = ChaCha8Rng::seed_from_u64(steps as u64);
        let mut counts = vec![0usize; steps + 1];
        for _ in 0..DRAWS {
            let t = sample_timestep(&mut rng, steps);
            assert!((1..=steps).contains(&t));
            counts[t] += 1;
        }
        assert_eq!(counts[0], 0);
        let expected = DRAWS as f64 / steps as f64;
        let stat: f64 = counts[1..]
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = chi_square_critical((steps - 1) as f64, Z_999);
        assert!(
            stat < critical,
            "T={steps}: chi-square {stat:.1} >= {critical:.1}"
        );
    }
}

#[test]
fn wilson_hilferty_matches_tabulated_value() {
    // chi-square(99) upper 0.001 point is 148.23
    assert!((chi_square_critical(99.0, 3.090_232) - 148.23).abs() < 0.3);
}

proptest! {
    #[test]
    fn balanced_weights_equalize_class_mass(counts in prop::collection::vec(1usize..50, 2..7)) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, n)| std::iter::repeat_n(c, *n)).collect();
        let vocab: Vec<String> = (0..counts.len()).map(|c| c.to_string()).collect();
        let w = class_weights_from_labels(&labels, &vocab).unwrap();
        let n = labels.len() as f64;
        let c = counts.len() as f64;
        // every class carries N / C of the total weight
        for (wc, nc) in w.iter().zip(&counts) {
            prop_assert!((wc * *nc as f64 - n / c).abs() < 1e-9);
        }
    }
}
