use driftbench_core::analysis::{spearman, spearman_dense};
use driftbench_core::metrics::{condition_drift, frechet_distance, psnr, FeatureStats, StatsAccumulator};
use driftbench_core::projectors::{canny_plane, BlockAverage, CannyParams};
use driftbench_core::synthetic::{random_world, theorem1_trials};
use driftbench_core::{ImagePair, ImageTensor};
use num_rational::BigRational;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn distinct(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(-1000i32..1000, len).prop_map(|s| s.into_iter().map(|v| v as f64 / 7.0).collect())
}

fn shuffled(v: Vec<f64>, seed: u64) -> Vec<f64> {
    use rand::seq::SliceRandom;
    let mut v = v;
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

fn image(side: usize) -> impl Strategy<Value = ImageTensor> {
    prop::collection::vec(0.0f64..=1.0, 3 * side * side)
        .prop_map(move |d| ImageTensor::new("p", side, side, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spearman_ignores_monotone_transforms(x in distinct(3..30), seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let y = shuffled(x.clone(), seed);
        let base = spearman_dense(&x, &y);
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + v.exp().min(1e6)).collect();
        let affine: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        prop_assert_eq!(base.clone(), spearman_dense(&cubed, &y));
        let r2 = spearman_dense(&x, &affine);
        match (base, r2) {
            (Ok(p), Ok(q)) => prop_assert!((p - q).abs() < 1e-12),
            (p, q) => prop_assert_eq!(p, q),
        }
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(x in distinct(3..25), seed in any::<u64>()) {
        let y = shuffled(x.clone(), seed);
        let p = spearman_dense(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&p));
        prop_assert_eq!(p, spearman_dense(&y, &x).unwrap());
        prop_assert!((spearman_dense(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_drops_missing_pairs(x in distinct(4..20), seed in any::<u64>(), hole in 0usize..20) {
        let y = shuffled(x.clone(), seed);
        let hole = hole % x.len();
        let mut xo: Vec<Option<f64>> = x.iter().copied().map(Some).collect();
        xo[hole] = None;
        let yo: Vec<Option<f64>> = y.iter().copied().map(Some).collect();
        let (xd, yd): (Vec<f64>, Vec<f64>) =
            x.iter().zip(&y).enumerate().filter(|(i, _)| *i != hole).map(|(_, (a, b))| (*a, *b)).unzip();
        prop_assert_eq!(spearman(&xo, &yo), spearman_dense(&xd, &yd));
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative(
        m1 in prop::collection::vec(-3.0f64..3.0, 3),
        m2 in prop::collection::vec(-3.0f64..3.0, 3),
        l1 in prop::collection::vec(-1.0f64..1.0, 9),
        l2 in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        // covariances L Lᵀ + 0.1 I are positive definite
        let cov = |l: &[f64]| {
            let mut c = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    c[i * 3 + j] = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
                }
            }
            c
        };
        let a = FeatureStats::new(m1, cov(&l1), 10).unwrap();
        let b = FeatureStats::new(m2, cov(&l2), 10).unwrap();
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-9);
    }

    #[test]
    fn streaming_stats_match_two_pass(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..40), split in 0usize..40) {
        let n = rows.len();
        let mut whole = StatsAccumulator::new(4);
        rows.iter().for_each(|r| whole.push(r).unwrap());
        let (mut left, mut right) = (StatsAccumulator::new(4), StatsAccumulator::new(4));
        let k = split % n;
        rows[..k].iter().for_each(|r| left.push(r).unwrap());
        rows[k..].iter().for_each(|r| right.push(r).unwrap());
        left.merge(&right).unwrap();
        let mean: Vec<f64> = (0..4).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        for s in [whole.finish().unwrap(), left.finish().unwrap()] {
            for j in 0..4 {
                prop_assert!((s.mean[j] - mean[j]).abs() < 1e-10);
                for i in 0..4 {
                    let c = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1) as f64;
                    prop_assert!((s.cov_at(i, j) - c).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn block_average_drift_is_bounded_by_pixel_error(a in image(8), b in image(8), block in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let pair = ImagePair::new(a, b.with_source_id("p")).unwrap();
        let drift = condition_drift(&pair, &BlockAverage { block }).unwrap();
        prop_assert!(drift <= pair.mean_abs_error() + 1e-9);
    }

    #[test]
    fn canny_ignores_constant_offsets(plane in prop::collection::vec(0.0f64..0.5, 16 * 16), offset in 0.0f64..0.5) {
        let shifted: Vec<f64> = plane.iter().map(|v| v + offset).collect();
        let p = CannyParams::default();
        prop_assert_eq!(canny_plane(&plane, 16, 16, &p).unwrap(), canny_plane(&shifted, 16, 16, &p).unwrap());
    }

    #[test]
    fn psnr_is_symmetric(a in image(4), b in image(4)) {
        let ab = psnr(&ImagePair::new(a.clone(), b.clone().with_source_id("p")).unwrap());
        let ba = psnr(&ImagePair::new(b.with_source_id("p"), a).unwrap());
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn alignment_error_equals_expected_drift_exactly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = random_world::<BigRational>(&mut rng);
        prop_assert_eq!(world.alignment_error_exact(), world.expected_drift_exact());
    }
}

#[test]
fn theorem_holds_over_a_thousand_worlds() {
    let report = theorem1_trials(2024, 1000);
    assert_eq!(report.trials, 1000);
    assert_eq!(report.exact_mismatches, 0);
    assert!(report.max_abs_gap <= 1e-12, "{}", report.max_abs_gap);
}

#[test]
fn theorem_trials_are_deterministic() {
    let a = theorem1_trials(5, 64);
    let b = theorem1_trials(5, 64);
    assert_eq!(a.max_abs_gap.to_bits(), b.max_abs_gap.to_bits());
}
