use fsn_core::dataset::{read_dataset, write_dataset, Format};
use fsn_core::model::{batch_loss, batch_loss_and_gradient, logits, softmax};
use fsn_core::normalize::{compute_stats, mean_center, centered_norm_residual, variance_balance, CenteringScope};
use fsn_core::{FeatureDataset, FeatureVector, LabeledFeature, LinearClassifier, LogitMode};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn classifier() -> impl Strategy<Value = LinearClassifier> {
    (1usize..12, 2usize..8)
        .prop_flat_map(|(d, c)| (matrix(d, c, -1.0, 1.0), 0..=c))
        .prop_map(|(w, b)| {
            let c = w.ncols();
            LinearClassifier::with_partition(w, b, (0..c as u32).collect()).unwrap()
        })
}

fn fd_check(mode: LogitMode, w: &Array2<f64>, x: &Array2<f64>, labels: &[usize]) -> f64 {
    let (_, g) = batch_loss_and_gradient(w.view(), x.view(), labels, mode);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for idx in ndarray::indices(w.dim()) {
        let mut plus = w.clone();
        plus[idx] += h;
        let mut minus = w.clone();
        minus[idx] -= h;
        let fd = (batch_loss(plus.view(), x.view(), labels, mode) - batch_loss(minus.view(), x.view(), labels, mode)) / (2.0 * h);
        worst = worst.max((fd - g[idx]).abs() / g[idx].abs().max(1e-3));
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_shift_invariant(z in prop::collection::vec(-50.0f64..50.0, 1..20), c in -100.0f64..100.0) {
        let z = Array1::from(z);
        let a = softmax(z.view());
        let b = softmax((&z + c).view());
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_gradient_matches_finite_differences(
        (w, x, labels) in (1usize..8, 2usize..6, 1usize..6).prop_flat_map(|(d, c, n)| (
            matrix(d, c, -1.0, 1.0),
            matrix(n, d, 0.0, 2.0),
            prop::collection::vec(0..c, n),
        ))
    ) {
        prop_assert!(fd_check(LogitMode::Linear, &w, &x, &labels) < 1e-5);
    }

    #[test]
    fn cosine_gradient_matches_finite_differences(
        (w, x, labels) in (2usize..8, 2usize..6, 1usize..6).prop_flat_map(|(d, c, n)| (
            matrix(d, c, 0.2, 1.0),
            matrix(n, d, 0.1, 2.0),
            prop::collection::vec(0..c, n),
        ))
    ) {
        let mode = LogitMode::Cosine { scale: 5.0 };
        prop_assert!(fd_check(mode, &w, &x, &labels) < 1e-5);
    }

    #[test]
    fn centered_columns_satisfy_norm_identity(mut clf in classifier()) {
        mean_center(&mut clf, CenteringScope::Both);
        let d = clf.dim() as f64;
        let s = compute_stats(&clf);
        for i in 0..clf.class_count() {
            prop_assert!(s.mu[i].abs() < 1e-12);
            prop_assert!(centered_norm_residual(clf.column(i)) * d.sqrt() < 1e-12);
            prop_assert!((s.sigma[i] * d.sqrt() - s.norms[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn centering_is_idempotent_and_keeps_spread(mut clf in classifier()) {
        let before = compute_stats(&clf);
        mean_center(&mut clf, CenteringScope::NovelOnly);
        let once = clf.clone();
        mean_center(&mut clf, CenteringScope::NovelOnly);
        for (a, b) in once.weights().iter().zip(clf.weights().iter()) {
            prop_assert!((a - b).abs() < 1e-15);
        }
        let after = compute_stats(&clf);
        for i in 0..clf.class_count() {
            prop_assert!((before.sigma[i] - after.sigma[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn balancing_is_idempotent(mut clf in classifier()) {
        prop_assume!(clf.base_class_count() > 0 && clf.novel_class_count() > 0);
        let stats = compute_stats(&clf);
        prop_assume!(stats.sigma[..clf.base_class_count()].iter().all(|&s| s > 1e-6));
        variance_balance(&mut clf, &stats).unwrap();
        let once = clf.clone();
        let stats = compute_stats(&clf);
        variance_balance(&mut clf, &stats).unwrap();
        for (a, b) in once.weights().iter().zip(clf.weights().iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn centering_shifts_constant_feature_logits(mut clf in classifier(), c in 0.0f64..5.0) {
        let d = clf.dim();
        let f = vec![c; d];
        let mu = compute_stats(&clf).mu;
        let before = logits(&clf, &f, LogitMode::Linear).unwrap();
        mean_center(&mut clf, CenteringScope::Both);
        let after = logits(&clf, &f, LogitMode::Linear).unwrap();
        for i in 0..clf.class_count() {
            let expected = -c * d as f64 * mu[i];
            prop_assert!((after[i] - before[i] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact(
        rows in prop::collection::vec((0u32..3, prop::collection::vec(0.0f32..1e6, 4)), 3..20)
    ) {
        let mut samples: Vec<LabeledFeature> = rows
            .into_iter()
            .map(|(label, v)| LabeledFeature { feature: FeatureVector(v), label })
            .collect();
        for class in 0..3 {
            samples.push(LabeledFeature { feature: FeatureVector(vec![0.0; 4]), label: class });
        }
        let ds = FeatureDataset::new("p", 4, vec![0, 1, 2], samples, true).unwrap();
        for format in [Format::Binary, Format::Text] {
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf, format).unwrap();
            let back = read_dataset(&buf[..], format, "p").unwrap();
            prop_assert_eq!(&back, &ds);
            for (a, b) in back.samples().iter().zip(ds.samples()) {
                for (x, y) in a.feature.as_slice().iter().zip(b.feature.as_slice()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
