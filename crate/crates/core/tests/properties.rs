mod common;

use proptest::prelude::*;
use sisom::comparison_set::{ClassKey, ComparisonSet, StoredEntry};
use sisom::data::Dataset;
use sisom::feature_space::{sigmoid, EnhancedFeature};
use sisom::scoring::{class_distances, ood_score, sisom_score};
use sisom::tensor_nn::{model_to_string, parse_model, Matrix, MlpModel};

fn stored(points: &[(Vec<f64>, usize)]) -> Vec<StoredEntry> {
    points
        .iter()
        .enumerate()
        .map(|(i, (v, c))| StoredEntry {
            feature: EnhancedFeature {
                values: v.clone(),
                pseudo_class: *c,
                source_id: format!("s{i}"),
            },
            true_class: *c,
        })
        .collect()
}

/// Two classes guaranteed present, 3-D points.
fn point_set() -> impl Strategy<Value = Vec<(Vec<f64>, usize)>> {
    prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 3), 0..3usize), 2..40).prop_map(|mut pts| {
        pts[0].1 = 0;
        pts[1].1 = 1;
        pts
    })
}

proptest! {
    #[test]
    fn r_ood_is_decreasing_and_bounded(a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(ood_score(lo) >= ood_score(hi));
        prop_assert!(ood_score(hi) > 0.0 && ood_score(lo) <= 0.25);
    }

    #[test]
    fn sigmoid_range_and_monotone(alpha in 0.01..100.0f64, x in -1e3..1e3f64, dx in 0.0..10.0f64) {
        let s = sigmoid(alpha, x);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!(sigmoid(alpha, x + dx) >= s);
    }

    #[test]
    fn ratio_is_scale_free(pts in point_set(), q in prop::collection::vec(-5.0..5.0f64, 3), scale in 0.1..10.0f64) {
        let set = ComparisonSet::from_entries(stored(&pts), ClassKey::TrueLabel);
        let scaled_pts: Vec<(Vec<f64>, usize)> =
            pts.iter().map(|(v, c)| (v.iter().map(|x| x * scale).collect(), *c)).collect();
        let scaled = ComparisonSet::from_entries(stored(&scaled_pts), ClassKey::TrueLabel);
        let query = |v: Vec<f64>| EnhancedFeature { values: v, pseudo_class: 0, source_id: "q".into() };
        let (a_in, a_out) = class_distances(&query(q.clone()), &set, None).unwrap();
        let (b_in, b_out) = class_distances(&query(q.iter().map(|x| x * scale).collect()), &scaled, None).unwrap();
        prop_assume!(a_out > 1e-6);
        let (ra, rb) = (sisom_score(a_in, a_out), sisom_score(b_in, b_out));
        prop_assert!((ra - rb).abs() <= 1e-9 * ra.max(1.0), "{} vs {}", ra, rb);
    }

    #[test]
    fn distances_ignore_storage_order(pts in point_set(), q in prop::collection::vec(-5.0..5.0f64, 3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = stored(&pts);
        shuffled.shuffle(&mut common::rng(seed));
        let a = ComparisonSet::from_entries(stored(&pts), ClassKey::TrueLabel);
        let b = ComparisonSet::from_entries(shuffled, ClassKey::TrueLabel);
        for class in 0..2 {
            let query = EnhancedFeature { values: q.clone(), pseudo_class: class, source_id: "q".into() };
            prop_assert_eq!(class_distances(&query, &a, None).unwrap(), class_distances(&query, &b, None).unwrap());
        }
    }

    #[test]
    fn dataset_csv_round_trip(
        rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 1..20),
        labeled in any::<bool>(),
    ) {
        let ids = (0..rows.len()).map(|i| format!("id{i}")).collect();
        let labels = labeled.then(|| (0..rows.len()).map(|i| i % 3).collect());
        let ds = Dataset::new(ids, Matrix::from_rows(&rows).unwrap(), labels).unwrap();
        let back = Dataset::parse_csv(&ds.to_csv()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn model_text_round_trip(seed in any::<u64>(), width in 1..6usize, classes in 2..5usize) {
        let model = MlpModel::new(&[3, width, width + 1, classes], &[0, 1], seed).unwrap();
        let back = parse_model(&model_to_string(&model)).unwrap();
        prop_assert_eq!(back, model);
    }
}
