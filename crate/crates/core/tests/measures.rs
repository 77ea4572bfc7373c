use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use krselect_core::measures::{
    empirical_from_sample, parse_measure_csv, pushforward, shares_support, tv_distance,
    union_support, write_measure_csv, AtomicMeasure, MeasureError, PointSet,
};

fn support_1d(xs: &[f64]) -> Arc<PointSet> {
    Arc::new(PointSet::new(xs.iter().map(|&x| vec![x]).collect()).unwrap())
}

fn measure(support: &Arc<PointSet>, weights: &[f64]) -> AtomicMeasure {
    AtomicMeasure::new(Arc::clone(support), weights.to_vec()).unwrap()
}

/// Independent oracle for total variation: the supremum of
/// |m1(A) - m2(A)| over every subset A, enumerated exhaustively.
fn tv_subset_oracle(w1: &[f64], w2: &[f64]) -> f64 {
    let n = w1.len();
    assert!(n <= 12, "oracle is exponential in the support size");
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        let mut diff = 0.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                diff += w1[i] - w2[i];
            }
        }
        best = best.max(diff.abs());
    }
    best
}

fn random_probability(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.25) {
                    0.0
                } else {
                    rng.gen_range(0.0..1.0)
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 1e-3 {
            return raw.iter().map(|w| w / total).collect();
        }
    }
}

fn distinct_values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = rng.gen_range(lo..hi);
        if seen.insert(x.to_bits()) {
            out.push(x);
        }
    }
    out
}

#[test]
fn tv_matches_exhaustive_subset_supremum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(2..=10);
        let support = support_1d(&distinct_values(&mut rng, n, -5.0, 5.0));
        let m1 = measure(&support, &random_probability(&mut rng, n));
        let m2 = measure(&support, &random_probability(&mut rng, n));
        let tv = tv_distance(&m1, &m2).unwrap();
        let oracle = tv_subset_oracle(m1.weights(), m2.weights());
        assert!(
            (tv - oracle).abs() <= 1e-12,
            "tv {tv} vs subset oracle {oracle}"
        );
    }
}

#[test]
fn tv_of_deltas_is_one() {
    let support = support_1d(&[0.0, 1.0]);
    let m1 = measure(&support, &[1.0, 0.0]);
    let m2 = measure(&support, &[0.0, 1.0]);
    assert_eq!(tv_distance(&m1, &m2).unwrap(), 1.0);
}

#[test]
fn point_set_rejects_duplicates_and_mixed_dims() {
    let err = PointSet::new(vec![vec![1.0], vec![1.0]]).unwrap_err();
    assert!(matches!(err, MeasureError::DuplicatePoint(1, 0)));
    let err = PointSet::new(vec![vec![1.0], vec![1.0, 2.0]]).unwrap_err();
    assert!(matches!(err, MeasureError::DimensionMismatch { .. }));
    // -0.0 and 0.0 name the same point.
    let err = PointSet::new(vec![vec![0.0], vec![-0.0]]).unwrap_err();
    assert!(matches!(err, MeasureError::DuplicatePoint(1, 0)));
}

#[test]
fn measure_rejects_bad_weights() {
    let support = support_1d(&[0.0, 1.0]);
    let err = AtomicMeasure::new(Arc::clone(&support), vec![0.5, -0.1]).unwrap_err();
    assert!(matches!(err, MeasureError::InvalidWeight { index: 1, .. }));
    let err = AtomicMeasure::new(Arc::clone(&support), vec![0.5]).unwrap_err();
    assert!(matches!(err, MeasureError::WeightLengthMismatch { .. }));
}

#[test]
fn normalize_produces_probability() {
    let support = support_1d(&[0.0, 1.0, 2.0]);
    let m = measure(&support, &[2.0, 3.0, 5.0]);
    let p = m.normalize().unwrap();
    assert!(p.is_probability());
    assert!((p.weight(2) - 0.5).abs() <= 1e-15);
}

#[test]
fn tv_requires_equal_mass() {
    let support = support_1d(&[0.0, 1.0]);
    let m1 = measure(&support, &[1.0, 0.0]);
    let m2 = measure(&support, &[1.0, 1.0]);
    assert!(matches!(
        tv_distance(&m1, &m2),
        Err(MeasureError::MassMismatch(..))
    ));
}

#[test]
fn empirical_merges_repeated_points() {
    let sample = vec![vec![1.0], vec![2.0], vec![1.0], vec![1.0]];
    let (support, m) = empirical_from_sample(&sample, 1.0).unwrap();
    assert_eq!(support.len(), 2);
    assert_eq!(support.point(0), &[1.0]);
    assert!((m.weight(0) - 0.75).abs() <= 1e-15);
    assert!((m.weight(1) - 0.25).abs() <= 1e-15);
    assert!(m.is_probability());
}

#[test]
fn empirical_rejects_empty_and_nonpositive_mass() {
    let empty: Vec<Vec<f64>> = Vec::new();
    assert!(matches!(
        empirical_from_sample(&empty, 1.0),
        Err(MeasureError::EmptySample)
    ));
    assert!(matches!(
        empirical_from_sample(&[vec![1.0]], 0.0),
        Err(MeasureError::NonpositiveMass(_))
    ));
}

#[test]
fn pushforward_conserves_mass_and_validates_map() {
    let source = support_1d(&[0.0, 1.0, 2.0]);
    let target = support_1d(&[10.0, 20.0]);
    let m = measure(&source, &[0.2, 0.3, 0.5]);
    let pushed = pushforward(&m, &[0, 1, 0], Arc::clone(&target)).unwrap();
    assert!((pushed.weight(0) - 0.7).abs() <= 1e-15);
    assert!((pushed.weight(1) - 0.3).abs() <= 1e-15);
    assert!((pushed.total_mass() - m.total_mass()).abs() <= 1e-15);

    let err = pushforward(&m, &[0, 5, 0], Arc::clone(&target)).unwrap_err();
    assert!(matches!(err, MeasureError::InvalidTargetIndex { .. }));
    let err = pushforward(&m, &[0, 1], target).unwrap_err();
    assert!(matches!(err, MeasureError::MapLengthMismatch { .. }));
}

#[test]
fn union_support_pads_with_zeros_and_keeps_first_order() {
    let s1 = support_1d(&[0.0, 1.0]);
    let s2 = support_1d(&[1.0, 2.0]);
    let m1 = measure(&s1, &[0.4, 0.6]);
    let m2 = measure(&s2, &[0.5, 0.5]);
    let (u1, u2) = union_support(&m1, &m2).unwrap();
    assert!(shares_support(&u1, &u2));
    assert_eq!(u1.support().points(), &[vec![0.0], vec![1.0], vec![2.0]]);
    assert_eq!(u1.weights(), &[0.4, 0.6, 0.0]);
    assert_eq!(u2.weights(), &[0.0, 0.5, 0.5]);
}

#[test]
fn union_support_shortcut_on_shared_support() {
    let s = support_1d(&[0.0, 1.0]);
    let m1 = measure(&s, &[0.4, 0.6]);
    let m2 = measure(&s, &[0.5, 0.5]);
    let (u1, u2) = union_support(&m1, &m2).unwrap();
    assert_eq!(u1.support().len(), 2);
    assert_eq!(u1.weights(), m1.weights());
    assert_eq!(u2.weights(), m2.weights());
}

#[test]
fn csv_round_trip_is_exact() {
    let support = support_1d(&[0.25, -1.5, 3.0]);
    let weights = [0.125, 0.375, 0.5];
    let text = write_measure_csv(&support, &weights);
    let (back_support, back_weights) = parse_measure_csv(&text).unwrap();
    assert_eq!(&back_support, support.as_ref());
    assert_eq!(back_weights, weights);
}

#[test]
fn csv_round_trip_survives_awkward_floats() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let n = rng.gen_range(1..=8);
        let dim = rng.gen_range(1..=3);
        let mut points = Vec::new();
        let mut seen = HashSet::new();
        while points.len() < n {
            let p: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1e3..1e3)).collect();
            let key: Vec<u64> = p.iter().map(|c| c.to_bits()).collect();
            if seen.insert(key) {
                points.push(p);
            }
        }
        let support = PointSet::new(points).unwrap();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let text = write_measure_csv(&support, &weights);
        let (back_support, back_weights) = parse_measure_csv(&text).unwrap();
        assert_eq!(&back_support, &support);
        assert_eq!(back_weights, weights);
    }
}

#[test]
fn csv_rejects_malformed_input() {
    assert!(matches!(
        parse_measure_csv("x1,c1\n"),
        Err(MeasureError::MalformedHeader(_))
    ));
    assert!(matches!(
        parse_measure_csv("weight,c1\noops,1.0\n"),
        Err(MeasureError::MalformedRow { .. })
    ));
    // A short row is rejected by the reader's strict width check.
    assert!(parse_measure_csv("weight,c1\n0.5\n").is_err());
    assert!(matches!(
        parse_measure_csv("weight,c1\n"),
        Err(MeasureError::EmptySupport)
    ));
}

proptest! {
    #[test]
    fn prop_tv_is_a_metric(
        (w1, w2, w3) in (2usize..10).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0.0f64..1.0, n),
            )
        }),
    ) {
        let n = w1.len();
        let normalize = |w: &[f64]| -> Vec<f64> {
            let s: f64 = w.iter().sum();
            if s > 1e-9 {
                w.iter().map(|x| x / s).collect()
            } else {
                let mut out = vec![0.0; w.len()];
                out[0] = 1.0;
                out
            }
        };
        let support = support_1d(&(0..n).map(|i| i as f64).collect::<Vec<_>>());
        let m1 = measure(&support, &normalize(&w1));
        let m2 = measure(&support, &normalize(&w2));
        let m3 = measure(&support, &normalize(&w3));
        let d12 = tv_distance(&m1, &m2).unwrap();
        let d21 = tv_distance(&m2, &m1).unwrap();
        let d13 = tv_distance(&m1, &m3).unwrap();
        let d23 = tv_distance(&m2, &m3).unwrap();
        prop_assert!((d12 - d21).abs() <= 1e-15);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d12));
        prop_assert!(d13 <= d12 + d23 + 1e-12);
        prop_assert!(tv_distance(&m1, &m1).unwrap() == 0.0);
    }
}
