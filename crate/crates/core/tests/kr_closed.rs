use std::collections::HashSet;
use std::f64::consts::TAU;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use krselect_core::kr_closed::{
    circle_cut_constant, coordinate_marginal, cut_profile, profile_deviation, w1_auto, w1_circle,
    w1_discrete, w1_line, w1_product_additive, ClosedFormError, W1Method,
};
use krselect_core::kr_exact::w1_lp;
use krselect_core::measures::{tv_distance, union_support, AtomicMeasure, PointSet};
use krselect_core::metrics::{Combine, MetricDescriptor};

fn support_1d(xs: &[f64]) -> Arc<PointSet> {
    Arc::new(PointSet::new(xs.iter().map(|&x| vec![x]).collect()).unwrap())
}

fn measure(support: &Arc<PointSet>, weights: &[f64]) -> AtomicMeasure {
    AtomicMeasure::new(Arc::clone(support), weights.to_vec()).unwrap()
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

/// Relative agreement at the tolerance the validation loops use.
fn assert_close(label: &str, got: f64, want: f64, tol: f64) {
    let scale = want.abs().max(1.0);
    assert!(
        (got - want).abs() <= tol * scale,
        "{label}: got {got}, want {want} (tol {tol})"
    );
}

#[test]
fn golden_line_instance_costs_two_and_a_half() {
    let support = support_1d(&[0.0, 1.0, 3.0]);
    let m1 = measure(&support, &[0.5, 0.5, 0.0]);
    let m2 = measure(&support, &[0.0, 0.0, 1.0]);
    let w = w1_line(&m1, &m2).unwrap();
    assert!((w - 2.5).abs() <= 1e-12, "expected 2.5, got {w}");
    let auto = w1_auto(&m1, &m2, &MetricDescriptor::Line, false).unwrap();
    assert_eq!(auto.method, W1Method::Line);
    assert_eq!(auto.method.name(), "line");
    assert!((auto.value - 2.5).abs() <= 1e-12);
}

#[test]
fn three_hundred_line_instances_match_the_solver() {
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x11E + seed);
        let n = rng.gen_range(2..=30);
        let support = support_1d(&distinct_values(&mut rng, n, -50.0, 50.0));
        let m1 = measure(&support, &random_probability(&mut rng, n));
        let m2 = measure(&support, &random_probability(&mut rng, n));
        let closed = w1_line(&m1, &m2).unwrap();
        let lp = w1_lp(&m1, &m2, &MetricDescriptor::Line).unwrap().cost;
        assert_close(&format!("line seed {seed}"), closed, lp, 1e-8);
    }
}

#[test]
fn golden_discrete_instance_costs_one_half() {
    let support = support_1d(&[0.0, 1.0, 2.0]);
    let m1 = measure(&support, &[0.5, 0.5, 0.0]);
    let m2 = measure(&support, &[0.0, 0.5, 0.5]);
    let w = w1_discrete(&m1, &m2, 1.0).unwrap();
    assert!((w - 0.5).abs() <= 1e-12, "expected 0.5, got {w}");
    let scaled = w1_discrete(&m1, &m2, 2.5).unwrap();
    assert!((scaled - 1.25).abs() <= 1e-12, "expected 1.25, got {scaled}");
    let auto = w1_auto(&m1, &m2, &MetricDescriptor::discrete(1.0).unwrap(), false).unwrap();
    assert_eq!(auto.method, W1Method::DiscreteTv);
    assert_eq!(auto.method.name(), "tv");
    assert!((auto.value - 0.5).abs() <= 1e-12);
}

#[test]
fn three_hundred_discrete_instances_match_the_solver() {
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD15C + seed);
        let k = if seed % 2 == 0 { 1.0 } else { 2.5 };
        let n = rng.gen_range(2..=30);
        let support = support_1d(&distinct_values(&mut rng, n, -50.0, 50.0));
        let m1 = measure(&support, &random_probability(&mut rng, n));
        let m2 = measure(&support, &random_probability(&mut rng, n));
        let closed = w1_discrete(&m1, &m2, k).unwrap();
        let lp = w1_lp(&m1, &m2, &MetricDescriptor::discrete(k).unwrap())
            .unwrap()
            .cost;
        assert_close(&format!("discrete seed {seed} k {k}"), closed, lp, 1e-8);
        assert_close(
            &format!("discrete-tv seed {seed}"),
            closed,
            k * tv_distance(&m1, &m2).unwrap(),
            1e-12,
        );
    }
}

#[test]
fn three_hundred_circle_instances_match_the_solver() {
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC1C + seed);
        let circumference = if seed % 2 == 0 { 1.0 } else { TAU };
        let n = rng.gen_range(2..=30);
        let support = support_1d(&distinct_values(&mut rng, n, 0.0, circumference));
        let m1 = measure(&support, &random_probability(&mut rng, n));
        let m2 = measure(&support, &random_probability(&mut rng, n));
        let closed = w1_circle(&m1, &m2, circumference).unwrap();
        let lp = w1_lp(
            &m1,
            &m2,
            &MetricDescriptor::circle(circumference).unwrap(),
        )
        .unwrap()
        .cost;
        assert_close(
            &format!("circle seed {seed} C {circumference}"),
            closed,
            lp,
            1e-8,
        );
    }
}

/// The preferred cut constant (the largest attained level whose superlevel
/// set covers more than half the circle) must itself minimize the weighted
/// deviation, so evaluating there recovers the W1 value exactly.
#[test]
fn the_cut_constant_attains_the_circle_minimum() {
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xCC + seed);
        let circumference = if seed % 2 == 0 { 1.0 } else { TAU };
        let n = rng.gen_range(2..=30);
        let support = support_1d(&distinct_values(&mut rng, n, 0.0, circumference));
        let m1 = measure(&support, &random_probability(&mut rng, n));
        let m2 = measure(&support, &random_probability(&mut rng, n));
        let profile = cut_profile(&m1, &m2, circumference).unwrap();
        let constant = circle_cut_constant(&profile);
        assert!(
            profile.alphas.iter().any(|&a| a == constant),
            "seed {seed}: cut constant {constant} is not an attained level"
        );
        let at_constant = profile_deviation(&profile, constant);
        let minimum = w1_circle(&m1, &m2, circumference).unwrap();
        assert!(
            (at_constant - minimum).abs() <= 1e-9,
            "seed {seed}: deviation at the cut constant {at_constant} vs minimum {minimum}"
        );
    }
}

#[test]
fn profiles_reduce_positions_and_close_the_loop() {
    // Raw positions -0.25 and 1.25 collide at 0.75 and 0.25 after reduction
    // mod 1, so the profile merges them with the interior point 0.5.
    let support = support_1d(&[-0.25, 1.25, 0.5]);
    let m1 = measure(&support, &[0.5, 0.3, 0.2]);
    let m2 = measure(&support, &[0.1, 0.1, 0.8]);
    let profile = cut_profile(&m1, &m2, 1.0).unwrap();
    assert_eq!(profile.positions, vec![0.25, 0.5, 0.75]);
    let length: f64 = profile.seg_lengths.iter().sum();
    assert!((length - 1.0).abs() <= 1e-12);
    assert!(profile.positions.windows(2).all(|w| w[0] < w[1]));
    // alpha_1 = m1 - m2 at 0.25 (the reduced image of 1.25): 0.3 - 0.1.
    assert!((profile.alphas[0] - 0.2).abs() <= 1e-12);
    assert!(
        profile.alphas.last().unwrap().abs() <= 1e-12,
        "equal-mass profiles close at zero, got {:?}",
        profile.alphas
    );
    // Reducing modulo the circumference leaves the distance unchanged.
    let canonical = support_1d(&[0.75, 0.25, 0.5]);
    let c1 = measure(&canonical, &[0.5, 0.3, 0.2]);
    let c2 = measure(&canonical, &[0.1, 0.1, 0.8]);
    let raw = w1_circle(&m1, &m2, 1.0).unwrap();
    let reduced = w1_circle(&c1, &c2, 1.0).unwrap();
    assert!((raw - reduced).abs() <= 1e-12);
}

struct ProductInstance {
    joint1: AtomicMeasure,
    joint2: AtomicMeasure,
    metric: MetricDescriptor,
    pairs: Vec<(AtomicMeasure, AtomicMeasure, MetricDescriptor)>,
}

/// Builds a genuine product instance: independent coordinate measures whose
/// joint weights are the products of the coordinate weights over the full
/// grid of coordinate supports.
fn random_product_instance(rng: &mut ChaCha8Rng, max_coords: usize) -> ProductInstance {
    let dims = rng.gen_range(2..=max_coords);
    let mut coord_values: Vec<Vec<f64>> = Vec::with_capacity(dims);
    let mut coord_weights: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(dims);
    let mut descriptors = Vec::with_capacity(dims);
    for _ in 0..dims {
        let n = rng.gen_range(2..=3);
        let descriptor = match rng.gen_range(0..3) {
            0 => MetricDescriptor::discrete(if rng.gen_bool(0.5) { 1.0 } else { 2.5 }).unwrap(),
            1 => MetricDescriptor::Line,
            _ => MetricDescriptor::circle(1.0).unwrap(),
        };
        let values = if matches!(descriptor, MetricDescriptor::Circle { .. }) {
            distinct_values(rng, n, 0.0, 1.0)
        } else {
            distinct_values(rng, n, -5.0, 5.0)
        };
        coord_values.push(values);
        coord_weights.push((random_probability(rng, n), random_probability(rng, n)));
        descriptors.push(descriptor);
    }

    let mut points = vec![Vec::new()];
    let mut joint1 = vec![1.0];
    let mut joint2 = vec![1.0];
    for (values, (w1, w2)) in coord_values.iter().zip(&coord_weights) {
        let mut next_points = Vec::new();
        let mut next1 = Vec::new();
        let mut next2 = Vec::new();
        for (point, (a, b)) in points.iter().zip(joint1.iter().zip(&joint2)) {
            for (i, &v) in values.iter().enumerate() {
                let mut extended = point.clone();
                extended.push(v);
                next_points.push(extended);
                next1.push(a * w1[i]);
                next2.push(b * w2[i]);
            }
        }
        points = next_points;
        joint1 = next1;
        joint2 = next2;
    }

    let support = Arc::new(PointSet::new(points).unwrap());
    let pairs = coord_values
        .iter()
        .zip(&coord_weights)
        .zip(&descriptors)
        .map(|((values, (w1, w2)), descriptor)| {
            let coord_support = support_1d(values);
            (
                measure(&coord_support, w1),
                measure(&coord_support, w2),
                descriptor.clone(),
            )
        })
        .collect();
    ProductInstance {
        joint1: AtomicMeasure::new(Arc::clone(&support), joint1).unwrap(),
        joint2: AtomicMeasure::new(support, joint2).unwrap(),
        metric: MetricDescriptor::product(descriptors, Combine::L1).unwrap(),
        pairs,
    }
}

#[test]
fn product_additivity_matches_the_joint_solver() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF00D + seed);
        let instance = random_product_instance(&mut rng, 4);
        let additive = w1_auto(&instance.joint1, &instance.joint2, &instance.metric, true).unwrap();
        assert_eq!(additive.method, W1Method::ProductAdditive);
        assert_eq!(additive.method.name(), "product");
        let joint = w1_lp(&instance.joint1, &instance.joint2, &instance.metric)
            .unwrap()
            .cost;
        assert_close(&format!("product seed {seed}"), additive.value, joint, 1e-8);
        let by_pairs = w1_product_additive(&instance.pairs).unwrap();
        assert_close(
            &format!("marginal seed {seed}"),
            additive.value,
            by_pairs,
            1e-9,
        );
    }
}

/// Under the sup combine rule with a common scale k on every discrete
/// coordinate, the product metric is itself k-discrete on tuples, so W1
/// collapses to k times the total variation of the joint measures. The
/// joint weights here are arbitrary, not products.
#[test]
fn an_linf_grid_of_discrete_coordinates_is_a_scaled_tv() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x16F + seed);
        let k = if seed % 2 == 0 { 1.0 } else { 2.5 };
        let dims = rng.gen_range(2..=3);
        let per_coord = rng.gen_range(2..=3usize);
        let coord_values: Vec<Vec<f64>> = (0..dims)
            .map(|_| distinct_values(&mut rng, per_coord, -5.0, 5.0))
            .collect();
        let mut points = vec![Vec::new()];
        for values in &coord_values {
            points = points
                .iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let n = points.len();
        let support = Arc::new(PointSet::new(points).unwrap());
        let m1 = AtomicMeasure::new(Arc::clone(&support), random_probability(&mut rng, n)).unwrap();
        let m2 = AtomicMeasure::new(Arc::clone(&support), random_probability(&mut rng, n)).unwrap();
        let metric = MetricDescriptor::product(
            (0..dims)
                .map(|_| MetricDescriptor::discrete(k).unwrap())
                .collect(),
            Combine::LInf,
        )
        .unwrap();
        let auto = w1_auto(&m1, &m2, &metric, false).unwrap();
        assert_eq!(auto.method, W1Method::Lp);
        let expected = k * tv_distance(&m1, &m2).unwrap();
        assert_close(&format!("linf grid seed {seed}"), auto.value, expected, 1e-9);
    }
}

#[test]
fn auto_dispatch_picks_the_advertised_method() {
    let support = support_1d(&[0.0, 1.0]);
    let m1 = measure(&support, &[0.75, 0.25]);
    let m2 = measure(&support, &[0.25, 0.75]);

    let tv = w1_auto(&m1, &m2, &MetricDescriptor::discrete(2.0).unwrap(), false).unwrap();
    assert_eq!(tv.method, W1Method::DiscreteTv);
    assert!((tv.value - 1.0).abs() <= 1e-12);

    let line = w1_auto(&m1, &m2, &MetricDescriptor::Line, false).unwrap();
    assert_eq!(line.method, W1Method::Line);
    assert!((line.value - 0.5).abs() <= 1e-12);

    let circle = w1_auto(&m1, &m2, &MetricDescriptor::circle(4.0).unwrap(), false).unwrap();
    assert_eq!(circle.method, W1Method::Circle);
    assert!((circle.value - 0.5).abs() <= 1e-12);

    let explicit =
        MetricDescriptor::explicit(vec![vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
    let index_support = support_1d(&[0.0, 1.0]);
    let e1 = measure(&index_support, &[0.75, 0.25]);
    let e2 = measure(&index_support, &[0.25, 0.75]);
    let lp = w1_auto(&e1, &e2, &explicit, false).unwrap();
    assert_eq!(lp.method, W1Method::Lp);
    assert_eq!(lp.method.name(), "lp");
    assert!((lp.value - 1.5).abs() <= 1e-12);

    // A one-coordinate product unwraps to the coordinate's own closed form,
    // whatever the combine rule says.
    for combine in [Combine::L1, Combine::LInf] {
        let wrapped =
            MetricDescriptor::product(vec![MetricDescriptor::Line], combine).unwrap();
        let unwrapped = w1_auto(&m1, &m2, &wrapped, true).unwrap();
        assert_eq!(unwrapped.method, W1Method::Line);
        assert!((unwrapped.value - 0.5).abs() <= 1e-12);
    }

    // Without the product pledge a multi-coordinate metric goes to the
    // exact solver even when the measures happen to be products.
    let grid = Arc::new(PointSet::new(vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![1.0, 1.0],
    ])
    .unwrap());
    // (0.5, 0.5) x (0.5, 0.5) against (0.7, 0.3) x (0.4, 0.6): coordinate
    // distances 0.2 and 0.1, so the additive value is 0.3.
    let g1 = AtomicMeasure::new(Arc::clone(&grid), vec![0.25; 4]).unwrap();
    let g2 = AtomicMeasure::new(Arc::clone(&grid), vec![0.28, 0.42, 0.12, 0.18]).unwrap();
    let product = MetricDescriptor::product(
        vec![MetricDescriptor::Line, MetricDescriptor::Line],
        Combine::L1,
    )
    .unwrap();
    let joint = w1_auto(&g1, &g2, &product, false).unwrap();
    assert_eq!(joint.method, W1Method::Lp);
    let pledged = w1_auto(&g1, &g2, &product, true).unwrap();
    assert_eq!(pledged.method, W1Method::ProductAdditive);
    assert!((pledged.value - 0.3).abs() <= 1e-12);
    assert!(
        (joint.value - pledged.value).abs() <= 1e-9,
        "independent grid: lp {} vs additive {}",
        joint.value,
        pledged.value
    );
}

#[test]
fn additive_evaluation_requires_the_l1_rule() {
    let grid = Arc::new(PointSet::new(vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![1.0, 1.0],
    ])
    .unwrap());
    let m1 = AtomicMeasure::new(Arc::clone(&grid), vec![0.25; 4]).unwrap();
    let m2 = AtomicMeasure::new(Arc::clone(&grid), vec![0.1, 0.4, 0.4, 0.1]).unwrap();
    let sup_metric = MetricDescriptor::product(
        vec![MetricDescriptor::Line, MetricDescriptor::Line],
        Combine::LInf,
    )
    .unwrap();
    let err = w1_auto(&m1, &m2, &sup_metric, true).unwrap_err();
    assert!(matches!(err, ClosedFormError::AdditiveNeedsL1), "{err}");
    // The same call without the pledge is answered by the solver.
    assert!(w1_auto(&m1, &m2, &sup_metric, false).is_ok());
}

#[test]
fn marginals_merge_repeated_coordinates() {
    let support = Arc::new(PointSet::new(vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
    ])
    .unwrap());
    let m = AtomicMeasure::new(support, vec![0.2, 0.3, 0.5]).unwrap();
    let first = coordinate_marginal(&m, 0).unwrap();
    assert_eq!(first.support().dim(), 1);
    assert_eq!(first.len(), 2);
    assert_eq!(first.support().point(0), &[0.0]);
    assert_eq!(first.support().point(1), &[1.0]);
    assert!((first.weight(0) - 0.5).abs() <= 1e-12);
    assert!((first.weight(1) - 0.5).abs() <= 1e-12);
    let second = coordinate_marginal(&m, 1).unwrap();
    assert!((second.weight(0) - 0.7).abs() <= 1e-12);
    assert!((second.weight(1) - 0.3).abs() <= 1e-12);
    let err = coordinate_marginal(&m, 2).unwrap_err();
    assert!(
        matches!(
            err,
            ClosedFormError::CoordinateOutOfRange { index: 2, dim: 2 }
        ),
        "{err}"
    );
}

#[test]
fn closed_forms_reject_bad_inputs() {
    let support = support_1d(&[0.0, 1.0]);
    let m1 = measure(&support, &[0.5, 0.5]);
    let m2 = measure(&support, &[0.25, 0.75]);
    assert!(matches!(
        w1_discrete(&m1, &m2, 0.0),
        Err(ClosedFormError::NonpositiveK(_))
    ));
    assert!(matches!(
        w1_discrete(&m1, &m2, f64::NAN),
        Err(ClosedFormError::NonpositiveK(_))
    ));
    assert!(matches!(
        cut_profile(&m1, &m2, -1.0),
        Err(ClosedFormError::NonpositiveCircumference(_))
    ));

    let heavier = measure(&support, &[1.5, 0.5]);
    assert!(w1_line(&m1, &heavier).is_err(), "unequal masses must fail");

    let other = support_1d(&[0.0, 2.0]);
    let m3 = measure(&other, &[0.5, 0.5]);
    assert!(w1_line(&m1, &m3).is_err(), "different supports must fail");
    // Merging onto the union first makes the same pair acceptable.
    let (u1, u3) = union_support(&m1, &m3).unwrap();
    assert!((w1_line(&u1, &u3).unwrap() - 0.5).abs() <= 1e-12);

    let planar = Arc::new(PointSet::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap());
    let p1 = AtomicMeasure::new(Arc::clone(&planar), vec![0.5, 0.5]).unwrap();
    let p2 = AtomicMeasure::new(planar, vec![0.25, 0.75]).unwrap();
    assert!(matches!(
        w1_line(&p1, &p2),
        Err(ClosedFormError::NotOneDimensional(2))
    ));
    assert!(matches!(
        w1_circle(&p1, &p2, 1.0),
        Err(ClosedFormError::NotOneDimensional(2))
    ));
}

prop_compose! {
    fn line_pair()(seed in any::<u64>(), n in 2usize..12) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = distinct_values(&mut rng, n, -10.0, 10.0);
        let w1 = random_probability(&mut rng, n);
        let w2 = random_probability(&mut rng, n);
        (xs, w1, w2)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Pushing a line instance through x -> scale * x + shift multiplies the
    /// distance by |scale|, and the identity map costs nothing.
    #[test]
    fn prop_line_w1_scales_with_the_support(
        (xs, w1, w2) in line_pair(),
        scale in prop_oneof![0.25f64..4.0, -4.0f64..-0.25],
        shift in -5.0f64..5.0,
    ) {
        let support = support_1d(&xs);
        let m1 = measure(&support, &w1);
        let m2 = measure(&support, &w2);
        let base = w1_line(&m1, &m2).unwrap();
        prop_assert!((w1_line(&m1, &m1).unwrap()).abs() <= 1e-12);

        let mapped: Vec<f64> = xs.iter().map(|&x| scale * x + shift).collect();
        let mapped_support = support_1d(&mapped);
        let t1 = measure(&mapped_support, &w1);
        let t2 = measure(&mapped_support, &w2);
        let moved = w1_line(&t1, &t2).unwrap();
        let want = scale.abs() * base;
        prop_assert!(
            (moved - want).abs() <= 1e-9 * want.max(1.0),
            "scale {} shift {}: {} vs {}", scale, shift, moved, want
        );
    }

    /// The mean is 1-Lipschitz on the line, so the gap between the two means
    /// never exceeds the transport cost.
    #[test]
    fn prop_line_w1_dominates_the_mean_gap((xs, w1, w2) in line_pair()) {
        let support = support_1d(&xs);
        let m1 = measure(&support, &w1);
        let m2 = measure(&support, &w2);
        let w = w1_line(&m1, &m2).unwrap();
        let mean1: f64 = xs.iter().zip(&w1).map(|(x, w)| x * w).sum();
        let mean2: f64 = xs.iter().zip(&w2).map(|(x, w)| x * w).sum();
        prop_assert!((mean1 - mean2).abs() <= w + 1e-9);
    }
}
