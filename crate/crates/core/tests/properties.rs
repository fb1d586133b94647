use cbm_proposals::eval::{f1_binary, match_single};
use cbm_proposals::hmc::leapfrog;
use cbm_proposals::metrics::{round_activation, MetricKind};
use cbm_proposals::model::{logistic, CbmPosterior};
use cbm_proposals::select::{greedy_select, kmeans_select};
use cbm_proposals::{Dataset, GroundTruthCatalog, NamedConcept, PinnedConcept, PriorSpec, Target};
use proptest::collection::vec;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u8>, usize, Vec<f64>, Option<(usize, Vec<u8>)>)> {
    (2usize..20, 1usize..4, 1usize..4).prop_flat_map(|(n, d, k)| {
        let dim = k * (d + 1) + k + 1;
        (
            vec(vec(-2.0..2.0f64, d), n),
            vec(0u8..2, n),
            Just(k),
            vec(-2.0..2.0f64, dim),
            proptest::option::of((0..k, vec(0u8..2, n))),
        )
    })
}

fn build(
    rows: &[Vec<f64>],
    labels: &[u8],
    pin: &Option<(usize, Vec<u8>)>,
    k: usize,
) -> (Dataset, Option<PinnedConcept>) {
    let ds = Dataset::from_rows(rows, labels.to_vec()).unwrap();
    let pinned = pin
        .as_ref()
        .filter(|_| k > 1)
        .map(|(c, v)| PinnedConcept { column_index: *c, values: v.iter().map(|&x| f64::from(x)).collect() });
    (ds, pinned)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gradient_matches_central_differences((rows, labels, k, q, pin) in instance()) {
        let (ds, pinned) = build(&rows, &labels, &pin, k);
        let target = CbmPosterior::new(&ds, k, PriorSpec { std_theta: 1.3, std_phi: 2.0 }, pinned.as_ref()).unwrap();
        let q = &q[..target.dim()];
        let mut grad = vec![0.0; q.len()];
        target.log_density_and_grad(q, &mut grad);
        let mut scratch = grad.clone();
        let h = 1e-5;
        let mut err = 0.0;
        for i in 0..q.len() {
            let mut a = q.to_vec();
            let mut b = q.to_vec();
            a[i] += h;
            b[i] -= h;
            let fd = (target.log_density_and_grad(&a, &mut scratch) - target.log_density_and_grad(&b, &mut scratch)) / (2.0 * h);
            err += (fd - grad[i]).powi(2);
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        prop_assert!(err.sqrt() <= 1e-4 * norm.max(1e-8));
    }

    #[test]
    fn leapfrog_is_reversible((rows, labels, k, q, pin) in instance(), seed in 0u64..1000) {
        let (ds, pinned) = build(&rows, &labels, &pin, k);
        let target = CbmPosterior::new(&ds, k, PriorSpec::default(), pinned.as_ref()).unwrap();
        let q = &q[..target.dim()];
        let p: Vec<f64> = (0..q.len()).map(|i| ((seed as f64 + i as f64) * 0.77).sin()).collect();
        let (q1, p1) = leapfrog(q, &p, 0.02, 15, &target).unwrap();
        let flipped: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (q2, p2) = leapfrog(&q1, &flipped, 0.02, 15, &target).unwrap();
        for i in 0..q.len() {
            prop_assert!((q2[i] - q[i]).abs() < 1e-10);
            prop_assert!((p2[i] + p[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn logistic_stays_in_unit_interval(z in -800.0..800.0f64) {
        let s = logistic(z);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!((logistic(-z) - (1.0 - s)).abs() < 1e-12);
    }

    #[test]
    fn metric_axioms(a in vec(0.01..1.0f64, 1..10), seed in any::<u64>()) {
        let rot = |s: u64| -> Vec<f64> { a.iter().enumerate().map(|(i, _)| ((s.wrapping_add(i as u64) % 97) as f64 + 1.0) / 98.0).collect() };
        let b = rot(seed);
        let c = rot(seed / 3 + 5);
        for metric in MetricKind::ALL {
            let d = |x: &[f64], y: &[f64]| metric.distance(x, y).unwrap();
            prop_assert!(d(&a, &b) >= 0.0);
            prop_assert!(d(&a, &a).abs() < 1e-12);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            if metric != MetricKind::Cosine {
                prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
            }
        }
    }

    #[test]
    fn percent_disagreement_counts_rounded_mismatches(a in vec(0.0..1.0f64, 1..20), flips in vec(any::<bool>(), 20)) {
        let b: Vec<f64> = a.iter().zip(&flips).map(|(x, f)| if *f { 1.0 - x } else { *x }).collect();
        let expect = a.iter().zip(&b).filter(|(x, y)| round_activation(**x) != round_activation(**y)).count() as f64 / a.len() as f64;
        prop_assert_eq!(MetricKind::PercentDisagreement.distance(&a, &b).unwrap(), expect);
    }

    #[test]
    fn greedy_prefixes_are_stable(items in vec(vec(0.0..1.0f64, 3), 1..30), m in 1usize..10, seed in any::<u64>()) {
        for metric in [MetricKind::Euclidean, MetricKind::Absolute, MetricKind::PercentDisagreement] {
            let small = greedy_select(&items, m, metric, seed).unwrap().member_ids;
            let large = greedy_select(&items, m + 1, metric, seed).unwrap().member_ids;
            prop_assert_eq!(&large[..small.len()], &small[..]);
            let mut sorted = large.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), large.len());
        }
    }

    #[test]
    fn greedy_last_pick_maximizes_min_distance(items in vec(vec(0.0..1.0f64, 2), 2..25), m in 2usize..8, seed in any::<u64>()) {
        let ids = greedy_select(&items, m, MetricKind::Euclidean, seed).unwrap().member_ids;
        let (last, rest) = ids.split_last().unwrap();
        let score = |i: usize| rest.iter().map(|&j| MetricKind::Euclidean.distance(&items[i], &items[j]).unwrap()).fold(f64::INFINITY, f64::min);
        for i in (0..items.len()).filter(|i| !rest.contains(i)) {
            prop_assert!(score(i) <= score(*last));
        }
    }

    #[test]
    fn kmeans_members_are_distinct_and_sized(items in vec(vec(0.0..1.0f64, 2), 1..40), m in 1usize..10, seed in any::<u64>()) {
        let set = kmeans_select(&items, m, MetricKind::Euclidean, seed).unwrap();
        prop_assert_eq!(set.member_ids.len(), m.min(items.len()));
        let mut ids = set.member_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), set.member_ids.len());
        prop_assert_eq!(set.truncated, m > items.len());
    }

    #[test]
    fn f1_is_symmetric_and_bounded(pred in vec(0u8..2, 1..40), truth_seed in any::<u64>()) {
        let truth: Vec<u8> = (0..pred.len()).map(|i| ((truth_seed >> (i % 64)) & 1) as u8).collect();
        prop_assume!(truth.contains(&1) && pred.contains(&1));
        let a = f1_binary(&pred, &truth).unwrap();
        let b = f1_binary(&truth, &pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn single_match_is_invariant_to_negation(values in vec(0u8..2, 4..30), act in vec(0.0..1.0f64, 30)) {
        prop_assume!(values.contains(&1) && values.contains(&0));
        let act = &act[..values.len()];
        let catalog = GroundTruthCatalog {
            concepts: vec![NamedConcept { name: "c".into(), values: values.clone() }],
            valid_combinations: vec![vec![0]],
            min_concepts: 1,
            labeling_provenance: String::new(),
        };
        // Complement only exact-half-free activations so that rounding commutes with negation.
        let act: Vec<f64> = act.iter().map(|&v| if v == 0.5 { 0.6 } else { v }).collect();
        let neg: Vec<f64> = act.iter().map(|v| 1.0 - v).collect();
        let a = match_single(&act, &catalog, 0.0).unwrap();
        let b = match_single(&neg, &catalog, 0.0).unwrap();
        prop_assert_eq!(a.f1, b.f1);
    }
}
