use proptest::prelude::*;

use expofront::decomposition::{
    bvn_decompose, caratheodory_decompose, delivery_schedule, expected_exposure,
    BistochasticMatrix, DeliveryStrategy,
};
use expofront::expohedron::{majorization_check, membership_tol};
use expofront::harness::{filter_instances, instances_from_json, instances_to_json};
use expofront::model::{dcg_weights, Permutation, QueryInstance, TargetPolicy};
use expofront::pareto::{pexpo_front, sphere_expo_front};

fn permutation(n: usize) -> impl Strategy<Value = Permutation> {
    Just((0..n).collect::<Vec<usize>>())
        .prop_shuffle()
        .prop_map(|order| Permutation::from_ranking(&order).unwrap())
}

fn mixture(n: usize) -> impl Strategy<Value = Vec<(f64, Permutation)>> {
    prop::collection::vec((0.01f64..1.0, permutation(n)), 1..8).prop_map(|raw| {
        let total: f64 = raw.iter().map(|(w, _)| w).sum();
        raw.into_iter().map(|(w, p)| (w / total, p)).collect()
    })
}

fn instance(max_items: usize) -> impl Strategy<Value = QueryInstance> {
    (3..=max_items)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0usize..(n - 1), n),
            )
        })
        .prop_filter_map("needs two groups and some relevance", |(rho, groups)| {
            let n = rho.len();
            QueryInstance::new("p", rho, groups, dcg_weights(n), &TargetPolicy::Merit).ok()
        })
        .prop_filter("needs two groups", |inst| inst.n_groups() >= 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn caratheodory_reconstructs_mixtures(n in 2usize..25, seed_mix in mixture(25)) {
        let gamma = dcg_weights(n);
        let mut x = vec![0.0; n];
        for (w, p) in &seed_mix {
            let ranking: Vec<usize> = p.ranking().into_iter().filter(|&i| i < n).collect();
            let e = Permutation::from_ranking(&ranking).unwrap().exposure(&gamma);
            for (xi, ei) in x.iter_mut().zip(e) {
                *xi += w * ei;
            }
        }
        let dist = caratheodory_decompose(&x, &gamma, membership_tol(&gamma)).unwrap();
        prop_assert!(dist.atoms().len() <= n);
        let back = expected_exposure(&dist, &gamma).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn bvn_reconstructs_mixtures(n in 2usize..10, seed_mix in mixture(10)) {
        let mut entries = vec![0.0; n * n];
        for (w, p) in &seed_mix {
            let ranking: Vec<usize> = p.ranking().into_iter().filter(|&i| i < n).collect();
            let p = Permutation::from_ranking(&ranking).unwrap();
            for i in 0..n {
                entries[i * n + p.position_of(i)] += w;
            }
        }
        let b = BistochasticMatrix::new(n, entries.clone(), 1e-12).unwrap();
        let atoms = bvn_decompose(&b, 1e-12).unwrap();
        prop_assert!(atoms.len() <= (n - 1) * (n - 1) + 1);
        let mut back = vec![0.0; n * n];
        for (w, p) in &atoms {
            for i in 0..n {
                back[i * n + p.position_of(i)] += w;
            }
        }
        for (a, b) in back.iter().zip(&entries) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn low_discrepancy_counts_track_weights(seed_mix in mixture(6), t in 1usize..200) {
        let atoms = seed_mix
            .into_iter()
            .map(|(weight, perm)| expofront::model::Atom { weight, perm })
            .collect();
        let dist = expofront::model::RankingDistribution::normalized(atoms, 0.0).unwrap();
        let schedule = delivery_schedule(&dist, t, DeliveryStrategy::LowDiscrepancy).unwrap();
        for (k, a) in dist.atoms().iter().enumerate() {
            let count = schedule.iter().filter(|&&s| s == k).count() as f64;
            prop_assert!((count - a.weight * t as f64).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn exact_front_is_feasible_and_monotone(inst in instance(9)) {
        let front = pexpo_front(&inst).unwrap();
        for p in &front.points {
            prop_assert!(majorization_check(&p.exposure, inst.gamma(), 1e-7).unwrap().is_feasible());
        }
        for w in front.points.windows(2) {
            prop_assert!(w[1].utility >= w[0].utility - 1e-9);
            prop_assert!(w[1].unfairness >= w[0].unfairness - 1e-9);
        }
    }

    #[test]
    fn sphere_front_never_beats_exact(inst in instance(9)) {
        let exact = pexpo_front(&inst).unwrap();
        let approx = sphere_expo_front(&inst, 2, 3).unwrap();
        let f0 = exact.points[0].unfairness;
        for p in &approx.front.points {
            let best = exact.utility_at(p.unfairness.max(f0)).unwrap();
            prop_assert!(p.utility <= best + 1e-6);
        }
    }

    #[test]
    fn json_round_trip_and_filter_idempotent(list in prop::collection::vec(instance(8), 1..5)) {
        let back = instances_from_json(&instances_to_json(&list).unwrap()).unwrap();
        prop_assert_eq!(&back, &list);
        let (once, _) = filter_instances(list, 100);
        let (twice, drops) = filter_instances(once.clone(), 100);
        prop_assert_eq!(once, twice);
        prop_assert_eq!(drops.total(), 0);
    }
}
