use cadorder_core::costmodel::{CostOracle, SyntheticCostModel};
use cadorder_core::datagen::{random_dataset, random_problem, GenConfig};
use cadorder_core::features::{
    brown_features, dedup_features, enumerate_descriptors, eval_feature, selected_triplet, FeatureSet,
};
use cadorder_core::heuristics::{
    check_weight_condition, layer2_argmax, lex_order, select_base_weight, sort_descending, FeatureMatrix,
    HeuristicNetwork, VariableOrder,
};
use cadorder_core::polyset::{parse_problem, serialize_problem, ProblemInstance};
use cadorder_core::search::{search_triplets, SearchReport};
use cadorder_core::training::{forward_soft, TrainableNetwork};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

fn gen_config() -> impl Strategy<Value = GenConfig> {
    (2usize..=5, 1usize..=4, 1usize..=6, 1u32..=6, 1u32..=10, any::<u64>()).prop_map(
        |(n_vars, polys, monos, max_degree, density, seed)| GenConfig {
            n_vars,
            n_polys: (1, polys),
            monomials: (1, monos),
            max_degree,
            density: f64::from(density) / 10.0,
            seed,
            ..GenConfig::default()
        },
    )
}

fn problem() -> impl Strategy<Value = ProblemInstance> {
    (gen_config(), 0u64..1_000_000).prop_map(|(cfg, i)| random_problem(&cfg, i).unwrap())
}

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Rational vectors drawn from a small value set so that ties are common.
fn rational_y() -> impl Strategy<Value = Vec<BigRational>> {
    prop::collection::vec((-6i64..=6, 1i64..=3), 1..=6).prop_map(|v| v.into_iter().map(|(n, d)| q(n, d)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialization_round_trips(pr in problem()) {
        let text = serialize_problem(&pr);
        let back = parse_problem(&text).unwrap();
        prop_assert_eq!(&back, &pr.clone().without_id());
        prop_assert_eq!(serialize_problem(&back), text);
    }

    #[test]
    fn canonicalization_is_idempotent(pr in problem()) {
        for p in pr.polynomials() {
            let once = p.canonicalize();
            prop_assert_eq!(&once.canonicalize(), &once);
            prop_assert_eq!(&once, p);
        }
    }

    #[test]
    fn parsing_is_deterministic(pr in problem()) {
        let text = serialize_problem(&pr);
        let headerless: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        prop_assert_eq!(parse_problem(&text).unwrap(), parse_problem(&text).unwrap());
        prop_assert_eq!(parse_problem(&headerless).unwrap(), parse_problem(&headerless).unwrap());
    }

    #[test]
    fn network_matches_lexicographic_order(pr in problem(), extra in 0u64..5) {
        for triplet in [brown_features(), selected_triplet()] {
            let base = select_base_weight(std::slice::from_ref(&pr), &triplet).unwrap();
            let w = base.w + extra;
            let fm = FeatureMatrix::compute(&triplet, &pr).unwrap();
            let net = HeuristicNetwork::frozen(triplet, w);
            prop_assert_eq!(net.nn_order(&pr).unwrap(), lex_order(&fm));
        }
    }

    #[test]
    fn base_weight_is_minimal(pr in problem()) {
        let triplet = brown_features();
        let w = select_base_weight(std::slice::from_ref(&pr), &triplet).unwrap().w;
        let fm = FeatureMatrix::compute(&triplet, &pr).unwrap();
        prop_assert!(check_weight_condition(&fm, w, &pr).is_ok());
        if fm.max_value().is_some_and(|m| *m >= BigRational::one()) {
            prop_assert!(check_weight_condition(&fm, w - 1, &pr).is_err());
        }
    }

    #[test]
    fn argmax_is_descending_sort(y in rational_y()) {
        prop_assert_eq!(layer2_argmax(&y).unwrap(), sort_descending(&y));
    }

    #[test]
    fn argmax_is_scale_invariant(pr in problem(), num in 1i64..50, den in 1i64..50) {
        let triplet = brown_features();
        let w = select_base_weight(std::slice::from_ref(&pr), &triplet).unwrap().w;
        let net = HeuristicNetwork::frozen(triplet, w);
        let scaled = net.clone().scaled(&q(num, den));
        prop_assert_eq!(net.nn_order(&pr).unwrap(), scaled.nn_order(&pr).unwrap());
    }

    #[test]
    fn dominance_orders_layer1_outputs(rows in prop::collection::vec(prop::array::uniform3(0i64..8), 2..=5), extra in 0u64..3) {
        let fm = FeatureMatrix::from_integers(&rows);
        let w = 9 + extra;
        let net = HeuristicNetwork::frozen(brown_features(), w);
        let y = net.layer1_forward(&fm);
        for a in 0..rows.len() {
            for b in 0..rows.len() {
                if rows[a] > rows[b] {
                    prop_assert!(y[a] > y[b]);
                }
            }
        }
    }

    #[test]
    fn integer_features_evaluate_to_integers(pr in problem()) {
        for fd in brown_features().into_iter().chain(selected_triplet()) {
            for v in 0..pr.n_vars() {
                prop_assert!(eval_feature(&fd, &pr, v).unwrap().is_integer());
            }
        }
    }

    #[test]
    fn synthetic_cost_is_bitwise_deterministic(pr in problem(), seed in any::<u64>()) {
        let model = SyntheticCostModel { noise_seed: Some(seed), noise_scale: 0.3, ..SyntheticCostModel::default() };
        let o = VariableOrder::identity(pr.n_vars());
        prop_assert_eq!(model.cost(&pr, &o).unwrap().to_bits(), model.cost(&pr, &o).unwrap().to_bits());
    }

    #[test]
    fn softmax_is_normalized_and_positive(pr in problem(), w in prop::array::uniform3(-3.0f64..3.0)) {
        let fm = FeatureMatrix::compute(&brown_features(), &pr).unwrap();
        let net = TrainableNetwork { triplet: brown_features(), weights: w, feature_scale: [6.0, 18.0, 8.0] };
        let p = forward_soft(&net, &fm, 1.0).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn soft_argmax_is_descending_sort(pr in problem(), w in prop::array::uniform3(-3.0f64..3.0)) {
        let fm = FeatureMatrix::compute(&brown_features(), &pr).unwrap();
        let net = TrainableNetwork { triplet: brown_features(), weights: w, feature_scale: [1.0; 3] };
        let y = net.layer1(&fm);
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|p| p[1] - p[0] > 1e-9));
        let p = forward_soft(&net, &fm, 1.0).unwrap();
        let k = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        let mut expect: Vec<usize> = (0..y.len()).collect();
        expect.sort_by(|&a, &b| y[b].total_cmp(&y[a]));
        let chosen = VariableOrder::all(y.len()).nth(k).unwrap();
        prop_assert_eq!(chosen.perm(), &expect[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dedup_is_idempotent_and_refines(seed in any::<u64>(), small in 1usize..8, grow in 1usize..30) {
        let cfg = GenConfig { seed, ..GenConfig::default() };
        let big = random_dataset(&cfg, small + grow).unwrap();
        let little = &big[..small];
        let candidates = enumerate_descriptors();
        let coarse = dedup_features(&candidates, little).unwrap();
        let again = dedup_features(coarse.descriptors(), little).unwrap();
        prop_assert_eq!(again.descriptors(), coarse.descriptors());
        let fine = dedup_features(&candidates, &big).unwrap();
        prop_assert!(fine.len() >= coarse.len());
        for fd in fine.descriptors() {
            let rep = coarse.class_of(fd).unwrap();
            for m in fine.provenance(fd).unwrap() {
                prop_assert_eq!(coarse.class_of(m), Some(rep));
            }
        }
    }
}

#[test]
fn named_triplets_survive_separating_dedup() {
    let mut probe = random_dataset(&GenConfig::default(), 50).unwrap();
    probe.extend(cadorder_core::datagen::hand_instances());
    let fs = dedup_features(&enumerate_descriptors(), &probe).unwrap();
    for fd in brown_features().into_iter().chain(selected_triplet()) {
        assert!(fs.class_of(&fd).is_some(), "{fd}");
    }
    // the six named features are pairwise separated by this probe
    let reps: std::collections::BTreeSet<_> = brown_features()
        .into_iter()
        .chain(selected_triplet())
        .map(|fd| fs.class_of(&fd).unwrap())
        .collect();
    assert_eq!(reps.len(), 6);
}

#[test]
fn zero_is_below_every_weight() {
    let fm = FeatureMatrix::new(vec![[BigRational::zero(), BigRational::zero(), BigRational::zero()]; 3]);
    let pr = parse_problem("vars: x,y,z\n1").unwrap();
    assert!(check_weight_condition(&fm, 2, &pr).is_ok());
}

fn run_search(threads: usize) -> SearchReport {
    let mut pool: Vec<_> = brown_features().into_iter().chain(selected_triplet()).collect();
    pool.sort();
    let ds = random_dataset(&GenConfig { seed: 4, ..GenConfig::default() }, 60).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| search_triplets(&FeatureSet::from_descriptors(pool), &ds, &SyntheticCostModel::default(), 0).unwrap())
}

#[test]
fn search_report_independent_of_workers() {
    let one = run_search(1);
    assert_eq!(one, run_search(4));
    assert!(one.candidates[0].candidate.total_cost <= one.baseline.total_cost);
    assert_eq!(one.candidates.len(), 120);
}
