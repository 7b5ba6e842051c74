use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wlmargin::flow::{self, FlowConfig, FlowSample, LinearMpnn, Loss, RISK_SLACK};
use wlmargin::generators::{construction, regular_single_orbit, ConstructionKind};
use wlmargin::graph::{disjoint_union, is_isomorphic_small, Graph};
use wlmargin::io::{load_tudataset, write_tudataset};
use wlmargin::kernels::{build_trace, collection_features, gram, wl_feature, KernelKind};
use wlmargin::margin::{hard_margin, LabeledPoints, Points};
use wlmargin::refinement::Horizon;
use wlmargin::subgraph::{contains_induced_at, named_pattern, PatternSet};
use wlmargin::svm::{min_eigenvalue, stratified_folds, train_kernel, train_linear};
use wlmargin::theory::color_split_map;

fn graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let pairs = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
            let edges: Vec<(usize, usize)> = pairs.zip(bits).filter(|(_, b)| *b).map(|(e, _)| e).collect();
            Graph::unlabeled(n, edges).unwrap()
        })
    })
}

fn graph_with_perm(max_n: usize) -> impl Strategy<Value = (Graph, Vec<usize>)> {
    graph(max_n).prop_flat_map(|g| {
        let perm = Just((0..g.order()).collect::<Vec<usize>>()).prop_shuffle();
        (Just(g), perm)
    })
}

fn patterns() -> impl Strategy<Value = PatternSet> {
    prop::sample::subsequence(vec!["c3", "c4", "k4", "c5"], 1..=2)
        .prop_map(|names| PatternSet::new(names.iter().map(|n| named_pattern(n).unwrap()).collect()).unwrap())
}

fn points(max_n: usize, max_d: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, d), n),
            prop::collection::vec(0..2usize, n).prop_filter("both classes", |l| l.contains(&0) && l.contains(&1)),
        )
    })
}

fn histograms(graphs: &[Graph], fs: Option<&PatternSet>, t: usize) -> Vec<Vec<Vec<u32>>> {
    // color ids differ between traces; compare sorted class sizes per round
    let trace = build_trace(graphs, fs, Horizon::Fixed(t));
    (0..graphs.len())
        .map(|g| {
            (0..=t)
                .map(|s| {
                    let mut sizes: Vec<u32> = trace.histogram(g, s).unwrap().into_iter().map(|x| x.1).collect();
                    sizes.sort_unstable();
                    sizes
                })
                .collect()
        })
        .collect()
}

proptest! {
    #[test]
    fn degrees_sum_to_twice_the_edges(g in graph(12)) {
        prop_assert_eq!(g.adjacency().degrees().iter().sum::<usize>(), 2 * g.edge_count());
    }

    #[test]
    fn disjoint_union_is_associative(a in graph(3), b in graph(3), c in graph(3)) {
        let left = disjoint_union(&disjoint_union(&a, &b), &c);
        let right = disjoint_union(&a, &disjoint_union(&b, &c));
        prop_assert!(is_isomorphic_small(&left, &right).unwrap());
    }

    #[test]
    fn single_orbit_graphs_are_regular_and_rotation_invariant(half in 1..10usize, degree in 0..20usize) {
        let n = 2 * half;
        prop_assume!(degree < n);
        let g = regular_single_orbit(n, degree).unwrap();
        prop_assert!(g.is_regular(degree));
        let rotation: Vec<usize> = (0..n).map(|v| (v + 1) % n).collect();
        let rotated = g.permuted(&rotation);
        prop_assert_eq!(rotated.edges(), g.edges());
    }

    #[test]
    fn separator_pair_is_two_regular(n in 6..40usize) {
        let c = construction(ConstructionKind::SeparatorPair, n).unwrap();
        prop_assert_eq!(c.graphs[0].order(), c.graphs[1].order());
        prop_assert!(c.graphs.iter().all(|g| g.is_regular(2)));
    }

    #[test]
    fn refinement_is_isomorphism_invariant((g, perm) in graph_with_perm(10), t in 0..4usize) {
        let h = g.permuted(&perm);
        let hist = histograms(&[g.clone(), h.clone()], None, t);
        prop_assert_eq!(&hist[0], &hist[1]);
        let trace = build_trace(&[g, h], None, Horizon::Fixed(t));
        for s in 0..=t {
            prop_assert!(!trace.distinguishes(0, 1, s).unwrap());
        }
    }

    #[test]
    fn refinement_is_deterministic(a in graph(10), b in graph(10), t in 0..4usize) {
        let graphs = [a, b];
        let x = build_trace(&graphs, None, Horizon::Fixed(t));
        let y = build_trace(&graphs, None, Horizon::Fixed(t));
        for s in 0..=t {
            for g in 0..2 {
                prop_assert_eq!(x.colors(s, g).unwrap(), y.colors(s, g).unwrap());
            }
        }
    }

    #[test]
    fn stabilizes_within_max_order(a in graph(10), b in graph(10)) {
        let bound = a.order().max(b.order());
        let trace = build_trace(&[a, b], None, Horizon::UntilStable);
        prop_assert!(trace.stable_at().unwrap() <= bound);
    }

    #[test]
    fn pattern_refinement_refines_and_counts_add_up(a in graph(10), b in graph(10), fs in patterns(), t in 0..4usize) {
        let graphs = [a, b];
        let plain = build_trace(&graphs, None, Horizon::Fixed(t));
        let refined = build_trace(&graphs, Some(&fs), Horizon::Fixed(t));
        let split = color_split_map(&plain, &refined, t).unwrap();
        for s in 0..=t {
            for g in 0..2 {
                let fine: std::collections::BTreeMap<_, _> = refined.histogram(g, s).unwrap().into_iter().collect();
                for (c, count) in plain.histogram(g, s).unwrap() {
                    let total: u32 = split.children(s, c).iter().map(|ch| fine.get(ch).copied().unwrap_or(0)).sum();
                    prop_assert_eq!(total, count);
                }
            }
        }
    }

    #[test]
    fn induced_containment_is_isomorphism_invariant((g, perm) in graph_with_perm(9), name in prop::sample::select(vec!["c3", "c4", "k4", "c5"])) {
        let f = named_pattern(name).unwrap();
        let h = g.permuted(&perm);
        for (v, &w) in perm.iter().enumerate() {
            prop_assert_eq!(contains_induced_at(&g, v, &f).unwrap(), contains_induced_at(&h, w, &f).unwrap());
        }
    }

    #[test]
    fn wl_feature_norm_is_bounded(g in graph(12), t in 0..5usize) {
        let n = g.order() as f64;
        let trace = build_trace(&[g], None, Horizon::Fixed(t));
        let f = wl_feature(&trace, 0, t).unwrap();
        prop_assert!(f.norm() <= ((t + 1) as f64).sqrt() * n + 1e-9);
    }

    #[test]
    fn kernels_are_isomorphism_invariant((g, perm) in graph_with_perm(10), other in graph(10), kind in prop::sample::select(vec![KernelKind::Wl, KernelKind::Wloa]), t in 0..4usize) {
        let h = g.permuted(&perm);
        let k = gram(&[g, h, other], kind, None, t, false).unwrap().values;
        prop_assert_eq!(k[(0, 2)], k[(1, 2)]);
        prop_assert_eq!(k[(0, 0)], k[(1, 1)]);
        prop_assert_eq!(k[(0, 1)], k[(0, 0)]);
    }

    #[test]
    fn small_grams_are_psd(graphs in prop::collection::vec(graph(8), 2..7), fs in prop::option::of(patterns()), kind in prop::sample::select(vec![KernelKind::Wl, KernelKind::Wloa]), normalized in any::<bool>(), t in 0..4usize) {
        let g = gram(&graphs, kind, fs.as_ref(), t, normalized).unwrap();
        prop_assert!(g.values == g.values.transpose());
        let top = (0..g.size()).map(|i| g.get(i, i)).fold(0.0, f64::max).max(1.0);
        prop_assert!(min_eigenvalue(&g.values) >= -1e-8 * top);
    }

    #[test]
    fn hyperplane_classifies_with_margin((pts, labels) in points(6, 3)) {
        let data = LabeledPoints { points: Points::Dense(pts), labels: labels.clone() };
        let r = hard_margin(&data).unwrap();
        prop_assume!(r.separable);
        let k = data.points.gram().unwrap();
        let w = r.w_norm_sq(&k).sqrt();
        for (f, &y) in r.decision_values(&k).iter().zip(&labels) {
            let signed = if y == 1 { *f } else { -f };
            prop_assert!(signed >= r.lambda * w * (1.0 - 1e-6) - 1e-9, "{} < {}", signed, r.lambda * w);
        }
    }

    #[test]
    fn margin_scales_with_points((pts, labels) in points(6, 3), s in 0.1..10.0f64) {
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| x * s).collect()).collect();
        let a = hard_margin(&LabeledPoints { points: Points::Dense(pts), labels: labels.clone() }).unwrap();
        let b = hard_margin(&LabeledPoints { points: Points::Dense(scaled), labels }).unwrap();
        prop_assert_eq!(a.separable, b.separable);
        prop_assert!((b.lambda - s * a.lambda).abs() <= 1e-6 * (1.0 + s * a.lambda));
        prop_assert!((b.radius - s * a.radius).abs() <= 1e-9 * (1.0 + s * a.radius));
        if a.separable {
            prop_assert!((b.ratio / a.ratio - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn dual_coefficients_stay_in_the_box((pts, labels) in points(12, 3), c in prop::sample::select(vec![0.01, 1.0, 100.0])) {
        let k = Points::Dense(pts).gram().unwrap();
        let m = train_kernel(&k, &labels, c).unwrap();
        prop_assert!(m.alpha.iter().all(|&a| (0.0..=c * (1.0 + 1e-12)).contains(&a)));
        prop_assert!(m.b.is_finite());
    }

    #[test]
    fn folds_are_a_deterministic_partition(targets in prop::collection::vec(0..3usize, 10..60), folds in 2..10usize, seed in any::<u64>()) {
        let a = stratified_folds(&targets, folds, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = stratified_folds(&targets, folds, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&a, &b);
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..targets.len()).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn near_hard_limit_matches_hard_margin((pts, labels) in points(8, 3)) {
        let data = LabeledPoints { points: Points::Dense(pts), labels };
        let hard = hard_margin(&data).unwrap();
        prop_assume!(hard.separable && hard.lambda > 1e-3);
        let soft = train_linear(&data, 1e10).unwrap();
        let geometric = 1.0 / soft.w_norm();
        prop_assert!((geometric - hard.lambda).abs() <= 0.01 * hard.lambda, "{} vs {}", geometric, hard.lambda);
    }

    #[test]
    fn flow_risk_never_increases(seed in any::<u64>(), loss in prop::sample::select(vec![Loss::Exponential, Loss::Logistic])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<FlowSample> = flow::toy_samples(2);
        let init = flow::random_initialization(&[2, 3, 1], &samples, loss, &mut rng).unwrap();
        let mut cfg = FlowConfig::new(0.5, 2000);
        cfg.loss = loss;
        let run = flow::flow(&samples, &init, &cfg).unwrap();
        prop_assert!(run.risks.windows(2).all(|w| w[1] <= w[0] + RISK_SLACK));
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<FlowSample> = (0..3)
            .map(|_| FlowSample::from_vector((0..2).map(|_| rng.random_range(-1.0..1.0)).collect(), 2))
            .collect();
        let m = LinearMpnn::random(&[2, 3, 1], 0.8, &mut rng).unwrap();
        let grads = flow::risk_and_gradient(&m, &samples, Loss::Logistic).unwrap().gradients;
        let risk = |layers: Vec<DMatrix<f64>>| {
            flow::risk_and_gradient(&LinearMpnn::new(layers).unwrap(), &samples, Loss::Logistic).unwrap().risk
        };
        let h = 1e-6;
        for (j, g) in grads.iter().enumerate() {
            for idx in 0..g.len() {
                let mut plus = m.layers().to_vec();
                plus[j][idx] += h;
                let mut minus = m.layers().to_vec();
                minus[j][idx] -= h;
                let fd = (risk(plus) - risk(minus)) / (2.0 * h);
                prop_assert!((fd - g[idx]).abs() / g[idx].abs().max(1e-3) < 1e-5);
            }
        }
    }

    #[test]
    fn tudataset_round_trip(graphs in prop::collection::vec(graph(8), 1..6), raw in prop::collection::vec(-2..3i64, 6)) {
        let labels = &raw[..graphs.len()];
        let dir = tempfile::tempdir().unwrap();
        write_tudataset(dir.path(), "RT", &graphs, labels).unwrap();
        let back = load_tudataset(dir.path(), "RT").unwrap();
        prop_assert_eq!(&back.raw_labels, &labels.to_vec());
        prop_assert_eq!(back.graphs.len(), graphs.len());
        for (a, b) in graphs.iter().zip(&back.graphs) {
            prop_assert!(is_isomorphic_small(a, b).unwrap());
        }
    }

    #[test]
    fn normalized_features_have_unit_norm(graphs in prop::collection::vec(graph(10), 1..5), t in 0..4usize) {
        let trace = build_trace(&graphs, None, Horizon::Fixed(t));
        for f in collection_features(&trace, KernelKind::Wl, t, true).unwrap() {
            prop_assert!((f.norm() - 1.0).abs() < 1e-12);
        }
    }
}
