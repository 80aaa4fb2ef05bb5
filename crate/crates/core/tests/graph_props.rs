use std::collections::BTreeMap;

use graspkg_core::dataset::{EmbeddingTable, Ontology};
use graspkg_core::graph::{build_graph, init_node_features, normalize_adjacency, NodeId, NodeKind, Variant};
use graspkg_core::tensor::Tensor;
use proptest::prelude::*;

fn s(x: &str) -> String {
    x.to_string()
}

/// Three classes with two hypernym chains that merge at instrumentality,
/// four tasks and nine Used-For pairs. One Is-A pair is listed twice.
fn mini_ontology() -> Ontology {
    Ontology {
        classes: vec![s("mug.n.04"), s("frying_pan.n.01"), s("spatula.n.01")],
        concepts: vec![
            s("drinking_vessel.n.01"),
            s("vessel.n.03"),
            s("container.n.01"),
            s("instrumentality.n.03"),
            s("pan.n.01"),
            s("cooking_utensil.n.01"),
            s("kitchen_utensil.n.01"),
            s("implement.n.01"),
        ],
        hypernym_edges: vec![
            (s("mug.n.04"), s("drinking_vessel.n.01")),
            (s("drinking_vessel.n.01"), s("vessel.n.03")),
            (s("vessel.n.03"), s("container.n.01")),
            (s("container.n.01"), s("instrumentality.n.03")),
            (s("frying_pan.n.01"), s("pan.n.01")),
            (s("pan.n.01"), s("cooking_utensil.n.01")),
            (s("cooking_utensil.n.01"), s("kitchen_utensil.n.01")),
            (s("kitchen_utensil.n.01"), s("implement.n.01")),
            (s("implement.n.01"), s("instrumentality.n.03")),
            (s("spatula.n.01"), s("cooking_utensil.n.01")),
            (s("cooking_utensil.n.01"), s("kitchen_utensil.n.01")),
        ],
        tasks: vec![s("pour"), s("handover"), s("saute"), s("flip")],
        used_for: vec![
            (s("mug.n.04"), s("pour")),
            (s("mug.n.04"), s("handover")),
            (s("frying_pan.n.01"), s("saute")),
            (s("frying_pan.n.01"), s("flip")),
            (s("frying_pan.n.01"), s("handover")),
            (s("frying_pan.n.01"), s("pour")),
            (s("spatula.n.01"), s("flip")),
            (s("spatula.n.01"), s("handover")),
            (s("spatula.n.01"), s("saute")),
        ],
        instances: BTreeMap::from([(s("mug_1"), s("mug.n.04")), (s("pan_1"), s("frying_pan.n.01"))]),
    }
}

#[test]
fn mini_ontology_counts() {
    let o = mini_ontology();
    let count = |v, inst| {
        let g = build_graph(&o, v, inst).unwrap();
        (g.node_count(), g.edge_count())
    };
    assert_eq!(count(Variant::Full, false), (15, 19));
    assert_eq!(count(Variant::TasksOnly, false), (7, 9));
    assert_eq!(count(Variant::WordnetOnly, false), (11, 10));
    assert_eq!(count(Variant::Full, true), (17, 21));
}

#[test]
fn indicator_column_example() {
    let o = Ontology {
        classes: vec![s("b.n.01"), s("a.n.01")],
        tasks: vec![s("pour")],
        used_for: vec![(s("a.n.01"), s("pour"))],
        ..Ontology::default()
    };
    let g = build_graph(&o, Variant::Full, false).unwrap();
    let table = EmbeddingTable::pseudo(o.vocabulary(), 4, 0).unwrap();
    let goal = g.require(NodeKind::Task, "pour").unwrap();
    let x = init_node_features(&g, &table, None, Some(goal)).unwrap();
    assert_eq!(x.shape(), &[3, 5]);
    let indicator: Vec<f64> = (0..3).map(|r| x.get(r, 4)).collect();
    assert_eq!(indicator, vec![0.0, 0.0, 1.0]);
    assert_eq!(x, init_node_features(&g, &table, None, Some(goal)).unwrap());
    assert!(init_node_features(&g, &table, None, Some(NodeId(0))).is_err());
}

fn dense(n: usize, bits: &[bool]) -> Tensor {
    let mut a = Tensor::zeros(vec![n, n]);
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if bits[k] {
                a.data_mut()[i * n + j] = 1.0;
                a.data_mut()[j * n + i] = 1.0;
            }
            k += 1;
        }
    }
    a
}

fn graph_strategy() -> impl Strategy<Value = Tensor> {
    (1usize..=20).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| dense(n, &bits))
    })
}

/// Exactly rounded sum of a few floats via Neumaier compensation.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn normalization_matches_closed_form(a in graph_strategy()) {
        let n = a.rows();
        let hat = normalize_adjacency(&a).unwrap();
        let deg: Vec<f64> = (0..n).map(|i| 1.0 + (0..n).map(|j| a.get(i, j)).sum::<f64>()).collect();
        for i in 0..n {
            for j in 0..n {
                let aij = if i == j { 1.0 } else { a.get(i, j) };
                let want = aij / (deg[i].sqrt() * deg[j].sqrt());
                prop_assert!((hat.get(i, j) - want).abs() <= 1e-12);
                prop_assert_eq!(hat.get(i, j), hat.get(j, i));
            }
        }
    }

    #[test]
    fn regular_graphs_have_unit_rows(n in 3usize..=20, half in 0usize..=4) {
        // circulant graph: node i links to i±1..=i±half
        let half = half.min((n - 1) / 2);
        let mut a = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for k in 1..=half {
                let j = (i + k) % n;
                a.data_mut()[i * n + j] = 1.0;
                a.data_mut()[j * n + i] = 1.0;
            }
        }
        let d = 2 * half;
        let hat = normalize_adjacency(&a).unwrap();
        let entry = 1.0 / (d as f64 + 1.0);
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| hat.get(i, j)).filter(|&v| v != 0.0).collect();
            prop_assert_eq!(row.len(), d + 1);
            prop_assert!(row.iter().all(|&v| v == entry));
            prop_assert_eq!(compensated_sum(row.into_iter()), 1.0);
        }
    }

    #[test]
    fn attach_is_pure(seed in 0u64..1000) {
        let o = mini_ontology();
        let g = build_graph(&o, Variant::Full, true).unwrap();
        let before = g.clone();
        let anchors: Vec<NodeId> = (0..g.node_count())
            .map(NodeId)
            .filter(|&id| matches!(g.node(id).kind, NodeKind::Class | NodeKind::Instance))
            .collect();
        let anchor = anchors[(seed as usize) % anchors.len()];
        let attached = g.attach_grasp_node(anchor).unwrap();
        prop_assert_eq!(&g, &before);
        prop_assert_eq!(attached.node_count(), g.node_count() + 1);
        prop_assert_eq!(attached.edge_count(), g.edge_count() + 1);
        let grasp = attached.grasp_node().unwrap();
        prop_assert_eq!(attached.degree(grasp), 1);
        let neighbours: Vec<_> = attached.edges().filter(|&(a, b)| a == grasp || b == grasp).collect();
        prop_assert_eq!(neighbours.len(), 1);
        // dropping the grasp row and column of A gives back the original
        let n = g.node_count();
        let big = attached.adjacency();
        let mut small = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in 0..n {
                small.data_mut()[i * n + j] = big.get(i, j);
            }
        }
        prop_assert_eq!(&normalize_adjacency(&small).unwrap(), g.normalized_adjacency());
    }

    #[test]
    fn build_is_order_invariant(perm_seed in any::<u64>()) {
        let o = mini_ontology();
        let mut shuffled = o.clone();
        let mut r = graspkg_core::rng::seeded(perm_seed);
        graspkg_core::rng::shuffle(&mut r, &mut shuffled.classes);
        graspkg_core::rng::shuffle(&mut r, &mut shuffled.concepts);
        graspkg_core::rng::shuffle(&mut r, &mut shuffled.hypernym_edges);
        graspkg_core::rng::shuffle(&mut r, &mut shuffled.tasks);
        graspkg_core::rng::shuffle(&mut r, &mut shuffled.used_for);
        for v in [Variant::Full, Variant::TasksOnly, Variant::WordnetOnly] {
            let a = build_graph(&o, v, false).unwrap();
            let b = build_graph(&shuffled, v, false).unwrap();
            prop_assert_eq!(a.document(), b.document());
            prop_assert_eq!(a.normalized_adjacency(), b.normalized_adjacency());
        }
    }
}

#[test]
fn task_anchor_is_rejected() {
    let g = build_graph(&mini_ontology(), Variant::Full, false).unwrap();
    let task = g.require(NodeKind::Task, "pour").unwrap();
    assert!(g.attach_grasp_node(task).is_err());
    let concept = g.require(NodeKind::Concept, "vessel.n.03").unwrap();
    assert!(g.attach_grasp_node(concept).is_err());
}
