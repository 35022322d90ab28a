mod common;

use std::collections::{BTreeMap, BTreeSet};

use bubblenet_core::network::*;
use bubblenet_core::te::SIIMatrix;
use proptest::prelude::*;

use common::hand_matrix;

fn arb_network() -> impl Strategy<Value = (SIIMatrix, NodeGroups)> {
    (2usize..=10).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(0.0..0.5f64, n), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(mut values, fin)| {
                for (i, row) in values.iter_mut().enumerate() {
                    row[i] = 0.0;
                }
                let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
                let mut groups = NodeGroups::new();
                for (id, f) in ids.iter().zip(fin) {
                    groups = groups.with(id, if f { Group::Financial } else { Group::Industrial }).unwrap();
                }
                (SIIMatrix::new(ids, values, None).unwrap(), groups)
            })
    })
}

proptest! {
    #[test]
    fn net_indicators_are_gross_differences((m, g) in arb_network()) {
        let t = compute_indicators(&m, &g).unwrap();
        for r in &t.rows {
            prop_assert_eq!(r.nsii_on_all, r.si_to_all - r.si_from_all);
            prop_assert_eq!(r.nsii_on_fin, r.si_to_fin - r.si_from_fin);
            prop_assert_eq!(r.nsii_on_ix, r.si_to_ix - r.si_from_ix);
            prop_assert!((r.si_to_fin + r.si_to_ix - r.si_to_all).abs() < 1e-12);
        }
        let total: f64 = t.rows.iter().map(|r| r.nsii_on_all).sum();
        prop_assert!(total.abs() < 1e-12);
    }

    #[test]
    fn edges_are_unidirectional_and_positive((m, g) in arb_network(), threshold in 0.0..0.5f64) {
        let sin = build_sin(&m, &g, threshold, None).unwrap();
        let mut pairs = BTreeSet::new();
        for e in &sin.edges {
            prop_assert!(e.nsii > 0.0 && e.nsii >= threshold);
            prop_assert!((0.0..=1.0).contains(&e.weight));
            let i = m.index_of(&e.source).unwrap();
            let j = m.index_of(&e.target).unwrap();
            prop_assert_eq!(e.nsii, m.nsii_at(i, j));
            let key = (e.source.clone().min(e.target.clone()), e.source.clone().max(e.target.clone()));
            prop_assert!(pairs.insert(key));
        }
    }

    #[test]
    fn edge_count_shrinks_with_threshold((m, g) in arb_network(), a in 0.0..0.5f64, b in 0.0..0.5f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = build_sin(&m, &g, lo, None).unwrap();
        let strict = build_sin(&m, &g, hi, None).unwrap();
        prop_assert!(strict.edges.len() <= loose.edges.len());
        for e in &strict.edges {
            prop_assert!(loose.edges.contains(e));
        }
    }

    #[test]
    fn sizes_are_within_group_ranks((m, g) in arb_network()) {
        let sin = build_sin(&m, &g, 0.0, None).unwrap();
        for group in [Group::Industrial, Group::Financial] {
            let sizes: Vec<f64> = sin.nodes.iter().filter(|n| n.group == group).map(|n| n.size).collect();
            let k = sizes.len() as f64;
            prop_assert!((sizes.iter().sum::<f64>() - k * (k + 1.0) / 2.0).abs() < 1e-9);
        }
    }
}

#[test]
fn hand_fixture() {
    let (m, g) = hand_matrix();
    let t = compute_indicators(&m, &g).unwrap();
    let y = t.row("y").unwrap();
    assert_eq!(y.si_from_all, 0.4 + 0.3);
    assert_eq!(y.si_from_fin, 0.3);
    assert_eq!(y.si_from_ix, 0.4);
    assert_eq!(y.nsii_on_all, 0.1 - (0.4 + 0.3));
    let z = t.row("z").unwrap();
    assert_eq!((z.si_to_fin, z.si_from_fin), (0.0, 0.0));
    assert_eq!(z.nsii_on_ix, 0.3 - 0.2);
    assert_eq!(t.column("SI-to-IX").unwrap(), vec![0.4, 0.1, 0.3]);
    assert_eq!(t.row("x").unwrap().value("NSII-on-All").unwrap(), (0.4 + 0.2) - 0.1);
    assert!(t.row("w").is_err());

    let losses: BTreeMap<String, f64> = [("x", 30.0), ("y", 10.0), ("z", 50.0)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let sin = build_sin(&m, &g, 0.0, Some(&losses)).unwrap();
    let edges: Vec<_> = sin.edges.iter().map(|e| (e.source.as_str(), e.target.as_str(), e.weight)).collect();
    // NSII: x->y 0.3 (plus rounding), x->z 0.2, z->y 0.3; rescaled over [0.2, 0.3].
    assert_eq!(edges.len(), 3);
    assert_eq!(edges[0].0, "x");
    assert_eq!(edges[0].2, 1.0);
    assert_eq!(edges[1], ("x", "z", 0.0));
    let colors: Vec<_> = sin.nodes.iter().map(|n| n.color.unwrap()).collect();
    assert_eq!(colors, vec![2.0, 1.0, 1.0]);
    let sizes: Vec<_> = sin.nodes.iter().map(|n| n.size).collect();
    // x: NSII-on-IX 0.3 > y: -0.3; z alone in its group.
    assert_eq!(sizes, vec![2.0, 1.0, 1.0]);
}

#[test]
fn equal_candidates_get_unit_weight() {
    let m = SIIMatrix::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
        None,
    )
    .unwrap();
    let g = NodeGroups::new()
        .with("a", Group::Industrial)
        .unwrap()
        .with("b", Group::Industrial)
        .unwrap()
        .with("c", Group::Industrial)
        .unwrap();
    let sin = build_sin(&m, &g, 0.0, None).unwrap();
    assert!(sin.edges.iter().all(|e| e.weight == 1.0));
}

#[test]
fn labels_and_errors() {
    let l: NodeLabel = "financial/bank".parse().unwrap();
    assert_eq!(l.group, Group::Financial);
    assert_eq!(l.subsector.as_deref(), Some("bank"));
    assert_eq!(l.to_string(), "financial/bank");
    assert_eq!("IX".parse::<Group>().unwrap(), Group::Industrial);
    assert!("energy".parse::<Group>().unwrap_err().is_validation());

    let (m, _) = hand_matrix();
    let partial = NodeGroups::new().with("x", Group::Industrial).unwrap();
    assert!(compute_indicators(&m, &partial).is_err());
    let mut twice = NodeGroups::new();
    twice.insert("x", Group::Industrial.label()).unwrap();
    assert!(twice.insert("x", Group::Financial.label()).is_err());
    let (m, g) = hand_matrix();
    assert!(build_sin(&m, &g, -0.1, None).is_err());
    let missing: BTreeMap<String, f64> = BTreeMap::from([("x".to_string(), 1.0)]);
    assert!(build_sin(&m, &g, 0.1, Some(&missing)).is_err());
}
