mod common;

use std::fs;

use common::{random_graph, rng};
use mlsl::datagen::{gen_spammer_hammer, IndicatorSpec, SynthSpec};
use mlsl::graph::{NodeId, Unfolding};
use mlsl::ingest::{
    compute_quality, grades_from_graph, load_graph, load_labels, load_model, model_to_string, save_graph,
    save_labels, save_model, votes_from_graph,
};
use mlsl::model::{MlslModel, OutputMode};
use mlsl::Error;
use proptest::prelude::*;
use rand::Rng;
use tempfile::tempdir;

#[test]
fn two_row_file() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("e.csv");
    fs::write(&p, "src,dst,f1,f2,f3\na,b,1,2.5,-3\nb,a,0,1e-3,7\n").unwrap();
    let g = load_graph(&p).unwrap();
    assert_eq!(g.edge_count(), 2);
    assert_eq!(g.feature_width(), 3);
    assert_eq!(g.edge(1).features, vec![0.0, 1e-3, 7.0]);
    assert_eq!(g.name(g.edge(0).src), "a");
}

#[test]
fn malformed_files_name_the_line() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("e.csv");
    fs::write(&p, "src,dst,f1\na,b,1\nb,c\n").unwrap();
    match load_graph(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    fs::write(&p, "src,dst,f1\na,b,1\nb,c,x\n").unwrap();
    match load_graph(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    fs::write(&p, "").unwrap();
    assert!(matches!(load_graph(&p), Err(Error::Parse { .. })));
    assert!(matches!(load_graph(&dir.path().join("missing.csv")), Err(Error::Io(..))));
}

#[test]
fn synthetic_graph_round_trips_exactly() {
    let data = gen_spammer_hammer(&SynthSpec {
        n_items: 200,
        n_users: 150,
        indicator: Some(IndicatorSpec::default()),
        ..Default::default()
    })
    .unwrap();
    let dir = tempdir().unwrap();
    let (ep, lp) = (dir.path().join("e.csv"), dir.path().join("l.csv"));
    save_graph(&data.graph, &ep).unwrap();
    save_labels(&data.dataset, &data.graph, &lp).unwrap();
    let g = load_graph(&ep).unwrap();
    assert_eq!(g.edge_count(), data.graph.edge_count());
    for (a, b) in g.edges().iter().zip(data.graph.edges()) {
        assert_eq!(g.name(a.src), data.graph.name(b.src));
        assert_eq!(g.name(a.dst), data.graph.name(b.dst));
        assert_eq!(a.features, b.features);
    }
    let labels = load_labels(&lp, &g, Some(2)).unwrap();
    assert_eq!(labels.class_labels(), data.dataset.class_labels());

    let (votes, bip) = votes_from_graph(&g).unwrap();
    assert_eq!(votes.votes().len(), data.votes.votes().len());
    assert_eq!(bip.items.len(), 200);
}

proptest! {
    #[test]
    fn arbitrary_features_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut g = random_graph(&mut r, 6, 12, 3);
        for e in 0..4 {
            let f = vec![r.random::<f64>() * 1e300, -r.random::<f64>() * 1e-300, f64::MIN_POSITIVE];
            let (s, d) = (g.edge(e).src, g.edge(e).dst);
            g.add_edge(s, d, f).unwrap();
        }
        let dir = tempdir().unwrap();
        let p = dir.path().join("g.csv");
        save_graph(&g, &p).unwrap();
        let back = load_graph(&p).unwrap();
        prop_assert_eq!(back.edge_count(), g.edge_count());
        for (a, b) in back.edges().iter().zip(g.edges()) {
            prop_assert_eq!(&a.features, &b.features);
            prop_assert_eq!(back.name(a.src), g.name(b.src));
        }
    }
}

#[test]
fn labels_must_resolve() {
    let dir = tempdir().unwrap();
    let (ep, lp) = (dir.path().join("e.csv"), dir.path().join("l.csv"));
    fs::write(&ep, "src,dst,f1\na,b,1\n").unwrap();
    fs::write(&lp, "node,label\na,1\nzz,0\n").unwrap();
    let g = load_graph(&ep).unwrap();
    assert!(matches!(load_labels(&lp, &g, None), Err(Error::Parse { line: 3, .. })));
    fs::write(&lp, "node,label\na,4\n").unwrap();
    assert!(load_labels(&lp, &g, Some(3)).is_err());
}

#[test]
fn grade_view_reads_the_first_feature() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("e.csv");
    fs::write(&p, "src,dst,grade\ns1,g1,7\ns1,g2,8\ns2,g1,3\n").unwrap();
    let g = load_graph(&p).unwrap();
    let (grades, bip) = grades_from_graph(&g).unwrap();
    assert_eq!(bip.items.len(), 2);
    assert_eq!(bip.workers.len(), 2);
    assert_eq!(grades.grades().len(), 3);
    assert!(votes_from_graph(&g).is_err());
}

#[test]
fn model_round_trip_gives_identical_outputs() {
    let mut r = rng(40);
    let g = random_graph(&mut r, 5, 10, 2);
    for (sizes, mode) in [
        (vec![2], OutputMode::Classification),
        (vec![3, 2, 4], OutputMode::Classification),
        (vec![2, 2], OutputMode::Regression),
    ] {
        let model = MlslModel::new(2, &sizes, mode, 7).unwrap();
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.txt");
        save_model(&model, &p).unwrap();
        let back = load_model(&p).unwrap();
        assert_eq!(back, model);
        let tree = g.unfold(NodeId(0), sizes.len(), Unfolding::Full).unwrap();
        assert_eq!(back.forward(&tree).unwrap().0, model.forward(&tree).unwrap().0);
        assert_eq!(model_to_string(&back), fs::read_to_string(&p).unwrap());
    }
}

#[test]
fn model_file_errors() {
    let model = MlslModel::new(2, &[2, 3], OutputMode::Classification, 1).unwrap();
    let text = model_to_string(&model);
    let dir = tempdir().unwrap();
    let p = dir.path().join("m.txt");

    let cut: String = text.lines().take(text.lines().count() / 2).map(|l| format!("{l}\n")).collect();
    fs::write(&p, cut).unwrap();
    assert!(matches!(load_model(&p), Err(Error::Parse { .. })));

    fs::write(&p, text.replacen("mlsl-model 1", "mlsl-model 9", 1)).unwrap();
    assert!(matches!(load_model(&p), Err(Error::Parse { .. })));

    fs::write(&p, text.replacen("feature_width 2", "feature_width 3", 1)).unwrap();
    assert!(matches!(load_model(&p), Err(Error::Dimension(_))));

    // A model for M = 2 meeting a width-3 graph.
    assert!(matches!(model.check_feature_width(3), Err(Error::Dimension(_))));
}

#[test]
fn quality_examples_and_bounds() {
    assert_eq!(compute_quality(10.0, 0.0, 10.0).unwrap(), -1.0);
    assert_eq!(compute_quality(10.0, 10.0, 0.0).unwrap(), 1.0);
    assert_eq!(compute_quality(4.0, 6.0, 4.0).unwrap(), 1.0);
    assert_eq!(compute_quality(0.0, 3.0, 1.0).unwrap(), 0.0);
    assert_eq!(compute_quality(2.0, 5.0, 5.0).unwrap(), 0.0);
    assert!(compute_quality(-1.0, 1.0, 1.0).is_err());
    let mut r = rng(2);
    for _ in 0..1000 {
        let q = compute_quality(r.random_range(0.0..10.0), r.random_range(0.0..10.0), r.random_range(0.0..10.0)).unwrap();
        assert!((-1.0..=1.0).contains(&q));
    }
}
