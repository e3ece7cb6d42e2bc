mod common;

use common::{random_graph, rng};
use mlsl::datagen::{gen_spammer_hammer, SynthSpec};
use mlsl::graph::{ChildOrder, Graph, NodeId, UnfoldTree, Unfolding};
use mlsl::lstm::{LearnerShape, LstmGrads, LstmParams};
use mlsl::model::{argmax, predict_dataset, softmax, train, MlslModel, OutputMode, Target, TrainConfig, Trainer, VisitOrder};
use proptest::prelude::*;
use rand::Rng;

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// `v → u1 → z1`, `v → u2 → z2`.
fn two_branch_graph(g_vu: [[f64; 2]; 2], g_uz: [[f64; 2]; 2]) -> Graph {
    let mut g = Graph::new(2);
    g.add_named_edge("v", "u1", g_vu[0].to_vec()).unwrap();
    g.add_named_edge("v", "u2", g_vu[1].to_vec()).unwrap();
    g.add_named_edge("u1", "z1", g_uz[0].to_vec()).unwrap();
    g.add_named_edge("u2", "z2", g_uz[1].to_vec()).unwrap();
    g
}

fn config(order: ChildOrder, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        child_order: order,
        epochs,
        eval_every: 0,
        seed,
        ..Default::default()
    }
}

#[test]
fn depth_two_matches_manual_composition() {
    let g = two_branch_graph([[0.3, -0.7], [1.0, 0.2]], [[-0.4, 0.9], [0.6, 0.1]]);
    let model = MlslModel::new(2, &[2, 3], OutputMode::Classification, 17).unwrap();
    let tree = g.unfold(g.require_node("v").unwrap(), 2, Unfolding::Asymmetric).unwrap();
    let (y, _) = model.forward(&tree).unwrap();

    let [l1, l2] = model.learners() else { unreachable!() };
    let (f1, _) = l2.forward(vec![vec![-0.4, 0.9]]).unwrap();
    let (f2, _) = l2.forward(vec![vec![0.6, 0.1]]).unwrap();
    let (expected, _) = l1
        .forward(vec![concat(&[0.3, -0.7], &f1), concat(&[1.0, 0.2], &f2)])
        .unwrap();
    assert_eq!(y, expected);
}

#[test]
fn path_tree_gradient_is_the_single_instance_gradient() {
    let mut g = Graph::new(1);
    g.add_named_edge("a", "b", vec![0.5]).unwrap();
    g.add_named_edge("b", "c", vec![-1.5]).unwrap();
    let model = MlslModel::new(1, &[2, 2], OutputMode::Classification, 4).unwrap();
    let tree = g.unfold(NodeId(0), 2, Unfolding::Full).unwrap();
    let (_, acts) = model.forward(&tree).unwrap();
    let dy = [0.25, -0.75];
    let grads = model.backward(&tree, &acts, &dy).unwrap();
    assert_eq!(grads.instances(1), 1);
    assert_eq!(grads.instances(2), 1);

    let (dxs, g1) = model.learners()[0].backward(acts.cache(0).unwrap(), &dy).unwrap();
    assert_eq!(grads.mean(1), g1);
    let (_, g2) = model.learners()[1]
        .backward(acts.cache(1).unwrap(), &dxs[0][1..])
        .unwrap();
    assert_eq!(grads.mean(2), g2);
}

#[test]
fn identical_subtrees_share_summaries_and_average_their_gradients() {
    let g = two_branch_graph([[0.2, 0.4], [0.2, 0.4]], [[-0.3, 0.8], [-0.3, 0.8]]);
    let mut model = MlslModel::new(2, &[2, 2], OutputMode::Classification, 8).unwrap();
    let tree = g.unfold(NodeId(0), 2, Unfolding::Asymmetric).unwrap();
    let (u1, u2) = (tree.children(0)[0], tree.children(0)[1]);
    let (_, acts) = model.forward(&tree).unwrap();
    assert_eq!(acts.summary(u1), acts.summary(u2));

    // The two L_2 instances see the same inputs but sit at different
    // positions of the root sequence, so their adjoints differ; G_2 is the
    // mean of both instance gradients with the edge-feature slice dropped.
    let dy = [1.0, -1.0];
    let grads = model.backward(&tree, &acts, &dy).unwrap();
    let (dxs, _) = model.learners()[0].backward(acts.cache(0).unwrap(), &dy).unwrap();
    let l2 = &model.learners()[1];
    let (_, a) = l2.backward(acts.cache(u1).unwrap(), &dxs[0][2..]).unwrap();
    let (_, b) = l2.backward(acts.cache(u2).unwrap(), &dxs[1][2..]).unwrap();
    let mut sum = LstmGrads::zeros(l2.shape());
    sum.add_assign(&a);
    sum.add_assign(&b);
    assert_eq!(grads.instances(2), 2);
    for (x, y) in grads.total(2).values().iter().zip(sum.values()) {
        assert!((x - y).abs() < 1e-15);
    }
    for ((m, x), y) in grads.mean(2).values().iter().zip(a.values()).zip(b.values()) {
        assert!((m - 0.5 * (x + y)).abs() < 1e-15);
    }

    // Perturbing the shared L_2 parameters moves both summaries together.
    let before = acts.summary(u1).unwrap().to_vec();
    model.learners_mut()[1].values_mut()[0] += 0.3;
    let (_, acts2) = model.forward(&tree).unwrap();
    assert_eq!(acts2.summary(u1), acts2.summary(u2));
    assert_ne!(acts2.summary(u1).unwrap(), before.as_slice());
}

#[test]
fn parameter_sets_do_not_depend_on_tree_width() {
    let mut r = rng(21);
    for depth in 1..=3 {
        let model = MlslModel::new(1, &vec![2; depth], OutputMode::Classification, 1).unwrap();
        assert_eq!(model.learners().len(), depth);
        for edges in [1, 5, 12] {
            let g = random_graph(&mut r, 4, edges, 1);
            let tree = g.unfold(NodeId(0), depth, Unfolding::Full).unwrap();
            let (y, acts) = model.forward(&tree).unwrap();
            let grads = model.backward(&tree, &acts, &vec![1.0; y.len()]).unwrap();
            assert_eq!(grads.depth(), depth);
        }
    }
}

fn star(children: &[f64]) -> Graph {
    let mut g = Graph::new(1);
    for (i, &f) in children.iter().enumerate() {
        g.add_named_edge("root", &format!("c{i}"), vec![f]).unwrap();
    }
    g
}

#[test]
fn repeated_steps_on_one_example_descend() {
    let g = star(&[0.5, -1.0, 0.25]);
    let model = MlslModel::new(1, &[2], OutputMode::Classification, 3).unwrap();
    let mut trainer = Trainer::new(model, config(ChildOrder::AsLoaded, 1, 3)).unwrap();
    let losses: Vec<f64> = (0..50)
        .map(|_| trainer.train_step(&g, NodeId(0), &Target::Class(1)).unwrap())
        .collect();
    let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(non_increasing >= 45, "{non_increasing} of 49 steps did not increase the loss");
}

#[test]
fn zero_adjoint_probe_leaves_parameters_unchanged() {
    let g = star(&[0.5, -1.0]);
    let model = MlslModel::new(1, &[2], OutputMode::Classification, 9).unwrap();
    let before = model.clone();
    let mut trainer = Trainer::new(model, config(ChildOrder::AsLoaded, 1, 0)).unwrap();
    let tree = g.unfold(NodeId(0), 1, Unfolding::Asymmetric).unwrap();
    for _ in 0..3 {
        trainer.fit_tree_with(&tree, |y| Ok((0.0, vec![0.0; y.len()]))).unwrap();
    }
    assert_eq!(trainer.model(), &before);
}

fn small_synth(seed: u64, p_reliable: f64) -> mlsl::datagen::SynthData {
    gen_spammer_hammer(&SynthSpec {
        n_items: 10,
        n_users: 10,
        p_reliable,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn training_is_bit_reproducible() {
    let data = small_synth(2, 0.6);
    let graph = data.graph.symmetrized();
    let cfg = TrainConfig {
        visit_order: VisitOrder::UniformRandom,
        level_scales: vec![1.0, 2.0],
        ..config(ChildOrder::RandomShuffle, 4, 77)
    };
    let run = || {
        let m = MlslModel::new(1, &[2, 3], OutputMode::Classification, 77).unwrap();
        train(m, &graph, &data.dataset, &cfg, Some(&data.dataset)).unwrap()
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(m1, m2);
    assert_eq!(h1, h2);
}

#[test]
fn one_epoch_is_one_step_per_root_in_order() {
    let data = small_synth(4, 0.6);
    let cfg = config(ChildOrder::RandomShuffle, 1, 5);
    let model = MlslModel::new(1, &[2], OutputMode::Classification, 5).unwrap();
    let (trained, history) = train(model.clone(), &data.graph, &data.dataset, &cfg, None).unwrap();
    assert_eq!(history.len(), 1);

    let mut manual = Trainer::new(model, cfg).unwrap();
    let mut total = 0.0;
    for (root, target) in &data.dataset.examples {
        total += manual.train_step(&data.graph, *root, target).unwrap();
    }
    assert_eq!(manual.model(), &trained);
    assert_eq!(history[0].mean_loss, total / data.dataset.len() as f64);
}

#[test]
fn rejects_zero_epochs_and_empty_data() {
    let model = MlslModel::new(1, &[2], OutputMode::Classification, 0).unwrap();
    assert!(Trainer::new(model.clone(), config(ChildOrder::AsLoaded, 0, 0)).is_err());
    let empty = mlsl::LabeledDataset {
        examples: vec![],
        classes: Some(2),
    };
    let cfg = config(ChildOrder::AsLoaded, 1, 0);
    assert!(train(model, &star(&[1.0]), &empty, &cfg, None).is_err());
}

#[test]
fn memorizes_the_ten_item_set() {
    let data = small_synth(6, 1.0);
    let cfg = config(ChildOrder::RandomShuffle, 300, 6);
    let model = MlslModel::new(1, &[2], OutputMode::Classification, 6).unwrap();
    let (trained, history) = train(model, &data.graph, &data.dataset, &cfg, None).unwrap();
    let preds = predict_dataset(&trained, &data.graph, &data.dataset, &cfg).unwrap();
    let truth = data.dataset.class_labels().unwrap();
    let pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
    assert_eq!(pred, truth);
    // Outputs are tanh-bounded, so two-class cross-entropy cannot go below
    // ln(1 + e^-2) ≈ 0.127.
    let last = history.last().unwrap().mean_loss;
    assert!(last < 0.15, "final loss {last}");
}

#[test]
fn prediction_is_the_argmax_of_its_probabilities() {
    let mut r = rng(31);
    for _ in 0..100 {
        let depth = r.random_range(1..=3);
        let classes = r.random_range(2..=4);
        let mut sizes = vec![classes];
        sizes.extend((1..depth).map(|_| r.random_range(1..=3)));
        let g = random_graph(&mut r, 5, 9, 2);
        let model = MlslModel::new(2, &sizes, OutputMode::Classification, r.random()).unwrap();
        let tree = g.unfold(NodeId(r.random_range(0..5)), depth, Unfolding::Asymmetric).unwrap();
        let p = model.predict(&tree).unwrap();
        let (y, _) = model.forward(&tree).unwrap();
        assert_eq!(p.probs, softmax(&y));
        assert_eq!(p.class, argmax(&p.probs));
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = p.probs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(p.probs.iter().position(|&q| q == best), Some(p.class));
    }
}

#[test]
fn prediction_ignores_training_shuffles() {
    let g = star(&[0.1, 0.9, -0.4, 0.3]);
    let model = MlslModel::new(1, &[2], OutputMode::Classification, 12).unwrap();
    let cfg = config(ChildOrder::RandomShuffle, 1, 0);
    let a = mlsl::model::predict_label(&model, &g, NodeId(0), &cfg).unwrap();
    let b = mlsl::model::predict_label(&model, &g, NodeId(0), &cfg).unwrap();
    let tree: UnfoldTree = g.unfold(NodeId(0), 1, Unfolding::Asymmetric).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, model.predict(&tree).unwrap());
}

proptest! {
    #[test]
    fn lstm_output_is_bounded_and_deterministic(
        seed in any::<u64>(),
        n in 1usize..=4,
        k in 1usize..=4,
        steps in 1usize..=6,
    ) {
        let mut r = rng(seed);
        let shape = LearnerShape::new(n, k).unwrap();
        let values = (0..shape.param_count()).map(|_| r.random_range(-3.0..3.0)).collect();
        let p = LstmParams::from_values(shape, values).unwrap();
        let xs: Vec<Vec<f64>> = (0..steps).map(|_| (0..n).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let (y1, _) = p.forward(xs.clone()).unwrap();
        let (y2, _) = p.forward(xs).unwrap();
        prop_assert_eq!(&y1, &y2);
        prop_assert!(y1.iter().all(|v| v.abs() < 1.0));
    }
}
