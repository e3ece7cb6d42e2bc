//! Oracles shared by the integration and acceptance suites. Nothing here
//! calls into the code under test except to build inputs.

#![allow(dead_code)]

use mlsl::baselines::VoteMatrix;
use mlsl::graph::{Graph, NodeId, UnfoldTree, Unfolding};
use mlsl::lstm::{LearnerShape, LstmParams};
use mlsl::model::{loss, MlslModel, OutputMode, Target};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random multigraph with `nodes` nodes and `edges` edges; self-loops and
/// parallel edges are allowed. Feature 0 of edge `e` is `e` itself so an
/// edge can be recognised from its features.
pub fn random_graph(rng: &mut impl Rng, nodes: usize, edges: usize, width: usize) -> Graph {
    let mut g = Graph::new(width);
    for i in 0..nodes {
        g.add_node(&format!("n{i}"));
    }
    for e in 0..edges {
        let s = rng.random_range(0..nodes);
        let d = rng.random_range(0..nodes);
        let mut f = vec![e as f64];
        f.extend((1..width).map(|_| rng.random_range(-1.0..1.0)));
        g.add_edge(NodeId(s), NodeId(d), f).unwrap();
    }
    g
}

/// One tree node as seen by the oracle: graph nodes along the path from
/// the root, and the features of the edge into the node.
#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    pub path: Vec<NodeId>,
    pub last_features: Option<Vec<f64>>,
}

/// Enumerates every directed walk of at most `depth` edges from `root` by
/// exhaustive search over edge sequences. Asymmetric mode rejects a step
/// back to the node visited two steps earlier. The result is sorted by
/// length, then lexicographically by edge index sequence.
pub fn brute_walks(g: &Graph, root: NodeId, depth: usize, mode: Unfolding) -> Vec<Walk> {
    let mut seqs: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..depth {
        let mut next = Vec::new();
        for seq in &frontier {
            for e in 0..g.edge_count() {
                let mut cand = seq.clone();
                cand.push(e);
                if is_walk(g, root, &cand, mode) {
                    next.push(cand);
                }
            }
        }
        seqs.extend(next.iter().cloned());
        frontier = next;
    }
    seqs.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    seqs.iter()
        .map(|seq| {
            let mut path = vec![root];
            path.extend(seq.iter().map(|&e| g.edge(e).dst));
            Walk {
                path,
                last_features: seq.last().map(|&e| g.edge(e).features.clone()),
            }
        })
        .collect()
}

fn is_walk(g: &Graph, root: NodeId, seq: &[usize], mode: Unfolding) -> bool {
    let mut nodes = vec![root];
    for &e in seq {
        let edge = g.edge(e);
        if edge.src != *nodes.last().unwrap() {
            return false;
        }
        nodes.push(edge.dst);
    }
    if mode == Unfolding::Asymmetric {
        for k in 2..nodes.len() {
            if nodes[k] == nodes[k - 2] {
                return false;
            }
        }
    }
    true
}

/// The tree listed in its stored (breadth-first) order, in oracle form.
pub fn tree_walks(t: &UnfoldTree) -> Vec<Walk> {
    (0..t.len())
        .map(|i| Walk {
            path: t.path(i),
            last_features: t.node(i).features.clone(),
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Magnitude below which finite-difference comparisons become absolute.
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Worst relative error between the LSTM's analytic gradients (parameters
/// and inputs) and central differences of `L = ⟨dy, y⟩`.
pub fn lstm_fd_error(rng: &mut impl Rng, n: usize, k: usize, steps: usize) -> f64 {
    let shape = LearnerShape::new(n, k).unwrap();
    let values: Vec<f64> = (0..shape.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut p = LstmParams::from_values(shape, values).unwrap();
    let xs: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let dy: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |p: &LstmParams, xs: &[Vec<f64>]| -> f64 {
        let (y, _) = p.forward(xs.to_vec()).unwrap();
        y.iter().zip(&dy).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = p.forward(xs.clone()).unwrap();
    let (dxs, grads) = p.backward(&cache, &dy).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..shape.param_count() {
        let orig = p.values()[i];
        p.values_mut()[i] = orig + FD_STEP;
        let up = objective(&p, &xs);
        p.values_mut()[i] = orig - FD_STEP;
        let down = objective(&p, &xs);
        p.values_mut()[i] = orig;
        worst = worst.max(rel_err(grads.values()[i], (up - down) / (2.0 * FD_STEP)));
    }
    let mut xs2 = xs.clone();
    for t in 0..steps {
        for j in 0..n {
            let orig = xs2[t][j];
            xs2[t][j] = orig + FD_STEP;
            let up = objective(&p, &xs2);
            xs2[t][j] = orig - FD_STEP;
            let down = objective(&p, &xs2);
            xs2[t][j] = orig;
            worst = worst.max(rel_err(dxs[t][j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// One random whole-tree case for the MLSL gradient check.
pub struct TreeCase {
    pub model: MlslModel,
    pub tree: UnfoldTree,
    pub target: Target,
}

pub fn random_tree_case(rng: &mut impl Rng, depth: usize, mode: Unfolding) -> TreeCase {
    loop {
        let m = rng.random_range(1..=3);
        let mut sizes = vec![2];
        sizes.extend((1..depth).map(|_| rng.random_range(1..=3)));
        let nodes = rng.random_range(2..=4);
        let edges = rng.random_range(2..=7);
        let g = random_graph(rng, nodes, edges, m);
        let root = NodeId(rng.random_range(0..nodes));
        let tree = g.unfold(root, depth, mode).unwrap();
        if tree.len() < 2 || tree.len() > 60 {
            continue;
        }
        let model = MlslModel::new(m, &sizes, OutputMode::Classification, rng.random()).unwrap();
        let target = Target::Class(rng.random_range(0..2));
        return TreeCase { model, tree, target };
    }
}

/// Worst relative error between the summed per-level gradients and
/// central differences of the cross-entropy loss over the whole tree.
pub fn mlsl_fd_error(case: &mut TreeCase) -> f64 {
    let mode = case.model.output_mode();
    let objective = |m: &MlslModel, t: &UnfoldTree, target: &Target| -> f64 {
        let (y, _) = m.forward(t).unwrap();
        loss(&y, target, mode).unwrap().0
    };
    let (y, acts) = case.model.forward(&case.tree).unwrap();
    let (_, dy) = loss(&y, &case.target, mode).unwrap();
    let grads = case.model.backward(&case.tree, &acts, &dy).unwrap();
    let mut worst: f64 = 0.0;
    for level in 1..=case.model.depth() {
        let total = grads.total(level).values().to_vec();
        let mean = grads.mean(level);
        let n = grads.instances(level).max(1) as f64;
        for (a, b) in mean.values().iter().zip(&total) {
            worst = worst.max(rel_err(a * n, *b));
        }
        for (i, &analytic) in total.iter().enumerate() {
            let orig = case.model.learners()[level - 1].values()[i];
            case.model.learners_mut()[level - 1].values_mut()[i] = orig + FD_STEP;
            let up = objective(&case.model, &case.tree, &case.target);
            case.model.learners_mut()[level - 1].values_mut()[i] = orig - FD_STEP;
            let down = objective(&case.model, &case.tree, &case.target);
            case.model.learners_mut()[level - 1].values_mut()[i] = orig;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Message-passing reference written against plain per-vote arrays:
/// explicit loops over every other vote instead of total-minus-self sums.
/// Empty exclusion sets keep a worker message at its previous value and
/// set an item message to zero.
pub fn kos_reference(items: usize, workers: usize, votes: &[(usize, usize, f64)], k_max: usize, y0: &[f64]) -> Vec<i8> {
    let _ = workers;
    let n = votes.len();
    let mut y = y0.to_vec();
    let mut x = vec![0.0; n];
    for _ in 0..k_max {
        for a in 0..n {
            let (i, j, _) = votes[a];
            let mut s = 0.0;
            for b in 0..n {
                let (i2, j2, v2) = votes[b];
                if i2 == i && j2 != j {
                    s += v2 * y[b];
                }
            }
            x[a] = s;
        }
        let mut y_next = y.clone();
        for a in 0..n {
            let (i, j, _) = votes[a];
            let mut s = 0.0;
            let mut any = false;
            for b in 0..n {
                let (i2, j2, v2) = votes[b];
                if j2 == j && i2 != i {
                    s += v2 * x[b];
                    any = true;
                }
            }
            if any {
                y_next[a] = s;
            }
        }
        y = y_next;
    }
    (0..items)
        .map(|i| {
            let s: f64 = (0..n).filter(|&a| votes[a].0 == i).map(|a| votes[a].2 * y[a]).sum();
            if s >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

pub fn votes_as_triples(v: &VoteMatrix) -> Vec<(usize, usize, f64)> {
    v.votes()
        .iter()
        .map(|vote| (vote.item, vote.worker, f64::from(vote.value)))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
