//! Feature-labeled directed multigraphs and their tree unfoldings.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub features: Vec<f64>,
}

/// Directed multigraph whose edges carry feature vectors of a fixed width.
///
/// Node identifiers are opaque strings; internally nodes are dense indices
/// in insertion order. Parallel edges and self-loops are allowed, and each
/// node's outgoing edges are kept in insertion order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    names: Vec<String>,
    index: HashMap<String, NodeId>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<usize>>,
    in_degree: Vec<usize>,
    feature_width: usize,
}

impl Graph {
    pub fn new(feature_width: usize) -> Self {
        Graph {
            feature_width,
            ..Default::default()
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Returns the id of `name`, inserting the node if it is new.
    pub fn add_node(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = NodeId(self.names.len());
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        self.out_edges.push(Vec::new());
        self.in_degree.push(0);
        id
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn require_node(&self, name: &str) -> Result<NodeId> {
        self.node(name)
            .ok_or_else(|| Error::UnknownNode(name.to_owned()))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.names.len()).map(NodeId)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> &Edge {
        &self.edges[index]
    }

    /// Outgoing edges of `id` in insertion order.
    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> + '_ {
        self.out_edges[id.0].iter().map(move |&e| &self.edges[e])
    }

    pub fn out_degree(&self, id: NodeId) -> usize {
        self.out_edges[id.0].len()
    }

    pub fn in_degree(&self, id: NodeId) -> usize {
        self.in_degree[id.0]
    }

    /// Appends an edge and returns its index.
    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, features: Vec<f64>) -> Result<usize> {
        let n = self.names.len();
        if src.0 >= n || dst.0 >= n {
            return Err(Error::invalid(format!(
                "edge endpoint out of range ({} -> {}, {} nodes)",
                src.0, dst.0, n
            )));
        }
        if features.len() != self.feature_width {
            return Err(Error::dim(format!(
                "edge feature vector has length {}, graph width is {}",
                features.len(),
                self.feature_width
            )));
        }
        if let Some(x) = features.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("edge feature {x}")));
        }
        let idx = self.edges.len();
        self.edges.push(Edge { src, dst, features });
        self.out_edges[src.0].push(idx);
        self.in_degree[dst.0] += 1;
        Ok(idx)
    }

    pub fn add_named_edge(&mut self, src: &str, dst: &str, features: Vec<f64>) -> Result<usize> {
        let s = self.add_node(src);
        let d = self.add_node(dst);
        self.add_edge(s, d, features)
    }

    /// Copy of the graph with a reversed twin (same features) appended for
    /// every edge. Node ids are preserved.
    pub fn symmetrized(&self) -> Graph {
        let mut g = Graph::new(self.feature_width);
        for name in &self.names {
            g.add_node(name);
        }
        for e in self.edges.iter() {
            g.add_edge(e.src, e.dst, e.features.clone())
                .expect("edge was valid in source graph");
        }
        for e in self.edges.iter() {
            g.add_edge(e.dst, e.src, e.features.clone())
                .expect("edge was valid in source graph");
        }
        g
    }

    /// Dual graph: one node per edge instance of `self`, and an edge
    /// `(u,v) -> (v,w)` for every composable pair. The dual edge carries the
    /// features of its target edge `(v,w)`.
    ///
    /// Dual node `k` corresponds to edge index `k` and is named
    /// `"{src}->{dst}#{k}"`.
    pub fn build_dual(&self) -> Graph {
        let mut dual = Graph::new(self.feature_width);
        for (k, e) in self.edges.iter().enumerate() {
            let name = format!("{}->{}#{}", self.name(e.src), self.name(e.dst), k);
            dual.add_node(&name);
        }
        for (k, e) in self.edges.iter().enumerate() {
            for &next in &self.out_edges[e.dst.0] {
                dual.add_edge(NodeId(k), NodeId(next), self.edges[next].features.clone())
                    .expect("dual edge is well formed");
            }
        }
        dual
    }

    /// Unfolds the graph into a tree of depth `depth` rooted at `root`.
    pub fn unfold(&self, root: NodeId, depth: usize, mode: Unfolding) -> Result<UnfoldTree> {
        if root.0 >= self.names.len() {
            return Err(Error::UnknownNode(format!("#{}", root.0)));
        }
        if depth < 1 {
            return Err(Error::invalid("unfolding depth must be at least 1"));
        }
        let mut nodes = vec![TreeNode {
            graph_node: root,
            depth: 0,
            parent: None,
            features: None,
            children: Vec::new(),
        }];
        // Breadth-first: nodes are appended in level order, so a parent
        // always precedes its children.
        let mut cursor = 0;
        while cursor < nodes.len() {
            let (u, d, parent) = {
                let t = &nodes[cursor];
                (t.graph_node, t.depth, t.parent)
            };
            if d < depth {
                let excluded = match mode {
                    Unfolding::Full => None,
                    Unfolding::Asymmetric => parent.map(|p| nodes[p].graph_node),
                };
                for &e in &self.out_edges[u.0] {
                    let edge = &self.edges[e];
                    if Some(edge.dst) == excluded {
                        continue;
                    }
                    let id = nodes.len();
                    nodes.push(TreeNode {
                        graph_node: edge.dst,
                        depth: d + 1,
                        parent: Some(cursor),
                        features: Some(edge.features.clone()),
                        children: Vec::new(),
                    });
                    nodes[cursor].children.push(id);
                }
            }
            cursor += 1;
        }
        Ok(UnfoldTree {
            nodes,
            depth_limit: depth,
            feature_width: self.feature_width,
        })
    }

    pub fn unfold_full(&self, root: NodeId, depth: usize) -> Result<UnfoldTree> {
        self.unfold(root, depth, Unfolding::Full)
    }

    pub fn unfold_asymmetric(&self, root: NodeId, depth: usize) -> Result<UnfoldTree> {
        self.unfold(root, depth, Unfolding::Asymmetric)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unfolding {
    /// Every outgoing edge yields a child, including the one back to the parent.
    Full,
    /// Edges returning to the tree parent's graph node are skipped.
    #[default]
    Asymmetric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub graph_node: NodeId,
    pub depth: usize,
    /// Tree index of the parent; `None` only at the root.
    pub parent: Option<usize>,
    /// Features of the edge from the parent; `None` only at the root.
    pub features: Option<Vec<f64>>,
    pub children: Vec<usize>,
}

/// Depth-bounded tree produced by unfolding a graph at a root node.
///
/// Tree nodes are fresh copies: the same graph node may occur many times,
/// each with its own tree index. Index 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldTree {
    nodes: Vec<TreeNode>,
    depth_limit: usize,
    feature_width: usize,
}

impl UnfoldTree {
    pub const ROOT: usize = 0;

    /// Builds a tree from explicit nodes, checking the structural invariants.
    pub fn from_nodes(nodes: Vec<TreeNode>, depth_limit: usize, feature_width: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::invalid("tree has no root"));
        }
        if depth_limit < 1 {
            return Err(Error::invalid("tree depth limit must be at least 1"));
        }
        for (i, n) in nodes.iter().enumerate() {
            match (i, n.parent, &n.features) {
                (0, None, None) if n.depth == 0 => {}
                (0, ..) => return Err(Error::invalid("root must have depth 0, no parent, no edge")),
                (_, Some(p), Some(f)) => {
                    if p >= i || nodes[p].depth + 1 != n.depth || !nodes[p].children.contains(&i) {
                        return Err(Error::invalid(format!("tree node {i} has inconsistent parent")));
                    }
                    if n.depth > depth_limit {
                        return Err(Error::invalid(format!("tree node {i} is below the depth limit")));
                    }
                    if f.len() != feature_width {
                        return Err(Error::dim(format!("tree node {i} edge width {}", f.len())));
                    }
                }
                _ => return Err(Error::invalid(format!("tree node {i} lacks a parent edge"))),
            }
            for &c in &n.children {
                if c >= nodes.len() || nodes[c].parent != Some(i) {
                    return Err(Error::invalid(format!("tree node {i} has a foreign child {c}")));
                }
            }
        }
        Ok(UnfoldTree {
            nodes,
            depth_limit,
            feature_width,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &TreeNode {
        &self.nodes[index]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth_limit(&self) -> usize {
        self.depth_limit
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn children(&self, index: usize) -> &[usize] {
        &self.nodes[index].children
    }

    /// Incoming-edge features of a non-root node.
    pub fn edge_features(&self, index: usize) -> &[f64] {
        self.nodes[index]
            .features
            .as_deref()
            .expect("root has no incoming edge")
    }

    /// Graph-node path from the root to `index`, root included.
    pub fn path(&self, index: usize) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.nodes[index].depth + 1);
        let mut cur = Some(index);
        while let Some(i) = cur {
            path.push(self.nodes[i].graph_node);
            cur = self.nodes[i].parent;
        }
        path.reverse();
        path
    }

    /// Permutes every child list according to `policy`.
    ///
    /// `RandomShuffle` draws one independent permutation per node from
    /// `rng`, visiting nodes in index order.
    pub fn order_children<R: Rng + ?Sized>(&mut self, policy: &ChildOrder, rng: &mut R) -> Result<()> {
        match *policy {
            ChildOrder::AsLoaded => {}
            ChildOrder::RandomShuffle => {
                for n in self.nodes.iter_mut() {
                    n.children.shuffle(rng);
                }
            }
            ChildOrder::FixedByFeature { index, ascending } => {
                if index >= self.feature_width {
                    return Err(Error::invalid(format!(
                        "child ordering feature {index} out of range (width {})",
                        self.feature_width
                    )));
                }
                for i in 0..self.nodes.len() {
                    let mut children = std::mem::take(&mut self.nodes[i].children);
                    children.sort_by(|&a, &b| {
                        let fa = self.edge_features(a)[index];
                        let fb = self.edge_features(b)[index];
                        let ord = if ascending { fa.total_cmp(&fb) } else { fb.total_cmp(&fa) };
                        ord.then(a.cmp(&b))
                    });
                    self.nodes[i].children = children;
                }
            }
        }
        Ok(())
    }

    /// Indented text dump: one line per tree node in depth-first order,
    /// showing depth, originating graph node and incoming-edge features.
    pub fn render(&self, graph: &Graph) -> String {
        let mut out = String::new();
        let mut stack = vec![Self::ROOT];
        while let Some(i) = stack.pop() {
            let n = &self.nodes[i];
            let _ = write!(
                out,
                "{}[{}] {} (depth {})",
                "  ".repeat(n.depth),
                i,
                graph.name(n.graph_node),
                n.depth
            );
            if let Some(f) = &n.features {
                let parts: Vec<String> = f.iter().map(|x| x.to_string()).collect();
                let _ = write!(out, " <- [{}]", parts.join(", "));
            }
            out.push('\n');
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

/// Order in which a tree node's children are fed to its learner.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildOrder {
    /// Graph edge insertion order.
    #[default]
    AsLoaded,
    /// Fresh random permutation at every node, on every call.
    RandomShuffle,
    /// Sorted by one incoming-edge feature; ties by tree index.
    FixedByFeature { index: usize, ascending: bool },
}

impl ChildOrder {
    /// Deterministic counterpart used at prediction time.
    pub fn for_prediction(&self) -> ChildOrder {
        match self {
            ChildOrder::RandomShuffle => ChildOrder::AsLoaded,
            other => other.clone(),
        }
    }
}
