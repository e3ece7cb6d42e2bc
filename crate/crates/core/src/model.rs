//! Multi-level sequence learners over unfolded trees.
//!
//! A model of depth `D` holds one LSTM per tree level. `L_D` has shape
//! `(M, K_D)` and reads the edge features of a depth-`D-1` node's children;
//! `L_d` for `d < D` has shape `(M + K_{d+1}, K_d)` and reads each child's
//! edge features concatenated with the child's own computed summary. The
//! root's summary, of width `K_1`, is the model output. All instances of a
//! level share one parameter set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ChildOrder, Graph, NodeId, UnfoldTree, Unfolding};
use crate::lstm::{AdaDelta, AdaDeltaConfig, LearnerShape, LstmCache, LstmGrads, LstmParams};
use crate::metrics;
use crate::seed::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Softmax over the `K_1` outputs; `K_1` is the class count.
    #[default]
    Classification,
    /// Raw `K_1` vector under squared error.
    Regression,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlslModel {
    feature_width: usize,
    level_sizes: Vec<usize>,
    learners: Vec<LstmParams>,
    output: OutputMode,
}

/// Shape of the level-`level` learner (1-based) of a model.
pub fn level_shape(feature_width: usize, level_sizes: &[usize], level: usize) -> Result<LearnerShape> {
    let d = level_sizes.len();
    if level == 0 || level > d {
        return Err(Error::invalid(format!("level {level} outside 1..={d}")));
    }
    let input = if level == d {
        feature_width
    } else {
        feature_width + level_sizes[level]
    };
    LearnerShape::new(input, level_sizes[level - 1])
}

impl MlslModel {
    /// Fresh model with every level initialized from its own sub-stream of
    /// `seed`'s init stream.
    pub fn new(feature_width: usize, level_sizes: &[usize], output: OutputMode, seed: u64) -> Result<Self> {
        Self::check_sizes(feature_width, level_sizes)?;
        let learners = (1..=level_sizes.len())
            .map(|d| {
                let shape = level_shape(feature_width, level_sizes, d)?;
                let mut rng = seed::substream(seed, seed::INIT, d as u64);
                Ok(LstmParams::init_with(shape, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MlslModel {
            feature_width,
            level_sizes: level_sizes.to_vec(),
            learners,
            output,
        })
    }

    pub fn from_learners(
        feature_width: usize,
        level_sizes: &[usize],
        output: OutputMode,
        learners: Vec<LstmParams>,
    ) -> Result<Self> {
        Self::check_sizes(feature_width, level_sizes)?;
        if learners.len() != level_sizes.len() {
            return Err(Error::dim(format!(
                "{} learners for {} levels",
                learners.len(),
                level_sizes.len()
            )));
        }
        for (i, l) in learners.iter().enumerate() {
            let want = level_shape(feature_width, level_sizes, i + 1)?;
            if l.shape() != want {
                return Err(Error::dim(format!(
                    "level {} learner has shape ({}, {}), expected ({}, {})",
                    i + 1,
                    l.shape().input,
                    l.shape().output,
                    want.input,
                    want.output
                )));
            }
        }
        Ok(MlslModel {
            feature_width,
            level_sizes: level_sizes.to_vec(),
            learners,
            output,
        })
    }

    fn check_sizes(feature_width: usize, level_sizes: &[usize]) -> Result<()> {
        if feature_width == 0 {
            return Err(Error::invalid("edge feature width must be positive"));
        }
        if level_sizes.is_empty() || level_sizes.contains(&0) {
            return Err(Error::invalid(format!(
                "level sizes {level_sizes:?} must be non-empty and positive"
            )));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// `[K_1, …, K_D]`.
    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn output_mode(&self) -> OutputMode {
        self.output
    }

    pub fn output_width(&self) -> usize {
        self.level_sizes[0]
    }

    /// `learners()[d - 1]` is `L_d`.
    pub fn learners(&self) -> &[LstmParams] {
        &self.learners
    }

    pub fn learners_mut(&mut self) -> &mut [LstmParams] {
        &mut self.learners
    }

    pub fn check_feature_width(&self, width: usize) -> Result<()> {
        if width != self.feature_width {
            return Err(Error::dim(format!(
                "model expects edge features of width {}, data has {width}",
                self.feature_width
            )));
        }
        Ok(())
    }

    fn check_tree(&self, tree: &UnfoldTree) -> Result<()> {
        self.check_feature_width(tree.feature_width())?;
        if tree.depth_limit() != self.depth() {
            return Err(Error::dim(format!(
                "tree unfolded to depth {}, model depth is {}",
                tree.depth_limit(),
                self.depth()
            )));
        }
        Ok(())
    }

    /// Bottom-up pass. Returns the root summary `f(root)` and the per-node
    /// activations needed by [`backward`](Self::backward).
    pub fn forward(&self, tree: &UnfoldTree) -> Result<(Vec<f64>, TreeActivations)> {
        self.check_tree(tree)?;
        let depth = self.depth();
        let mut entries: Vec<Option<Activation>> = vec![None; tree.len()];
        // Children always carry larger indices than their parent.
        for v in (0..tree.len()).rev() {
            let node = tree.node(v);
            if node.depth >= depth {
                continue;
            }
            let xs: Vec<Vec<f64>> = node
                .children
                .iter()
                .map(|&c| {
                    let mut x = tree.edge_features(c).to_vec();
                    if node.depth + 1 < depth {
                        let below = entries[c].as_ref().expect("child computed first");
                        x.extend_from_slice(&below.output);
                    }
                    x
                })
                .collect();
            let (output, cache) = self.learners[node.depth].forward(xs)?;
            entries[v] = Some(Activation { output, cache });
        }
        let root = entries[UnfoldTree::ROOT]
            .as_ref()
            .expect("root is below the depth limit")
            .output
            .clone();
        Ok((root, TreeActivations { entries }))
    }

    /// Top-down pass from `dy = ∂L/∂f(root)`. Edge-feature adjoints are
    /// dropped; only the slices belonging to child summaries continue down.
    pub fn backward(&self, tree: &UnfoldTree, acts: &TreeActivations, dy: &[f64]) -> Result<LevelGrads> {
        self.check_tree(tree)?;
        if acts.entries.len() != tree.len() {
            return Err(Error::dim("activations were computed on a different tree"));
        }
        if dy.len() != self.output_width() {
            return Err(Error::dim(format!(
                "output adjoint has width {}, expected {}",
                dy.len(),
                self.output_width()
            )));
        }
        let depth = self.depth();
        let m = self.feature_width;
        let mut sums: Vec<LstmGrads> = self
            .learners
            .iter()
            .map(|l| LstmGrads::zeros(l.shape()))
            .collect();
        let mut instances = vec![0usize; depth];
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; tree.len()];
        adjoints[UnfoldTree::ROOT] = Some(dy.to_vec());
        for v in 0..tree.len() {
            let node = tree.node(v);
            if node.depth >= depth {
                continue;
            }
            let Some(adj) = adjoints[v].take() else {
                return Err(Error::invalid("tree node unreachable from the root"));
            };
            let act = acts.entries[v]
                .as_ref()
                .ok_or_else(|| Error::dim("missing activation for internal tree node"))?;
            if act.cache.len() != node.children.len() {
                return Err(Error::dim("activation sequence length differs from child count"));
            }
            let level = node.depth;
            let dxs = self.learners[level].backward_into(&act.cache, &adj, &mut sums[level])?;
            instances[level] += 1;
            if level + 1 < depth {
                for (&c, dx) in node.children.iter().zip(dxs) {
                    adjoints[c] = Some(dx[m..].to_vec());
                }
            }
        }
        Ok(LevelGrads { sums, instances })
    }

    pub fn predict(&self, tree: &UnfoldTree) -> Result<Prediction> {
        if self.output != OutputMode::Classification {
            return Err(Error::invalid("class prediction needs a classification model"));
        }
        let (y, _) = self.forward(tree)?;
        let probs = softmax(&y);
        Ok(Prediction {
            class: argmax(&probs),
            probs,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Activation {
    output: Vec<f64>,
    cache: LstmCache,
}

/// Per tree node: the summary `f(v)` and the cache of the learner instance
/// that produced it. Present exactly for nodes above the depth limit.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeActivations {
    entries: Vec<Option<Activation>>,
}

impl TreeActivations {
    pub fn summary(&self, node: usize) -> Option<&[f64]> {
        self.entries[node].as_ref().map(|a| a.output.as_slice())
    }

    pub fn cache(&self, node: usize) -> Option<&LstmCache> {
        self.entries[node].as_ref().map(|a| &a.cache)
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-level parameter gradients of one tree: summed over the instances of
/// each level, with the instance counts kept for averaging.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGrads {
    sums: Vec<LstmGrads>,
    instances: Vec<usize>,
}

impl LevelGrads {
    /// `∂L/∂w_d` for level `d` (1-based).
    pub fn total(&self, level: usize) -> &LstmGrads {
        &self.sums[level - 1]
    }

    /// Number of `L_d` instances in the tree.
    pub fn instances(&self, level: usize) -> usize {
        self.instances[level - 1]
    }

    /// Per-instance mean gradient of level `d` (1-based).
    pub fn mean(&self, level: usize) -> LstmGrads {
        let mut g = self.sums[level - 1].clone();
        let n = self.instances[level - 1];
        if n > 1 {
            g.scale(1.0 / n as f64);
        }
        g
    }

    pub fn depth(&self) -> usize {
        self.sums.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

pub fn softmax(y: &[f64]) -> Vec<f64> {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss of output `y` and its gradient `∂L/∂y`.
///
/// Classification uses softmax cross-entropy, regression half the squared
/// error.
pub fn loss(y: &[f64], target: &Target, mode: OutputMode) -> Result<(f64, Vec<f64>)> {
    match (mode, target) {
        (OutputMode::Classification, Target::Class(label)) => {
            let label = *label;
            if label >= y.len() {
                return Err(Error::invalid(format!(
                    "class label {label} out of range for {} outputs",
                    y.len()
                )));
            }
            let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let mut dy = softmax(y);
            dy[label] -= 1.0;
            Ok((log_z - y[label], dy))
        }
        (OutputMode::Regression, Target::Values(t)) => {
            if t.len() != y.len() {
                return Err(Error::dim(format!(
                    "regression target has width {}, output {}",
                    t.len(),
                    y.len()
                )));
            }
            let dy: Vec<f64> = y.iter().zip(t).map(|(a, b)| a - b).collect();
            let l = 0.5 * dy.iter().map(|d| d * d).sum::<f64>();
            Ok((l, dy))
        }
        _ => Err(Error::invalid("target kind does not match the model output mode")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub examples: Vec<(NodeId, Target)>,
    /// Class count for classification data.
    pub classes: Option<usize>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self, graph: &Graph) -> Result<()> {
        for (root, target) in &self.examples {
            if root.0 >= graph.node_count() {
                return Err(Error::UnknownNode(format!("#{}", root.0)));
            }
            if let (Target::Class(c), Some(n)) = (target, self.classes) {
                if *c >= n {
                    return Err(Error::invalid(format!("label {c} outside [0, {n})")));
                }
            }
        }
        Ok(())
    }

    pub fn class_labels(&self) -> Option<Vec<usize>> {
        self.examples
            .iter()
            .map(|(_, t)| match t {
                Target::Class(c) => Some(*c),
                Target::Values(_) => None,
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            classes: self.classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitOrder {
    /// Dataset order, every epoch.
    #[default]
    Loop,
    /// `len` roots drawn uniformly with replacement per epoch.
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub unfolding: Unfolding,
    pub child_order: ChildOrder,
    pub epochs: usize,
    /// Evaluate every this many epochs; 0 disables evaluation.
    pub eval_every: usize,
    pub visit_order: VisitOrder,
    pub rho: f64,
    pub epsilon: f64,
    /// Step multiplier per level, `[α_1, …, α_D]`; missing entries are 1.
    pub level_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let ada = AdaDeltaConfig::default();
        TrainConfig {
            unfolding: Unfolding::Asymmetric,
            child_order: ChildOrder::RandomShuffle,
            epochs: 20,
            eval_every: 1,
            visit_order: VisitOrder::Loop,
            rho: ada.rho,
            epsilon: ada.epsilon,
            level_scales: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adadelta(&self, level: usize) -> AdaDeltaConfig {
        AdaDeltaConfig {
            rho: self.rho,
            epsilon: self.epsilon,
            scale: self.level_scales.get(level - 1).copied().unwrap_or(1.0),
        }
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.level_scales.len() > depth {
            return Err(Error::invalid(format!(
                "{} level scales for a depth-{depth} model",
                self.level_scales.len()
            )));
        }
        for d in 1..=depth {
            self.adadelta(d).validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval_accuracy: Option<f64>,
    pub eval_avg_recall: Option<f64>,
}

/// Unfolds at `root` and orders children for prediction.
pub fn prediction_tree(
    graph: &Graph,
    root: NodeId,
    depth: usize,
    unfolding: Unfolding,
    order: &ChildOrder,
) -> Result<UnfoldTree> {
    let mut tree = graph.unfold(root, depth, unfolding)?;
    let order = order.for_prediction();
    if order != ChildOrder::AsLoaded {
        // Deterministic policies never draw from the stream.
        tree.order_children(&order, &mut seed::stream(0, seed::SHUFFLE))?;
    }
    Ok(tree)
}

/// Class prediction for one root with deterministic child ordering.
pub fn predict_label(model: &MlslModel, graph: &Graph, root: NodeId, cfg: &TrainConfig) -> Result<Prediction> {
    let tree = prediction_tree(graph, root, model.depth(), cfg.unfolding, &cfg.child_order)?;
    model.predict(&tree)
}

/// Predictions for every root of `data`, evaluated in parallel.
pub fn predict_dataset(
    model: &MlslModel,
    graph: &Graph,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<Vec<Prediction>> {
    data.examples
        .par_iter()
        .map(|(root, _)| predict_label(model, graph, *root, cfg))
        .collect()
}

/// Owns a model during training together with its per-level optimizer
/// state and the shuffle and visit streams.
pub struct Trainer {
    model: MlslModel,
    cfg: TrainConfig,
    optimizers: Vec<AdaDelta>,
    shuffle_rng: Rng,
    visit_rng: Rng,
}

impl Trainer {
    pub fn new(model: MlslModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(model.depth())?;
        let optimizers = model
            .learners()
            .iter()
            .enumerate()
            .map(|(i, l)| AdaDelta::new(cfg.adadelta(i + 1), l.shape().param_count()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            shuffle_rng: seed::stream(cfg.seed, seed::SHUFFLE),
            visit_rng: seed::stream(cfg.seed, seed::VISIT),
            model,
            cfg,
            optimizers,
        })
    }

    pub fn model(&self) -> &MlslModel {
        &self.model
    }

    pub fn into_model(self) -> MlslModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn optimizers(&self) -> &[AdaDelta] {
        &self.optimizers
    }

    /// One update on one labeled root: unfold, order children, forward,
    /// loss, backward, one AdaDelta step per level. Returns the loss before
    /// the update.
    pub fn train_step(&mut self, graph: &Graph, root: NodeId, target: &Target) -> Result<f64> {
        let mut tree = graph.unfold(root, self.model.depth(), self.cfg.unfolding)?;
        tree.order_children(&self.cfg.child_order, &mut self.shuffle_rng)?;
        self.fit_tree(&tree, target)
    }

    pub fn fit_tree(&mut self, tree: &UnfoldTree, target: &Target) -> Result<f64> {
        let mode = self.model.output_mode();
        self.fit_tree_with(tree, |y| loss(y, target, mode))
    }

    /// Update on an already ordered tree with a caller-supplied loss that
    /// maps the output `y` to `(loss, ∂L/∂y)`.
    pub fn fit_tree_with<F>(&mut self, tree: &UnfoldTree, loss_fn: F) -> Result<f64>
    where
        F: FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let (y, acts) = self.model.forward(tree)?;
        let (l, dy) = loss_fn(&y)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("training loss {l}")));
        }
        let grads = self.model.backward(tree, &acts, &dy)?;
        for level in 1..=self.model.depth() {
            let g = grads.mean(level);
            self.optimizers[level - 1].step(&mut self.model.learners[level - 1], &g)?;
        }
        Ok(l)
    }

    /// Runs `cfg.epochs` epochs over `data`, evaluating on `eval` at the
    /// configured cadence and after the last epoch.
    pub fn train(
        &mut self,
        graph: &Graph,
        data: &LabeledDataset,
        eval: Option<&LabeledDataset>,
    ) -> Result<Vec<EpochRecord>> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        data.validate(graph)?;
        self.model.check_feature_width(graph.feature_width())?;
        let mut history = Vec::with_capacity(self.cfg.epochs);
        for epoch in 1..=self.cfg.epochs {
            let order: Vec<usize> = match self.cfg.visit_order {
                VisitOrder::Loop => (0..data.len()).collect(),
                VisitOrder::UniformRandom => {
                    use rand::Rng as _;
                    (0..data.len())
                        .map(|_| self.visit_rng.random_range(0..data.len()))
                        .collect()
                }
            };
            let mut total = 0.0;
            for &i in &order {
                let (root, target) = &data.examples[i];
                total += self.train_step(graph, *root, target)?;
            }
            let mean_loss = total / order.len() as f64;
            let due = self.cfg.eval_every > 0
                && (epoch % self.cfg.eval_every == 0 || epoch == self.cfg.epochs);
            let (eval_accuracy, eval_avg_recall) = match eval {
                Some(ev) if due && self.model.output_mode() == OutputMode::Classification => {
                    let (acc, rec) = self.evaluate(graph, ev)?;
                    (Some(acc), Some(rec))
                }
                _ => (None, None),
            };
            log::info!("epoch {epoch}: loss {mean_loss:.5} eval accuracy {eval_accuracy:?}");
            history.push(EpochRecord {
                epoch,
                mean_loss,
                eval_accuracy,
                eval_avg_recall,
            });
        }
        Ok(history)
    }

    /// Accuracy and average recall of the current model on `data`.
    pub fn evaluate(&self, graph: &Graph, data: &LabeledDataset) -> Result<(f64, f64)> {
        let preds = predict_dataset(&self.model, graph, data, &self.cfg)?;
        let truth = data
            .class_labels()
            .ok_or_else(|| Error::invalid("evaluation data is not class-labeled"))?;
        let pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
        let classes = data.classes.unwrap_or(self.model.output_width());
        Ok((
            metrics::accuracy(&truth, &pred)?,
            metrics::average_recall(&truth, &pred, classes)?,
        ))
    }
}

/// Trains `model` on `data` and returns it with the per-epoch history.
pub fn train(
    model: MlslModel,
    graph: &Graph,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    eval: Option<&LabeledDataset>,
) -> Result<(MlslModel, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let history = trainer.train(graph, data, eval)?;
    Ok((trainer.into_model(), history))
}
