//! Commands behind the `mlsl` binary. Each command validates its config
//! before touching the filesystem, writes its artifacts into the output
//! directory, and finishes with a `report.toml` that embeds the resolved
//! config, so `--config <out>/report.toml` reruns it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::baselines::{self, label_to_class};
use crate::config::{EvalSet, RunConfig};
use crate::datagen::{gen_spammer_hammer, split_items, SynthData};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Unfolding};
use crate::ingest;
use crate::metrics::ConfusionMatrix;
use crate::model::{self, LabeledDataset, MlslModel, OutputMode};

pub const REPORT_FILE: &str = "report.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MODEL_FILE: &str = "model.txt";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Majority,
    Kos,
    Em,
    Average,
    EmGrades,
    Proportional,
}

impl Baseline {
    pub const ALL: [Baseline; 6] = [
        Baseline::Majority,
        Baseline::Kos,
        Baseline::Em,
        Baseline::Average,
        Baseline::EmGrades,
        Baseline::Proportional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Majority => "majority",
            Baseline::Kos => "kos",
            Baseline::Em => "em",
            Baseline::Average => "avg",
            Baseline::EmGrades => "em_grades",
            Baseline::Proportional => "proportional",
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Baseline::ALL.iter().map(|b| b.name()).collect();
                Error::invalid(format!("unknown baseline {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Metrics of one run, in report order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub metrics: Vec<(String, f64)>,
}

impl Outcome {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

/// Graph and labels of a run, before any edge reversal.
pub struct Data {
    pub graph: Graph,
    pub labels: LabeledDataset,
    pub synth: Option<SynthData>,
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    match &cfg.dataset {
        None => {
            let synth = gen_spammer_hammer(&cfg.synth)?;
            Ok(Data {
                graph: synth.graph.clone(),
                labels: synth.dataset.clone(),
                synth: Some(synth),
            })
        }
        Some(ds) => {
            let mut graph = ingest::load_graph(&ds.edges)?;
            if ds.standardize {
                graph = ingest::standardize(&graph).0;
            }
            let labels = ingest::load_labels(&ds.labels, &graph, ds.classes)?;
            Ok(Data {
                graph,
                labels,
                synth: None,
            })
        }
    }
}

/// The graph the learners unfold.
pub fn learner_graph(cfg: &RunConfig, graph: &Graph) -> Graph {
    if cfg.model.reverse_edges {
        graph.symmetrized()
    } else {
        graph.clone()
    }
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(dir.to_owned(), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(path.to_owned(), e))
}

pub fn write_report(dir: &Path, command: &str, cfg: &RunConfig, started: Instant, outcome: &Outcome) -> Result<()> {
    let mut metrics = toml::Table::new();
    for (k, v) in &outcome.metrics {
        metrics.insert(k.clone(), toml::Value::Float(*v));
    }
    let mut run = toml::Table::new();
    run.insert("command".into(), command.into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("seed".into(), toml::Value::Integer(cfg.seed as i64));
    run.insert("wall_time_s".into(), started.elapsed().as_secs_f64().into());
    run.insert("metrics".into(), toml::Value::Table(metrics));
    let mut doc = toml::Table::new();
    doc.insert("run".into(), toml::Value::Table(run));
    let config = toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    doc.insert("config".into(), config);
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join(REPORT_FILE), &text)
}

/// Accuracy, average recall, per-class F1, and the confusion matrix as
/// `metric,class,predicted,value` rows.
pub fn metrics_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("metric,class,predicted,value\n");
    let acc = (0..cm.classes()).map(|c| cm.get(c, c)).sum::<u64>() as f64 / cm.total() as f64;
    let _ = writeln!(out, "accuracy,,,{acc}");
    let _ = writeln!(out, "average_recall,,,{}", cm.average_recall());
    for c in 0..cm.classes() {
        let _ = writeln!(out, "f1,{c},,{}", cm.f1(c));
    }
    for t in 0..cm.classes() {
        for p in 0..cm.classes() {
            let _ = writeln!(out, "confusion,{t},{p},{}", cm.get(t, p));
        }
    }
    out
}

fn classification_outcome(cm: &ConfusionMatrix) -> Outcome {
    let acc = (0..cm.classes()).map(|c| cm.get(c, c)).sum::<u64>() as f64 / cm.total() as f64;
    Outcome {
        metrics: vec![
            ("accuracy".into(), acc),
            ("average_recall".into(), cm.average_recall()),
        ],
    }
}

fn predictions_csv(graph: &Graph, roots: &[NodeId], truth: &[usize], pred: &[usize]) -> String {
    let mut out = String::from("node,label,predicted\n");
    for ((r, t), p) in roots.iter().zip(truth).zip(pred) {
        let _ = writeln!(out, "{},{t},{p}", graph.name(*r));
    }
    out
}

fn class_labels(ds: &LabeledDataset) -> Result<Vec<usize>> {
    ds.class_labels()
        .ok_or_else(|| Error::invalid("evaluation needs class labels"))
}

/// Writes `edges.csv`, `labels.csv` and the `truth.csv` sidecar.
pub fn synth(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    cfg.validate()?;
    if cfg.dataset.is_some() {
        return Err(Error::Config("synth generates data; remove the [dataset] table".into()));
    }
    let data = gen_spammer_hammer(&cfg.synth)?;
    let dir = output_dir(cfg);
    prepare_dir(&dir)?;
    ingest::save_graph(&data.graph, &dir.join("edges.csv"))?;
    ingest::save_labels(&data.dataset, &data.graph, &dir.join("labels.csv"))?;
    ingest::save_truth(&data.truth, &dir.join("truth.csv"))?;
    let reliable = data.truth.reliable.iter().filter(|&&r| r).count();
    let outcome = Outcome {
        metrics: vec![
            ("nodes".into(), data.graph.node_count() as f64),
            ("edges".into(), data.graph.edge_count() as f64),
            (
                "reliable_fraction".into(),
                reliable as f64 / data.truth.reliable.len() as f64,
            ),
        ],
    };
    write_report(&dir, "synth", cfg, started, &outcome)?;
    Ok(outcome)
}

/// Trains a model on the training split and scores it on the rest.
pub fn train(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    cfg.validate()?;
    let data = load_data(cfg)?;
    let (train_set, test_set) = split_items(&data.labels, cfg.split.n_train, cfg.seed)?;
    let graph = learner_graph(cfg, &data.graph);
    let init = MlslModel::new(
        graph.feature_width(),
        &cfg.model.level_sizes,
        cfg.model.output,
        cfg.seed,
    )?;
    let eval = (cfg.model.output == OutputMode::Classification).then_some(&test_set);
    let (trained, history) = model::train(init, &graph, &train_set, &cfg.train, eval)?;

    let dir = output_dir(cfg);
    prepare_dir(&dir)?;
    ingest::save_model(&trained, &dir.join(MODEL_FILE))?;
    let mut hist = String::from("epoch,mean_loss,eval_accuracy,eval_avg_recall\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &history {
        let _ = writeln!(
            hist,
            "{},{},{},{}",
            r.epoch,
            r.mean_loss,
            opt(r.eval_accuracy),
            opt(r.eval_avg_recall)
        );
    }
    write_file(&dir.join(HISTORY_FILE), &hist)?;

    let last = history.last().expect("at least one epoch");
    let mut outcome = Outcome {
        metrics: vec![("final_loss".into(), last.mean_loss)],
    };
    if let (Some(a), Some(r)) = (last.eval_accuracy, last.eval_avg_recall) {
        outcome.metrics.push(("test_accuracy".into(), a));
        outcome.metrics.push(("test_average_recall".into(), r));
    }
    write_report(&dir, "train", cfg, started, &outcome)?;
    Ok(outcome)
}

/// Scores a saved model on the test split of the configured data.
pub fn eval(cfg: &RunConfig, model_path: &Path) -> Result<Outcome> {
    let started = Instant::now();
    cfg.validate()?;
    let model = ingest::load_model(model_path)?;
    if model.output_mode() != OutputMode::Classification {
        return Err(Error::invalid("eval scores classification models only"));
    }
    let data = load_data(cfg)?;
    let (_, test_set) = split_items(&data.labels, cfg.split.n_train, cfg.seed)?;
    let graph = learner_graph(cfg, &data.graph);
    model.check_feature_width(graph.feature_width())?;
    let preds = model::predict_dataset(&model, &graph, &test_set, &cfg.train)?;
    let truth = class_labels(&test_set)?;
    let pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let classes = test_set.classes.unwrap_or(model.output_width()).max(model.output_width());
    let cm = ConfusionMatrix::new(&truth, &pred, classes)?;

    let dir = output_dir(cfg);
    prepare_dir(&dir)?;
    write_file(&dir.join(METRICS_FILE), &metrics_csv(&cm))?;
    let roots: Vec<NodeId> = test_set.examples.iter().map(|(n, _)| *n).collect();
    write_file(
        &dir.join(PREDICTIONS_FILE),
        &predictions_csv(&data.graph, &roots, &truth, &pred),
    )?;
    let outcome = classification_outcome(&cm);
    write_report(&dir, "eval", cfg, started, &outcome)?;
    Ok(outcome)
}

fn item_indices(roots: &[NodeId], index: &HashMap<NodeId, usize>, graph: &Graph) -> Result<Vec<usize>> {
    roots
        .iter()
        .map(|r| {
            index.get(r).copied().ok_or_else(|| {
                Error::invalid(format!("labeled node {} has no outgoing votes", graph.name(*r)))
            })
        })
        .collect()
}

/// Runs one baseline and scores it against the labels.
pub fn baseline(cfg: &RunConfig, which: Baseline) -> Result<Outcome> {
    let started = Instant::now();
    cfg.validate()?;
    let data = load_data(cfg)?;
    let scored = match (which, cfg.baseline.evaluate_on) {
        (Baseline::Proportional, _) | (_, EvalSet::Test) => {
            split_items(&data.labels, cfg.split.n_train, cfg.seed)?.1
        }
        (_, EvalSet::All) => data.labels.clone(),
    };
    let roots: Vec<NodeId> = scored.examples.iter().map(|(n, _)| *n).collect();
    let truth = class_labels(&scored)?;
    let b = &cfg.baseline;

    let (pred, classes): (Vec<usize>, usize) = match which {
        Baseline::Majority | Baseline::Kos | Baseline::Em => {
            let (votes, bip) = ingest::votes_from_graph(&data.graph)?;
            let items = item_indices(&roots, &bip.item_index, &data.graph)?;
            let labels = match which {
                Baseline::Majority => baselines::majority_vote(&votes),
                Baseline::Kos => baselines::kos(&votes, b.kos_iterations, cfg.seed)?,
                _ => baselines::em_boolean(&votes, &b.em)?.labels,
            };
            (items.iter().map(|&i| label_to_class(labels[i])).collect(), 2)
        }
        Baseline::Average | Baseline::EmGrades => {
            let (grades, bip) = ingest::grades_from_graph(&data.graph)?;
            let items = item_indices(&roots, &bip.item_index, &data.graph)?;
            let est = if which == Baseline::Average {
                baselines::average_grade(&grades)?
            } else {
                baselines::em_grades(&grades, b.grade_iterations, b.var_floor)?.rounded()
            };
            (items.iter().map(|&i| est[i]).collect(), 11)
        }
        Baseline::Proportional => {
            let (train_set, _) = split_items(&data.labels, cfg.split.n_train, cfg.seed)?;
            let train_labels = class_labels(&train_set)?;
            let pred = baselines::proportional_guess(&train_labels, roots.len(), cfg.seed)?;
            (pred, 0)
        }
    };
    let classes = classes
        .max(scored.classes.unwrap_or(0))
        .max(truth.iter().chain(&pred).max().map_or(0, |m| m + 1));
    let cm = ConfusionMatrix::new(&truth, &pred, classes)?;

    let dir = output_dir(cfg);
    prepare_dir(&dir)?;
    write_file(&dir.join(METRICS_FILE), &metrics_csv(&cm))?;
    write_file(
        &dir.join(PREDICTIONS_FILE),
        &predictions_csv(&data.graph, &roots, &truth, &pred),
    )?;
    let outcome = classification_outcome(&cm);
    write_report(&dir, &format!("baseline {}", which.name()), cfg, started, &outcome)?;
    Ok(outcome)
}

/// Text dump of the unfolding of `root` in the edge list at `graph_path`.
pub fn unfold(graph_path: &Path, root: &str, depth: usize, mode: Unfolding) -> Result<String> {
    let graph = ingest::load_graph(graph_path)?;
    let root = graph.require_node(root)?;
    Ok(graph.unfold(root, depth, mode)?.render(&graph))
}

/// Reads `metric,class,predicted,value` rows back into `(metric, class,
/// predicted, value)` tuples.
pub fn read_metrics(path: &Path) -> Result<Vec<(String, String, String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(path.to_owned(), e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            let value = cols.get(3).and_then(|v| v.parse().ok());
            match (cols.len(), value) {
                (4, Some(v)) => Ok((cols[0].to_owned(), cols[1].to_owned(), cols[2].to_owned(), v)),
                _ => Err(Error::Parse {
                    path: path.to_owned(),
                    line: i as u64 + 1,
                    msg: format!("bad metrics row {line:?}"),
                }),
            }
        })
        .collect()
}
